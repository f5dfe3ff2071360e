#pragma once

#include <string>

#include "veil/embedding.hpp"

namespace veil::embed {

// Dataset directory layout: one subdirectory per label holding PPM/PNG
// images, plus manifest.json mapping label name -> relative paths. Ids are
// assigned by ascending label-name order.
void save_dataset(const std::string& dir, const Dataset& ds, const std::string& image_ext = "ppm");
Dataset load_dataset(const std::string& manifest_path);

}  // namespace veil::embed
