#pragma once

#include <string>

#include "veil/net.hpp"

namespace veil::nn {

// Weight container: one "VEILW1 <json-bytes>\n" line, a JSON header carrying
// the architecture (layer kinds/dims, shapes, per-layer byte offsets into the
// blob, format version), then a little-endian float32 parameter blob.
// Parameters are stored in 32-bit and upcast to 64-bit on load.
void save_weights(const std::string& path, const EmbeddingNetwork& net);
EmbeddingNetwork load_weights(const std::string& path);

}  // namespace veil::nn
