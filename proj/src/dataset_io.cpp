#include "veil/dataset_io.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "veil/imageio.hpp"

namespace veil::embed {

namespace fs = std::filesystem;
using nlohmann::json;

void save_dataset(const std::string& dir, const Dataset& ds, const std::string& image_ext) {
  fs::create_directories(dir);
  std::map<std::string, std::vector<std::string>> manifest_labels;
  std::map<LabelId, int> counters;
  for (const LabeledImage& im : ds.images) {
    const std::string& name = ds.name_of(im.label);
    const int k = counters[im.label]++;
    char fname[64];
    std::snprintf(fname, sizeof(fname), "img_%04d.%s", k, image_ext.c_str());
    const std::string rel = name + "/" + fname;
    fs::create_directories(fs::path(dir) / name);
    img::write_image((fs::path(dir) / rel).string(), im.pixels);
    manifest_labels[name].push_back(rel);
  }
  json manifest;
  manifest["version"] = 1;
  manifest["labels"] = manifest_labels;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write dataset manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& manifest_path) {
  fs::path mpath(manifest_path);
  if (fs::is_directory(mpath)) mpath /= "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw IoError("cannot open dataset manifest: " + mpath.string());
  json manifest = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (manifest.is_discarded()) throw IoError("malformed dataset manifest: " + mpath.string());
  if (!manifest.contains("labels")) throw DatasetError("dataset manifest missing labels");

  Dataset ds;
  // std::map keeps names ascending, which fixes the id assignment.
  std::map<std::string, std::vector<std::string>> labels =
      manifest.at("labels").get<std::map<std::string, std::vector<std::string>>>();
  if (labels.empty()) throw DatasetError("dataset manifest lists no labels");
  const fs::path root = mpath.parent_path();
  for (const auto& [name, paths] : labels) {
    if (paths.empty()) throw DatasetError("label " + name + " has no images");
    const LabelId id = static_cast<LabelId>(ds.label_names.size());
    ds.label_names.push_back(name);
    for (const std::string& rel : paths)
      ds.images.push_back({img::read_image((root / rel).string()), id});
  }
  return ds;
}

}  // namespace veil::embed
