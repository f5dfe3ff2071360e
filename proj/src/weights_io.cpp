#include "veil/weights_io.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace veil::nn {

namespace {

using nlohmann::json;

constexpr const char* kMagic = "VEILW1";
constexpr int kFormatVersion = 1;

json layer_to_json(const LayerPlan& p) {
  json j;
  j["kind"] = layer_kind_name(p.spec.kind);
  switch (p.spec.kind) {
    case LayerKind::Dense:
      j["units"] = p.spec.units;
      break;
    case LayerKind::Conv2d:
      j["out_channels"] = p.spec.out_channels;
      j["kernel"] = p.spec.kernel;
      j["stride"] = p.spec.stride;
      break;
    default:
      break;
  }
  if (p.weight_count > 0) {
    j["weight_byte_offset"] = p.weight_offset * 4;
    j["weight_count"] = p.weight_count;
    j["bias_byte_offset"] = p.bias_offset * 4;
    j["bias_count"] = p.bias_count;
  }
  j["in_shape"] = p.in_shape;
  j["out_shape"] = p.out_shape;
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  switch (s.kind) {
    case LayerKind::Dense:
      s.units = j.at("units").get<int>();
      break;
    case LayerKind::Conv2d:
      s.out_channels = j.at("out_channels").get<int>();
      s.kernel = j.at("kernel").get<int>();
      s.stride = j.at("stride").get<int>();
      break;
    default:
      break;
  }
  return s;
}

}  // namespace

void save_weights(const std::string& path, const EmbeddingNetwork& net) {
  json header;
  header["format_version"] = kFormatVersion;
  header["dtype"] = "float32_le";
  header["input_shape"] = net.input_shape();
  header["embedding_dim"] = net.embedding_dim();
  header["parameter_count"] = net.parameter_count();
  header["layers"] = json::array();
  for (const LayerPlan& p : net.plan()) header["layers"].push_back(layer_to_json(p));

  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out << kMagic << " " << htext.size() << "\n" << htext;

  std::vector<float> blob(net.parameters().size());
  for (std::size_t i = 0; i < blob.size(); ++i)
    blob[i] = static_cast<float>(net.parameters()[i]);
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!out) throw IoError("short write: " + path);
}

EmbeddingNetwork load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string magic;
  std::size_t hlen = 0;
  in >> magic >> hlen;
  if (magic != kMagic) throw IoError("bad weight-file magic in " + path);
  in.get();  // newline
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("truncated weight-file header in " + path);

  json header = json::parse(htext);
  if (header.at("format_version").get<int>() != kFormatVersion)
    throw IoError("unsupported weight-file version in " + path);

  std::vector<int> input_shape = header.at("input_shape").get<std::vector<int>>();
  std::vector<LayerSpec> specs;
  for (const json& lj : header.at("layers")) specs.push_back(layer_from_json(lj));
  EmbeddingNetwork net(std::move(input_shape), std::move(specs));

  const auto pcount = header.at("parameter_count").get<std::int64_t>();
  if (pcount != net.parameter_count())
    throw IoError("weight-file parameter count does not match architecture");
  std::vector<float> blob(static_cast<std::size_t>(pcount));
  in.read(reinterpret_cast<char*>(blob.data()),
          static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!in) throw IoError("truncated weight blob in " + path);
  for (std::size_t i = 0; i < blob.size(); ++i)
    net.parameters()[i] = static_cast<double>(blob[i]);
  return net;
}

}  // namespace veil::nn
