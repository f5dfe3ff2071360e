#include "veil/service.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "veil/base64.hpp"
#include "veil/imageio.hpp"

namespace veil::service {

namespace {

using nlohmann::json;

Tensor image_from_b64(const json& body, const char* field) {
  if (!body.contains(field) || !body.at(field).is_string())
    throw ProtocolError(std::string("missing image field: ") + field);
  const std::vector<std::uint8_t> bytes = base64_decode(body.at(field).get<std::string>());
  return img::decode_png(bytes.data(), bytes.size());
}

std::string image_to_b64(const Tensor& image) { return base64_encode(img::encode_png(image)); }

void write_error(httplib::Response& res, int status, const std::string& code,
                 const std::string& message) {
  json j;
  j["error"] = code;
  j["message"] = message;
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

bool version_ok(const httplib::Request& req, httplib::Response& res) {
  if (req.has_header("x-protocol-version") &&
      req.get_header_value("x-protocol-version") != std::to_string(kProtocolVersion)) {
    write_error(res, 400, "protocol_version_mismatch",
                "service speaks protocol version " + std::to_string(kProtocolVersion));
    return false;
  }
  return true;
}

}  // namespace

double confidence_from_distance(double d, const Calibration& cal) {
  if (d < 0.0) throw ArgumentError("confidence_from_distance: negative distance");
  if (cal.d0 <= 0.0 || cal.d_max <= cal.d0) throw ArgumentError("bad calibration knots");
  double conf;
  if (d <= cal.d0)
    conf = 1.0 - 0.5 * d / cal.d0;
  else if (d < cal.d_max)
    conf = 0.5 * (cal.d_max - d) / (cal.d_max - cal.d0);
  else
    conf = 0.0;
  return std::clamp(conf, 0.0, 1.0);
}

Calibration calibrate(const nn::EmbeddingNetwork& net,
                      const std::vector<std::pair<Tensor, Tensor>>& genuine_pairs,
                      const std::vector<std::pair<Tensor, Tensor>>& impostor_pairs) {
  if (genuine_pairs.empty() || impostor_pairs.empty())
    throw ArgumentError("calibrate: both pair lists must be nonempty");
  double genuine_mean = 0.0;
  for (const auto& [a, b] : genuine_pairs) genuine_mean += embed::pair_distance(net, a, b);
  genuine_mean /= static_cast<double>(genuine_pairs.size());

  std::vector<double> imp;
  imp.reserve(impostor_pairs.size());
  for (const auto& [a, b] : impostor_pairs) imp.push_back(embed::pair_distance(net, a, b));
  double impostor_mean = 0.0;
  for (double d : imp) impostor_mean += d;
  impostor_mean /= static_cast<double>(imp.size());

  std::sort(imp.begin(), imp.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(imp.size())));  // nearest-rank percentile
  Calibration cal;
  cal.d0 = 0.5 * (genuine_mean + impostor_mean);
  cal.d_max = imp[std::max<std::size_t>(rank, 1) - 1];
  if (cal.d0 <= 0.0 || cal.d0 >= cal.d_max)
    throw CalibrationError("genuine and impostor populations are not separable");
  return cal;
}

MatchVerdict local_verify(const nn::EmbeddingNetwork& net, const Calibration& cal,
                          const Tensor& a, const Tensor& b) {
  MatchVerdict v;
  v.confidence = confidence_from_distance(embed::pair_distance(net, a, b), cal);
  v.threshold = kThreshold;
  v.matched = v.confidence >= kThreshold;
  return v;
}

struct VictimService::Impl {
  nn::EmbeddingNetwork net;
  embed::ReferenceSet gallery;
  std::vector<std::string> label_names;
  embed::EmbeddedGallery embedded;
  Calibration cal;
  httplib::Server server;
  std::thread worker;
};

VictimService::VictimService(nn::EmbeddingNetwork net, embed::ReferenceSet gallery,
                             std::vector<std::string> label_names, Calibration cal)
    : impl_(std::make_unique<Impl>()) {
  impl_->net = std::move(net);
  impl_->gallery = std::move(gallery);
  impl_->label_names = std::move(label_names);
  impl_->cal = cal;
  impl_->embedded = embed::EmbeddedGallery::build(impl_->net, impl_->gallery);

  auto& srv = impl_->server;
  srv.Post("/v1/verify", [this](const httplib::Request& req, httplib::Response& res) {
    if (!version_ok(req, res)) return;
    queries_.fetch_add(1);
    try {
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded()) throw ProtocolError("request body is not valid JSON");
      const Tensor a = image_from_b64(body, "image_a");
      const Tensor b = image_from_b64(body, "image_b");
      const MatchVerdict v = local_verify(impl_->net, impl_->cal, a, b);
      json out;
      out["confidence"] = v.confidence;
      out["threshold"] = v.threshold;
      out["matched"] = v.matched;
      res.set_content(out.dump(), "application/json");
    } catch (const ProtocolError& e) {
      write_error(res, 400, "bad_request", e.what());
    } catch (const Error& e) {
      write_error(res, 400, "bad_image", e.what());
    } catch (const std::exception& e) {
      write_error(res, 500, "internal", e.what());
    }
  });

  srv.Post("/v1/recognize", [this](const httplib::Request& req, httplib::Response& res) {
    if (!version_ok(req, res)) return;
    queries_.fetch_add(1);
    try {
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded()) throw ProtocolError("request body is not valid JSON");
      const Tensor image = image_from_b64(body, "image");
      int top_n = 1;
      if (body.contains("top_n")) {
        if (!body.at("top_n").is_number_integer()) throw ProtocolError("top_n must be an integer");
        top_n = body.at("top_n").get<int>();
      }
      if (top_n < 1 || static_cast<std::size_t>(top_n) > impl_->embedded.labels.size())
        throw ProtocolError("top_n out of range");
      const Tensor e = impl_->net.forward(image);
      json candidates = json::array();
      for (embed::LabelId y : embed::top_n(impl_->net, impl_->embedded, image, top_n)) {
        double sq = 0.0;
        const Tensor& c = impl_->embedded.centroid_of(y);
        for (std::size_t k = 0; k < e.data.size(); ++k) {
          const double d = e.data[k] - c.data[k];
          sq += d * d;
        }
        json cand;
        cand["label"] = impl_->label_names.at(static_cast<std::size_t>(y));
        cand["confidence"] = confidence_from_distance(std::sqrt(sq), impl_->cal);
        candidates.push_back(cand);
      }
      json out;
      out["candidates"] = candidates;
      res.set_content(out.dump(), "application/json");
    } catch (const ProtocolError& e) {
      write_error(res, 400, "bad_request", e.what());
    } catch (const Error& e) {
      write_error(res, 400, "bad_image", e.what());
    } catch (const std::exception& e) {
      write_error(res, 500, "internal", e.what());
    }
  });

  srv.Get("/v1/health", [this](const httplib::Request& req, httplib::Response& res) {
    if (!version_ok(req, res)) return;
    json out;
    out["status"] = "ok";
    out["queries_served"] = queries_.load();
    res.set_content(out.dump(), "application/json");
  });
}

VictimService::~VictimService() { stop(); }

int VictimService::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  int bound = port;
  if (port == 0) {
    bound = srv.bind_to_any_port(host);
    if (bound <= 0) throw ProtocolError("service failed to bind to any port");
  } else {
    if (!srv.bind_to_port(host, port))
      throw ProtocolError("service failed to bind to port " + std::to_string(port));
  }
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void VictimService::stop() {
  if (impl_ && impl_->worker.joinable()) {
    impl_->server.stop();
    impl_->worker.join();
  }
}

struct VerifyClient::Impl {
  httplib::Client client;
  explicit Impl(const std::string& url) : client(url) {
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(60, 0);
  }
};

VerifyClient::VerifyClient(std::string base_url)
    : impl_(std::make_unique<Impl>(base_url)) {}

VerifyClient::~VerifyClient() = default;

namespace {

json post_json(httplib::Client& client, const std::string& path, const json& body) {
  httplib::Headers headers = {{"x-protocol-version", std::to_string(kProtocolVersion)}};
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) throw ProtocolError("transport failure talking to service: " + path);
  const json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded()) throw ProtocolError("service returned non-JSON body");
  if (res->status != 200) {
    const std::string code = parsed.contains("error") ? parsed["error"].get<std::string>()
                                                      : "http_" + std::to_string(res->status);
    throw ProtocolError("service error: " + code);
  }
  return parsed;
}

}  // namespace

MatchVerdict VerifyClient::verify(const Tensor& image_a, const Tensor& image_b) {
  json body;
  body["image_a"] = image_to_b64(image_a);
  body["image_b"] = image_to_b64(image_b);
  const json out = post_json(impl_->client, "/v1/verify", body);
  MatchVerdict v;
  try {
    v.confidence = out.at("confidence").get<double>();
    v.threshold = out.at("threshold").get<double>();
    v.matched = out.at("matched").get<bool>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed verify response: ") + e.what());
  }
  if (v.confidence < 0.0 || v.confidence > 1.0 || v.matched != (v.confidence >= v.threshold))
    throw ProtocolError("verify response violates verdict invariants");
  return v;
}

std::vector<std::pair<std::string, double>> VerifyClient::recognize(const Tensor& image,
                                                                    int top_n) {
  json body;
  body["image"] = image_to_b64(image);
  body["top_n"] = top_n;
  const json out = post_json(impl_->client, "/v1/recognize", body);
  std::vector<std::pair<std::string, double>> candidates;
  try {
    for (const json& c : out.at("candidates"))
      candidates.emplace_back(c.at("label").get<std::string>(),
                              c.at("confidence").get<double>());
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed recognize response: ") + e.what());
  }
  return candidates;
}

std::uint64_t VerifyClient::health() {
  httplib::Headers headers = {{"x-protocol-version", std::to_string(kProtocolVersion)}};
  auto res = impl_->client.Get("/v1/health", headers);
  if (!res) throw ProtocolError("transport failure talking to service: /v1/health");
  const json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded() || res->status != 200 || parsed.value("status", "") != "ok")
    throw ProtocolError("health check failed");
  return parsed.at("queries_served").get<std::uint64_t>();
}

}  // namespace veil::service
