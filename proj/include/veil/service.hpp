#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "veil/embedding.hpp"
#include "veil/net.hpp"
#include "veil/tensor.hpp"

namespace veil::service {

// Fixed matching threshold; all confidences are normalized to [0,1].
constexpr double kThreshold = 0.5;
constexpr int kProtocolVersion = 1;

struct MatchVerdict {
  double confidence = 0.0;
  double threshold = kThreshold;
  bool matched = false;
};

// Maps an embedding distance to a confidence: 1 at d=0, 0.5 at d0, 0 at
// d >= d_max, linear between the knots.
struct Calibration {
  double d0 = 0.0;
  double d_max = 0.0;
};

double confidence_from_distance(double d, const Calibration& cal);

// d0 = midpoint of the mean genuine and mean impostor distances; d_max =
// 95th percentile (nearest rank) of impostor distances. Throws
// CalibrationError when the populations are inseparable (d0 >= d_max).
Calibration calibrate(const nn::EmbeddingNetwork& net,
                      const std::vector<std::pair<Tensor, Tensor>>& genuine_pairs,
                      const std::vector<std::pair<Tensor, Tensor>>& impostor_pairs);

MatchVerdict local_verify(const nn::EmbeddingNetwork& net, const Calibration& cal,
                          const Tensor& a, const Tensor& b);

// HTTP verification/recognition service. Wire protocol (JSON bodies, images
// as base64 PNG):
//   POST /v1/verify    {"image_a": .., "image_b": ..}
//                      -> {"confidence": f, "threshold": 0.5, "matched": b}
//   POST /v1/recognize {"image": .., "top_n": n}
//                      -> {"candidates": [{"label": s, "confidence": f}, ..]}
//   GET  /v1/health    -> {"status": "ok", "queries_served": n}
// Errors: {"error": code, "message": text} with a 4xx status. Responses
// carry confidences and verdicts only, never embeddings or distances.
class VictimService {
 public:
  VictimService(nn::EmbeddingNetwork net, embed::ReferenceSet gallery,
                std::vector<std::string> label_names, Calibration cal);
  ~VictimService();

  VictimService(const VictimService&) = delete;
  VictimService& operator=(const VictimService&) = delete;

  // Binds and serves on a background thread; returns the bound port
  // (pass port 0 to pick a free one).
  int start(const std::string& host, int port);
  void stop();
  std::uint64_t queries_served() const { return queries_.load(); }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::atomic<std::uint64_t> queries_{0};
};

// Client side of the wire protocol, used by the transfer harness.
class VerifyClient {
 public:
  explicit VerifyClient(std::string base_url);  // "http://host:port"
  ~VerifyClient();

  VerifyClient(const VerifyClient&) = delete;
  VerifyClient& operator=(const VerifyClient&) = delete;

  MatchVerdict verify(const Tensor& image_a, const Tensor& image_b);
  std::vector<std::pair<std::string, double>> recognize(const Tensor& image, int top_n);
  std::uint64_t health();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace veil::service
