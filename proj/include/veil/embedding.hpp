#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "veil/net.hpp"
#include "veil/tensor.hpp"

namespace veil::embed {

using LabelId = int;

struct LabeledImage {
  Tensor pixels;  // (H,W,C), entries in [0,1]
  LabelId label = -1;
};

// Labeled gallery used at inference time, distinct from training data.
class ReferenceSet {
 public:
  ReferenceSet() = default;
  explicit ReferenceSet(std::vector<LabeledImage> items);

  void add(LabeledImage item);

  const std::vector<LabeledImage>& items() const { return items_; }
  std::vector<LabelId> labels() const;  // ascending
  std::size_t label_count() const { return index_.size(); }
  bool has_label(LabelId y) const { return index_.count(y) != 0; }
  const std::vector<std::size_t>& members(LabelId y) const;  // throws LookupError

 private:
  std::vector<LabeledImage> items_;
  std::map<LabelId, std::vector<std::size_t>> index_;
};

// Labeled images plus the id -> name mapping used by file formats and the
// wire protocol. Ids are assigned by ascending name order.
struct Dataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> label_names;

  LabelId id_of(const std::string& name) const;  // throws LookupError
  const std::string& name_of(LabelId id) const;
};

struct TrainConfig {
  enum class Loss { Triplet, Contrastive };
  Loss loss = Loss::Triplet;
  double margin = 0.5;  // gamma, squared-embedding-distance units
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean loss over each epoch's stream
};

// Losses over labeled samples (gamma > 0).
double contrastive_loss(const nn::EmbeddingNetwork& net, const LabeledImage& a,
                        const LabeledImage& b, double gamma);
double triplet_loss(const nn::EmbeddingNetwork& net, const LabeledImage& anchor,
                    const LabeledImage& positive, const LabeledImage& negative, double gamma);

// Plain SGD with fixed-seed shuffling and uniform random pair/triplet mining.
nn::EmbeddingNetwork train(nn::EmbeddingNetwork net, const std::vector<LabeledImage>& data,
                           const TrainConfig& cfg, TrainReport* report = nullptr);

// Per-label mean embedding and nearest-centroid inference.
Tensor centroid(const nn::EmbeddingNetwork& net, const ReferenceSet& A, LabelId y);
LabelId predict(const nn::EmbeddingNetwork& net, const ReferenceSet& A, const Tensor& x);
std::vector<LabelId> top_n(const nn::EmbeddingNetwork& net, const ReferenceSet& A,
                           const Tensor& x, int n);
double pair_distance(const nn::EmbeddingNetwork& net, const Tensor& a, const Tensor& b);

// Gallery embedded once under a frozen net; the attack loops and the sweep
// evaluators use this to avoid re-embedding per query.
struct EmbeddedGallery {
  std::vector<LabelId> labels;  // ascending
  std::map<LabelId, std::vector<Tensor>> member_embeddings;
  std::map<LabelId, Tensor> centroids;

  static EmbeddedGallery build(const nn::EmbeddingNetwork& net, const ReferenceSet& A);
  const std::vector<Tensor>& members(LabelId y) const;  // throws LookupError
  const Tensor& centroid_of(LabelId y) const;
};

LabelId predict(const nn::EmbeddingNetwork& net, const EmbeddedGallery& g, const Tensor& x);
std::vector<LabelId> top_n(const nn::EmbeddingNetwork& net, const EmbeddedGallery& g,
                           const Tensor& x, int n);

}  // namespace veil::embed
