#include "veil/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace veil::embed {

namespace {

double sq_embed_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s;
}

}  // namespace

ReferenceSet::ReferenceSet(std::vector<LabeledImage> items) {
  for (LabeledImage& it : items) add(std::move(it));
}

void ReferenceSet::add(LabeledImage item) {
  index_[item.label].push_back(items_.size());
  items_.push_back(std::move(item));
}

std::vector<LabelId> ReferenceSet::labels() const {
  std::vector<LabelId> out;
  out.reserve(index_.size());
  for (const auto& [y, _] : index_) out.push_back(y);
  return out;
}

const std::vector<std::size_t>& ReferenceSet::members(LabelId y) const {
  auto it = index_.find(y);
  if (it == index_.end())
    throw LookupError("label " + std::to_string(y) + " not present in reference set");
  return it->second;
}

LabelId Dataset::id_of(const std::string& name) const {
  for (std::size_t i = 0; i < label_names.size(); ++i)
    if (label_names[i] == name) return static_cast<LabelId>(i);
  throw LookupError("unknown label name: " + name);
}

const std::string& Dataset::name_of(LabelId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= label_names.size())
    throw LookupError("label id out of range: " + std::to_string(id));
  return label_names[static_cast<std::size_t>(id)];
}

double contrastive_loss(const nn::EmbeddingNetwork& net, const LabeledImage& a,
                        const LabeledImage& b, double gamma) {
  if (gamma <= 0.0) throw ArgumentError("contrastive_loss: gamma must be > 0");
  const double d2 = sq_embed_dist(net.forward(a.pixels), net.forward(b.pixels));
  if (a.label == b.label) return d2;
  return std::max(gamma - d2, 0.0);
}

double triplet_loss(const nn::EmbeddingNetwork& net, const LabeledImage& anchor,
                    const LabeledImage& positive, const LabeledImage& negative, double gamma) {
  if (gamma <= 0.0) throw ArgumentError("triplet_loss: gamma must be > 0");
  if (anchor.label == negative.label)
    throw ArgumentError("triplet_loss: negative shares the anchor label");
  const Tensor e = net.forward(anchor.pixels);
  const double dp = sq_embed_dist(e, net.forward(positive.pixels));
  const double dn = sq_embed_dist(e, net.forward(negative.pixels));
  return std::max(dp - dn + gamma, 0.0);
}

nn::EmbeddingNetwork train(nn::EmbeddingNetwork net, const std::vector<LabeledImage>& data,
                           const TrainConfig& cfg, TrainReport* report) {
  if (cfg.margin <= 0.0 || cfg.learning_rate <= 0.0)
    throw ArgumentError("train: margin and learning rate must be > 0");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw ArgumentError("train: bad epochs/batch size");

  // Index by label; triplet mining needs >= 2 labels and >= 2 members each.
  std::map<LabelId, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < data.size(); ++i) by_label[data[i].label].push_back(i);
  if (by_label.size() < 2) throw DatasetError("train: need at least 2 labels");
  if (cfg.loss == TrainConfig::Loss::Triplet) {
    for (const auto& [y, members] : by_label)
      if (members.size() < 2)
        throw DatasetError("train: label " + std::to_string(y) +
                           " has fewer than 2 images (triplet mining)");
  }
  std::vector<LabelId> labels;
  for (const auto& [y, _] : by_label) labels.push_back(y);

  std::mt19937_64 rng(cfg.seed);
  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, data.size() / static_cast<std::size_t>(cfg.batch_size));

  std::vector<double>& theta = net.parameters();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_terms = 0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<std::pair<Tensor, Tensor>> batch;
      double batch_loss = 0.0;
      for (int bi = 0; bi < cfg.batch_size; ++bi) {
        if (cfg.loss == TrainConfig::Loss::Triplet) {
          // Uniform (anchor, positive, negative).
          const LabelId ya = labels[rng() % labels.size()];
          LabelId yn = labels[rng() % labels.size()];
          while (yn == ya) yn = labels[rng() % labels.size()];
          const auto& pa = by_label[ya];
          const auto& pn = by_label[yn];
          const std::size_t ia = pa[rng() % pa.size()];
          std::size_t ip = pa[rng() % pa.size()];
          while (ip == ia) ip = pa[rng() % pa.size()];
          const std::size_t in = pn[rng() % pn.size()];

          const Tensor ea = net.forward(data[ia].pixels);
          const Tensor ep = net.forward(data[ip].pixels);
          const Tensor en = net.forward(data[in].pixels);
          const double loss = sq_embed_dist(ea, ep) - sq_embed_dist(ea, en) + cfg.margin;
          batch_loss += std::max(loss, 0.0);
          if (loss > 0.0) {
            Tensor ua = Tensor::zeros(ea.shape);
            Tensor up = Tensor::zeros(ea.shape);
            Tensor un = Tensor::zeros(ea.shape);
            for (std::size_t k = 0; k < ea.data.size(); ++k) {
              ua.data[k] = 2.0 * (en.data[k] - ep.data[k]);
              up.data[k] = -2.0 * (ea.data[k] - ep.data[k]);
              un.data[k] = 2.0 * (ea.data[k] - en.data[k]);
            }
            batch.emplace_back(data[ia].pixels, std::move(ua));
            batch.emplace_back(data[ip].pixels, std::move(up));
            batch.emplace_back(data[in].pixels, std::move(un));
          }
        } else {
          // Uniform pair (i, j), i != j.
          const std::size_t i = rng() % data.size();
          std::size_t j = rng() % data.size();
          while (j == i) j = rng() % data.size();
          const Tensor ei = net.forward(data[i].pixels);
          const Tensor ej = net.forward(data[j].pixels);
          const double d2 = sq_embed_dist(ei, ej);
          const bool same = data[i].label == data[j].label;
          const double loss = same ? d2 : std::max(cfg.margin - d2, 0.0);
          batch_loss += loss;
          const double sign = same ? 1.0 : ((cfg.margin - d2 > 0.0) ? -1.0 : 0.0);
          if (sign != 0.0) {
            Tensor ui = Tensor::zeros(ei.shape);
            Tensor uj = Tensor::zeros(ei.shape);
            for (std::size_t k = 0; k < ei.data.size(); ++k) {
              ui.data[k] = sign * 2.0 * (ei.data[k] - ej.data[k]);
              uj.data[k] = -ui.data[k];
            }
            batch.emplace_back(data[i].pixels, std::move(ui));
            batch.emplace_back(data[j].pixels, std::move(uj));
          }
        }
      }
      epoch_loss += batch_loss;
      epoch_terms += static_cast<std::size_t>(cfg.batch_size);
      if (!batch.empty()) {
        const std::vector<double> grad = net.parameter_gradient(batch);
        const double scale = cfg.learning_rate / static_cast<double>(cfg.batch_size);
        for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= scale * grad[k];
      }
    }
    if (report) report->epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_terms));
  }
  return net;
}

Tensor centroid(const nn::EmbeddingNetwork& net, const ReferenceSet& A, LabelId y) {
  const auto& members = A.members(y);
  Tensor mean = Tensor::zeros({net.embedding_dim()});
  for (std::size_t idx : members) {
    const Tensor e = net.forward(A.items()[idx].pixels);
    for (std::size_t k = 0; k < mean.data.size(); ++k) mean.data[k] += e.data[k];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : mean.data) v *= inv;
  return mean;
}

EmbeddedGallery EmbeddedGallery::build(const nn::EmbeddingNetwork& net, const ReferenceSet& A) {
  if (A.items().empty()) throw LookupError("empty reference set");
  EmbeddedGallery g;
  g.labels = A.labels();
  for (LabelId y : g.labels) {
    std::vector<Tensor> embs;
    for (std::size_t idx : A.members(y)) embs.push_back(net.forward(A.items()[idx].pixels));
    Tensor mean = Tensor::zeros({net.embedding_dim()});
    for (const Tensor& e : embs)
      for (std::size_t k = 0; k < mean.data.size(); ++k) mean.data[k] += e.data[k];
    const double inv = 1.0 / static_cast<double>(embs.size());
    for (double& v : mean.data) v *= inv;
    g.member_embeddings[y] = std::move(embs);
    g.centroids[y] = std::move(mean);
  }
  return g;
}

const std::vector<Tensor>& EmbeddedGallery::members(LabelId y) const {
  auto it = member_embeddings.find(y);
  if (it == member_embeddings.end())
    throw LookupError("label " + std::to_string(y) + " not present in gallery");
  return it->second;
}

const Tensor& EmbeddedGallery::centroid_of(LabelId y) const {
  auto it = centroids.find(y);
  if (it == centroids.end())
    throw LookupError("label " + std::to_string(y) + " not present in gallery");
  return it->second;
}

LabelId predict(const nn::EmbeddingNetwork& net, const EmbeddedGallery& g, const Tensor& x) {
  return top_n(net, g, x, 1)[0];
}

std::vector<LabelId> top_n(const nn::EmbeddingNetwork& net, const EmbeddedGallery& g,
                           const Tensor& x, int n) {
  if (n < 1 || static_cast<std::size_t>(n) > g.labels.size())
    throw ArgumentError("top_n: n out of range");
  const Tensor e = net.forward(x);
  std::vector<std::pair<double, LabelId>> order;
  order.reserve(g.labels.size());
  for (LabelId y : g.labels) order.emplace_back(std::sqrt(sq_embed_dist(g.centroid_of(y), e)), y);
  // Ties break toward the smaller label id.
  std::sort(order.begin(), order.end());
  std::vector<LabelId> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(order[static_cast<std::size_t>(i)].second);
  return out;
}

LabelId predict(const nn::EmbeddingNetwork& net, const ReferenceSet& A, const Tensor& x) {
  return predict(net, EmbeddedGallery::build(net, A), x);
}

std::vector<LabelId> top_n(const nn::EmbeddingNetwork& net, const ReferenceSet& A,
                           const Tensor& x, int n) {
  return top_n(net, EmbeddedGallery::build(net, A), x, n);
}

double pair_distance(const nn::EmbeddingNetwork& net, const Tensor& a, const Tensor& b) {
  return std::sqrt(sq_embed_dist(net.forward(a), net.forward(b)));
}

}  // namespace veil::embed
