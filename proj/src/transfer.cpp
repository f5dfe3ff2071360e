#include "veil/transfer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "veil/pipeline.hpp"

namespace veil::xfer {

namespace {

using embed::Dataset;
using embed::EmbeddedGallery;
using embed::LabeledImage;
using embed::LabelId;
using embed::ReferenceSet;
using nn::EmbeddingNetwork;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// Bilinear upsample of a coarse per-channel grid; gives each identity a
// smooth distinctive texture.
Tensor smooth_texture(int h, int w, std::mt19937_64& rng) {
  constexpr int kGrid = 4;
  std::uniform_real_distribution<double> level(0.1, 0.9);
  Tensor coarse = Tensor::zeros({kGrid, kGrid, 3});
  for (double& v : coarse.data) v = level(rng);
  return img::resize_bilinear(coarse, h, w);
}

}  // namespace

embed::Dataset gen_identities(const SynthSpec& spec) {
  if (spec.identities < 2) throw ArgumentError("gen_identities: need at least 2 identities");
  if (spec.per_identity < 1 || spec.height < 8 || spec.width < 8)
    throw ArgumentError("gen_identities: bad dimensions");
  if (spec.noise_sigma < 0.0 || spec.shift_px < 0)
    throw ArgumentError("gen_identities: bad jitter");

  Dataset ds;
  std::mt19937_64 rng(spec.seed);
  for (int k = 0; k < spec.identities; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "id_%02d", k);
    ds.label_names.push_back(name);

    const Tensor base = smooth_texture(spec.height, spec.width, rng);
    std::uniform_int_distribution<int> shift(-spec.shift_px, spec.shift_px);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (int i = 0; i < spec.per_identity; ++i) {
      const int dy = spec.shift_px > 0 ? shift(rng) : 0;
      const int dx = spec.shift_px > 0 ? shift(rng) : 0;
      Tensor im = Tensor::zeros({spec.height, spec.width, 3});
      for (int y = 0; y < spec.height; ++y) {
        const int sy = ((y + dy) % spec.height + spec.height) % spec.height;
        for (int x = 0; x < spec.width; ++x) {
          const int sx = ((x + dx) % spec.width + spec.width) % spec.width;
          for (int c = 0; c < 3; ++c) {
            double v = base.at(sy, sx, c);
            if (spec.noise_sigma > 0.0) v += noise(rng);
            im.at(y, x, c) = std::clamp(v, 0.0, 1.0);
          }
        }
      }
      ds.images.push_back({std::move(im), k});
    }
  }
  return ds;
}

namespace {

double success_rate(const std::vector<TrialRecord>& records, const std::string& victim_id,
                    bool targeted) {
  if (records.empty()) throw ArgumentError("success metric over empty record list");
  std::size_t counted = 0, hits = 0;
  for (const TrialRecord& r : records) {
    for (const VictimResult& v : r.victims) {
      if (!victim_id.empty() && v.victim_id != victim_id) continue;
      ++counted;
      if (targeted) {
        if (v.predicted == r.target) ++hits;
      } else {
        if (v.predicted == r.source) ++hits;
      }
    }
  }
  if (counted == 0) throw ArgumentError("no victim entries matched the success-metric query");
  const double ratio = static_cast<double>(hits) / static_cast<double>(counted);
  return targeted ? ratio : 1.0 - ratio;
}

}  // namespace

double success_targeted(const std::vector<TrialRecord>& records, const std::string& victim_id) {
  return success_rate(records, victim_id, true);
}

double success_untargeted(const std::vector<TrialRecord>& records,
                          const std::string& victim_id) {
  return success_rate(records, victim_id, false);
}

double top_n_accuracy(const EmbeddingNetwork& victim, const ReferenceSet& A,
                      const std::vector<EvalItem>& items, int n) {
  if (items.empty()) throw ArgumentError("top_n_accuracy over empty item list");
  const EmbeddedGallery g = EmbeddedGallery::build(victim, A);
  if (n < 1 || static_cast<std::size_t>(n) > g.labels.size())
    throw ArgumentError("top_n_accuracy: n out of range");
  std::size_t hits = 0;
  for (const EvalItem& item : items) {
    const std::vector<LabelId> top = embed::top_n(victim, g, item.image, n);
    if (std::find(top.begin(), top.end(), item.reference_label) != top.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

double top_n_accuracy(service::VerifyClient& client, const Dataset& names,
                      const std::vector<EvalItem>& items, int n) {
  if (items.empty()) throw ArgumentError("top_n_accuracy over empty item list");
  std::size_t hits = 0;
  for (const EvalItem& item : items) {
    const auto candidates = client.recognize(item.image, n);
    const std::string& want = names.name_of(item.reference_label);
    for (const auto& [label, conf] : candidates) {
      if (label == want) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

double shift_r(const EmbeddingNetwork& net, const ReferenceSet& A, const ShiftSample& sample,
               double alpha) {
  if (alpha < 1.0) throw ArgumentError("shift_r: alpha must be >= 1");
  require_same_shape(sample.x, sample.delta, "shift_r");
  const Tensor beta = embed::centroid(net, A, sample.source);
  const Tensor e0 = net.forward(sample.x);
  const Tensor e1 = net.forward(sample.x + sample.delta * alpha);
  return l2_norm(e1 - beta) - l2_norm(e0 - beta);
}

double expected_shift_R(const EmbeddingNetwork& net, const ReferenceSet& A,
                        const std::vector<ShiftSample>& samples, double alpha) {
  if (samples.empty()) throw ArgumentError("expected_shift_R over empty sample list");
  double total = 0.0;
  for (const ShiftSample& s : samples) total += shift_r(net, A, s, alpha);
  return total / static_cast<double>(samples.size());
}

BoundReport similarity_bound_check(const EmbeddingNetwork& f, const EmbeddingNetwork& g,
                                   const ReferenceSet& A, const std::vector<ShiftSample>& samples,
                                   const std::vector<double>& alphas, double tol) {
  if (f.input_shape() != g.input_shape() || f.embedding_dim() != g.embedding_dim())
    throw ShapeError("similarity_bound_check: f and g disagree on input/embedding shape");
  if (samples.empty() || alphas.empty())
    throw ArgumentError("similarity_bound_check: empty samples or alphas");

  // Empirical Delta over every point the check evaluates.
  double delta_max = 0.0;
  auto observe = [&](const Tensor& p) {
    delta_max = std::max(delta_max, l2_norm(g.forward(p) - f.forward(p)));
  };
  for (const LabeledImage& item : A.items()) observe(item.pixels);
  for (const ShiftSample& s : samples) {
    observe(s.x);
    for (double a : alphas) observe(s.x + s.delta * a);
  }

  BoundReport report;
  report.delta_max = delta_max;
  report.min_margin_r = std::numeric_limits<double>::infinity();
  report.min_margin_R = std::numeric_limits<double>::infinity();
  const double slack = 4.0 * delta_max;

  for (double a : alphas) {
    double sum_f = 0.0, sum_g = 0.0;
    for (const ShiftSample& s : samples) {
      const double rf = shift_r(f, A, s, a);
      const double rg = shift_r(g, A, s, a);
      sum_f += rf;
      sum_g += rg;
      const double margin = rg - (rf - slack);
      report.min_margin_r = std::min(report.min_margin_r, margin);
      ++report.checks;
      if (margin < -tol) ++report.violations;
    }
    const double Rf = sum_f / static_cast<double>(samples.size());
    const double Rg = sum_g / static_cast<double>(samples.size());
    const double margin_R = Rg - (Rf - slack);
    report.min_margin_R = std::min(report.min_margin_R, margin_R);
    ++report.checks;
    if (margin_R < -tol) ++report.violations;
  }
  return report;
}

void SweepGrid::validate() const {
  attack::attack_kind_from_name(attack);
  if (alphas.empty() || iterations.empty()) throw ArgumentError("sweep grid: empty axis");
  for (double a : alphas)
    if (a < 1.0) throw ArgumentError("sweep grid: alpha values must be >= 1");
  const bool is_pgd = attack == "pgd";
  if (is_pgd && epsilons.empty()) throw ArgumentError("sweep grid: pgd needs epsilon axis");
  if (!is_pgd && kappas.empty()) throw ArgumentError("sweep grid: cw needs kappa axis");
  if (pairs.empty()) throw ArgumentError("sweep grid: no source/target pairs");
  if (jobs < 1) throw ArgumentError("sweep grid: jobs must be >= 1");
}

void split_gallery_probes(const std::vector<LabeledImage>& images, ReferenceSet& gallery,
                          std::map<LabelId, Tensor>& probes) {
  std::map<LabelId, std::vector<const LabeledImage*>> by_label;
  for (const LabeledImage& im : images) by_label[im.label].push_back(&im);
  for (const auto& [y, members] : by_label) {
    if (members.size() < 2)
      throw DatasetError("label " + std::to_string(y) + " needs >= 2 images for a probe split");
    for (std::size_t i = 0; i + 1 < members.size(); ++i) gallery.add(*members[i]);
    probes[y] = members.back()->pixels;
  }
}

void make_calibration_pairs(const std::vector<LabeledImage>& images, std::size_t count,
                            std::uint64_t seed, std::vector<std::pair<Tensor, Tensor>>& genuine,
                            std::vector<std::pair<Tensor, Tensor>>& impostor) {
  std::map<LabelId, std::vector<const LabeledImage*>> by_label;
  for (const LabeledImage& im : images) by_label[im.label].push_back(&im);
  std::vector<LabelId> labels;
  for (const auto& [y, _] : by_label) labels.push_back(y);
  if (labels.size() < 2) throw DatasetError("calibration pairs need >= 2 labels");

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const LabelId y = labels[rng() % labels.size()];
    const auto& members = by_label[y];
    const std::size_t a = rng() % members.size();
    std::size_t b = rng() % members.size();
    while (members.size() > 1 && b == a) b = rng() % members.size();
    genuine.emplace_back(members[a]->pixels, members[b]->pixels);

    const LabelId y1 = labels[rng() % labels.size()];
    LabelId y2 = labels[rng() % labels.size()];
    while (y2 == y1) y2 = labels[rng() % labels.size()];
    const auto& m1 = by_label[y1];
    const auto& m2 = by_label[y2];
    impostor.emplace_back(m1[rng() % m1.size()]->pixels, m2[rng() % m2.size()]->pixels);
  }
}

namespace {

struct SweepCell {
  std::pair<LabelId, LabelId> pair;
  double axis_value;  // kappa for CW, epsilon for PGD
  int iterations;
};

// Local victims embed the shared gallery once, up front.
struct PreparedVictim {
  const VictimModel* model;
  std::optional<EmbeddedGallery> gallery;
};

VictimResult evaluate_victim(const PreparedVictim& victim, const Dataset& names,
                             const Tensor& adv, const Tensor& probe) {
  VictimResult out;
  if (const auto* local = std::get_if<LocalVictim>(victim.model)) {
    out.victim_id = local->id;
    out.predicted = embed::predict(local->net, *victim.gallery, adv);
    out.confidence = service::local_verify(local->net, local->cal, adv, probe).confidence;
  } else {
    const auto& remote = std::get<RemoteVictim>(*victim.model);
    out.victim_id = remote.id;
    service::VerifyClient client(remote.url);
    const auto candidates = client.recognize(adv, 1);
    if (candidates.empty()) throw ProtocolError("remote victim returned no candidates");
    out.predicted = names.id_of(candidates.front().first);
    out.confidence = client.verify(adv, probe).confidence;
  }
  return out;
}

}  // namespace

SweepResult run_sweep(const SweepGrid& grid, const EmbeddingNetwork& surrogate,
                      const std::vector<VictimModel>& victims, const Dataset& dataset) {
  grid.validate();
  if (victims.empty()) throw ArgumentError("run_sweep: no victims");

  ReferenceSet gallery;
  std::map<LabelId, Tensor> probes;
  split_gallery_probes(dataset.images, gallery, probes);

  const bool is_pgd = grid.attack == "pgd";
  const std::vector<double>& axis = is_pgd ? grid.epsilons : grid.kappas;

  std::vector<SweepCell> cells;
  for (const auto& pair : grid.pairs)
    for (double v : axis)
      for (int n : grid.iterations) cells.push_back({pair, v, n});

  const std::size_t rows_per_cell = grid.alphas.size();
  SweepResult result;
  result.records.assign(cells.size() * rows_per_cell, TrialRecord{});
  std::vector<std::string> errors(cells.size());

  const EmbeddedGallery surrogate_gallery = EmbeddedGallery::build(surrogate, gallery);

  std::vector<PreparedVictim> prepared;
  prepared.reserve(victims.size());
  for (const VictimModel& victim : victims) {
    PreparedVictim pv{&victim, std::nullopt};
    if (const auto* local = std::get_if<LocalVictim>(&victim))
      pv.gallery = EmbeddedGallery::build(local->net, gallery);
    prepared.push_back(std::move(pv));
  }

#pragma omp parallel for schedule(dynamic) num_threads(grid.jobs)
  for (std::int64_t ci = 0; ci < static_cast<std::int64_t>(cells.size()); ++ci) {
    const SweepCell& cell = cells[static_cast<std::size_t>(ci)];
    try {
      const auto probe_it = probes.find(cell.pair.first);
      if (probe_it == probes.end())
        throw LookupError("no probe image for label " + std::to_string(cell.pair.first));
      const Tensor& x = probe_it->second;

      attack::AttackConfig cfg;
      cfg.attack = attack::attack_kind_from_name(grid.attack);
      cfg.norm = grid.norm_p == 2 ? attack::NormKind::L2 : attack::NormKind::LInf;
      cfg.iterations = cell.iterations;
      cfg.learning_rate = grid.learning_rate;
      cfg.search_steps = grid.search_steps;
      cfg.initial_const = grid.initial_const;
      cfg.targeted = grid.targeted;
      cfg.source_label = cell.pair.first;
      cfg.target_label = cell.pair.second;
      cfg.seed = grid.seed;
      if (is_pgd)
        cfg.epsilon = cell.axis_value;
      else
        cfg.kappa = cell.axis_value;

      const double t0 = now_seconds();
      const attack::PerturbationOutcome outcome = attack::run_attack(surrogate, x, gallery, cfg);
      const double craft_seconds = now_seconds() - t0;

      const double base_l2 = l2_norm(outcome.mask);
      const double base_linf = linf_norm(outcome.mask);

      for (std::size_t ai = 0; ai < grid.alphas.size(); ++ai) {
        const double alpha = grid.alphas[ai];
        TrialRecord rec;
        rec.attack = grid.attack;
        rec.norm_p = grid.norm_p;
        rec.kappa = is_pgd ? cfg.kappa : cell.axis_value;
        rec.epsilon = is_pgd ? cell.axis_value : 0.0;
        rec.alpha = alpha;
        rec.iterations = cell.iterations;
        rec.source = cell.pair.first;
        rec.target = cell.pair.second;
        rec.l2_norm = alpha * base_l2;
        rec.linf_norm = alpha * base_linf;
        rec.feasible = outcome.feasible;

        const double te = now_seconds();
        const Tensor adv = attack::amplify(x, outcome.mask, alpha);
        rec.surrogate_label = embed::predict(surrogate, surrogate_gallery, adv);
        for (const PreparedVictim& victim : prepared)
          rec.victims.push_back(evaluate_victim(victim, dataset, adv, x));
        rec.seconds = craft_seconds + (now_seconds() - te);
        result.records[static_cast<std::size_t>(ci) * rows_per_cell + ai] = std::move(rec);
      }
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(ci)] =
          "cell " + std::to_string(ci) + " (" + std::to_string(cell.pair.first) + "->" +
          std::to_string(cell.pair.second) + "): " + e.what();
    }
  }

  // Drop rows of failed cells, keep the error strings, preserve order.
  std::vector<TrialRecord> kept;
  kept.reserve(result.records.size());
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    if (!errors[ci].empty()) {
      result.cell_errors.push_back(errors[ci]);
      continue;
    }
    for (std::size_t ai = 0; ai < rows_per_cell; ++ai)
      kept.push_back(std::move(result.records[ci * rows_per_cell + ai]));
  }
  result.records = std::move(kept);
  return result;
}

void write_csv(std::ostream& os, const std::vector<TrialRecord>& records, const Dataset& names) {
  os << "attack,p,kappa,epsilon,alpha,N,pair_source,pair_target,l2_norm,linf_norm,"
        "surrogate_label,victim_id,victim_label,victim_confidence,feasible,seconds\n";
  for (const TrialRecord& r : records) {
    for (const VictimResult& v : r.victims) {
      os << r.attack << "," << (r.norm_p == 2 ? "2" : "inf") << "," << fmt_double(r.kappa) << ","
         << fmt_double(r.epsilon) << "," << fmt_double(r.alpha) << "," << r.iterations << ","
         << names.name_of(r.source) << "," << names.name_of(r.target) << ","
         << fmt_double(r.l2_norm) << "," << fmt_double(r.linf_norm) << ","
         << names.name_of(r.surrogate_label) << "," << v.victim_id << ","
         << names.name_of(v.predicted) << "," << fmt_double(v.confidence) << ","
         << (r.feasible ? 1 : 0) << "," << fmt_double(r.seconds) << "\n";
    }
  }
}

std::pair<EmbeddingNetwork, ATReport> adversarial_training(
    const EmbeddingNetwork& base, const std::vector<LabeledImage>& data,
    const attack::AttackConfig& attack_cfg, int epochs, const embed::TrainConfig& train_cfg,
    double alpha) {
  if (epochs < 0) throw ArgumentError("adversarial_training: epochs must be >= 0");

  // Per-label split: last quarter (at least one image) held out for eval.
  std::map<LabelId, std::vector<const LabeledImage*>> by_label;
  for (const LabeledImage& im : data) by_label[im.label].push_back(&im);
  std::vector<LabeledImage> train_split;
  std::vector<LabeledImage> eval_split;
  std::vector<LabelId> labels;
  for (const auto& [y, members] : by_label) {
    if (members.size() < 3)
      throw DatasetError("adversarial_training: label " + std::to_string(y) +
                         " needs >= 3 images");
    labels.push_back(y);
    const std::size_t eval_count = std::max<std::size_t>(1, members.size() / 4);
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i + eval_count >= members.size())
        eval_split.push_back(*members[i]);
      else
        train_split.push_back(*members[i]);
    }
  }

  ReferenceSet gallery(train_split);

  auto natural_accuracy = [&](const EmbeddingNetwork& net,
                              const std::vector<LabeledImage>& items) {
    const EmbeddedGallery g = EmbeddedGallery::build(net, gallery);
    std::size_t hits = 0;
    for (const LabeledImage& im : items)
      if (embed::predict(net, g, im.pixels) == im.label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(items.size());
  };

  // Targeted masks against the base net; the target is the next label.
  auto craft = [&](const Tensor& x, LabelId source) {
    attack::AttackConfig cfg = attack_cfg;
    cfg.targeted = true;
    cfg.source_label = source;
    const auto it = std::find(labels.begin(), labels.end(), source);
    const std::size_t pos = static_cast<std::size_t>(it - labels.begin());
    cfg.target_label = labels[(pos + 1) % labels.size()];
    const attack::PerturbationOutcome outcome = attack::run_attack(base, x, gallery, cfg);
    return attack::amplify(x, outcome.mask, alpha);
  };

  std::vector<LabeledImage> adv_eval;
  adv_eval.reserve(eval_split.size());
  for (const LabeledImage& im : eval_split)
    adv_eval.push_back({craft(im.pixels, im.label), im.label});

  ATReport report;
  report.base_natural = natural_accuracy(base, eval_split);
  report.base_adversarial = natural_accuracy(base, adv_eval);

  // 50/50 mix: adversarial copies of a seeded half, natural rest.
  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(train_cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<LabeledImage> mix = train_split;
  for (std::size_t i = 0; i < order.size() / 2; ++i) {
    LabeledImage& slot = mix[order[i]];
    slot.pixels = craft(slot.pixels, slot.label);
  }

  embed::TrainConfig tc = train_cfg;
  tc.epochs = epochs;
  EmbeddingNetwork at_net = embed::train(base, mix, tc);

  report.at_natural = natural_accuracy(at_net, eval_split);
  report.at_adversarial = natural_accuracy(at_net, adv_eval);
  return {std::move(at_net), report};
}

double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw ArgumentError("spearman_rho: need two equal-length series of >= 2 points");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size(), 0.0);
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(xs);
  const std::vector<double> ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mean = (n + 1.0) / 2.0;
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mean) * (ry[i] - mean);
    dx += (rx[i] - mean) * (rx[i] - mean);
    dy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;  // a constant series correlates with nothing
  return num / std::sqrt(dx * dy);
}

}  // namespace veil::xfer
