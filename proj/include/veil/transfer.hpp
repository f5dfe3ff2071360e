#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "veil/attacks.hpp"
#include "veil/embedding.hpp"
#include "veil/service.hpp"

namespace veil::xfer {

// Synthetic identity generator: per-identity smooth base texture plus
// per-image pixel shift and Gaussian noise, deterministic per seed.
struct SynthSpec {
  int identities = 10;
  int per_identity = 20;
  int height = 16;
  int width = 16;
  int shift_px = 1;
  double noise_sigma = 0.03;
  std::uint64_t seed = 0;
};

embed::Dataset gen_identities(const SynthSpec& spec);

struct VictimResult {
  std::string victim_id;
  embed::LabelId predicted = -1;
  double confidence = 0.0;
};

// One sweep cell evaluated at one amplification level.
struct TrialRecord {
  std::string attack;
  int norm_p = 2;
  double kappa = 0.0;
  double epsilon = 0.0;
  double alpha = 1.0;
  int iterations = 0;
  embed::LabelId source = -1;
  embed::LabelId target = -1;
  double l2_norm = 0.0;    // |alpha * delta|_2, pre-clip
  double linf_norm = 0.0;  // |alpha * delta|_inf, pre-clip
  embed::LabelId surrogate_label = -1;
  bool feasible = false;
  double seconds = 0.0;
  std::vector<VictimResult> victims;
};

// (#victim-predicts-target) / (#counted entries); victim_id empty = all.
double success_targeted(const std::vector<TrialRecord>& records,
                        const std::string& victim_id = "");
// 1 - (#victim-predicts-source) / (#counted entries).
double success_untargeted(const std::vector<TrialRecord>& records,
                          const std::string& victim_id = "");

struct EvalItem {
  Tensor image;
  embed::LabelId reference_label = -1;
};

double top_n_accuracy(const nn::EmbeddingNetwork& victim, const embed::ReferenceSet& A,
                      const std::vector<EvalItem>& items, int n);
double top_n_accuracy(service::VerifyClient& client, const embed::Dataset& names,
                      const std::vector<EvalItem>& items, int n);

// r(x, alpha, f, s): change in distance to the source centroid caused by the
// amplified mask. The amplified input is evaluated unclipped.
struct ShiftSample {
  Tensor x;
  Tensor delta;
  embed::LabelId source = -1;
};

double shift_r(const nn::EmbeddingNetwork& net, const embed::ReferenceSet& A,
               const ShiftSample& sample, double alpha);
double expected_shift_R(const nn::EmbeddingNetwork& net, const embed::ReferenceSet& A,
                        const std::vector<ShiftSample>& samples, double alpha);

// Checks r_g >= r_f - 4*Delta - tol per (sample, alpha) and the same for the
// means, with Delta the empirical max of |g(p) - f(p)| over every evaluated
// point (samples, perturbed samples, gallery members). A violation is a bug,
// not a finding.
struct BoundReport {
  double delta_max = 0.0;
  std::size_t checks = 0;
  std::size_t violations = 0;
  double min_margin_r = 0.0;  // min of r_g - (r_f - 4*Delta)
  double min_margin_R = 0.0;
};

BoundReport similarity_bound_check(const nn::EmbeddingNetwork& f, const nn::EmbeddingNetwork& g,
                                   const embed::ReferenceSet& A,
                                   const std::vector<ShiftSample>& samples,
                                   const std::vector<double>& alphas, double tol = 1e-6);

struct SweepGrid {
  std::string attack = "cw_l2";
  int norm_p = 2;
  std::vector<double> kappas{0.0};    // CW axis
  std::vector<double> epsilons{0.1};  // PGD axis
  std::vector<double> alphas{1.0};
  std::vector<int> iterations{100};
  int search_steps = 8;
  double learning_rate = 0.1;
  double initial_const = 0.3;
  std::vector<std::pair<embed::LabelId, embed::LabelId>> pairs;
  bool targeted = true;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
};

struct LocalVictim {
  std::string id;
  nn::EmbeddingNetwork net;
  service::Calibration cal;
};

struct RemoteVictim {
  std::string id;
  std::string url;
};

using VictimModel = std::variant<LocalVictim, RemoteVictim>;

struct SweepResult {
  std::vector<TrialRecord> records;
  std::vector<std::string> cell_errors;  // failed cells, recorded not fatal
};

// One attack per (pair x axis-value x N) cell; amplification applied per
// alpha as post-processing. Victim confidence compares the amplified image
// against the source probe. Cells run in grid.jobs parallel jobs; records
// land in fixed grid order regardless of schedule.
SweepResult run_sweep(const SweepGrid& grid, const nn::EmbeddingNetwork& surrogate,
                      const std::vector<VictimModel>& victims, const embed::Dataset& dataset);

// Fixed column order:
// attack,p,kappa,epsilon,alpha,N,pair_source,pair_target,l2_norm,linf_norm,
// surrogate_label,victim_id,victim_label,victim_confidence,feasible,seconds
void write_csv(std::ostream& os, const std::vector<TrialRecord>& records,
               const embed::Dataset& names);

// Per-label split: the last image of each label is the probe, the rest form
// the gallery. Mirrors how the sweep selects its source images.
void split_gallery_probes(const std::vector<embed::LabeledImage>& images,
                          embed::ReferenceSet& gallery,
                          std::map<embed::LabelId, Tensor>& probes);

// Seeded genuine/impostor pair sampling for victim calibration.
void make_calibration_pairs(const std::vector<embed::LabeledImage>& images, std::size_t count,
                            std::uint64_t seed,
                            std::vector<std::pair<Tensor, Tensor>>& genuine,
                            std::vector<std::pair<Tensor, Tensor>>& impostor);

struct ATReport {
  double base_natural = 0.0;
  double at_natural = 0.0;
  double base_adversarial = 0.0;
  double at_adversarial = 0.0;
};

// Trains a copy of `base` on a 50/50 mix (adversarial copies of a seeded
// half of the training images, natural forms of the other half). The
// adversarial eval set is crafted once against `base` and reused for both
// columns. alpha amplifies the crafted masks.
std::pair<nn::EmbeddingNetwork, ATReport> adversarial_training(
    const nn::EmbeddingNetwork& base, const std::vector<embed::LabeledImage>& data,
    const attack::AttackConfig& attack_cfg, int epochs, const embed::TrainConfig& train_cfg,
    double alpha = 3.0);

// Spearman rank correlation with average ranks on ties.
double spearman_rho(std::span<const double> xs, std::span<const double> ys);

}  // namespace veil::xfer
