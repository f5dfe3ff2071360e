#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "veil/embedding.hpp"
#include "veil/net.hpp"
#include "veil/tensor.hpp"

namespace veil::attack {

enum class AttackKind { Pgd, CwL2, CwLinf };
enum class NormKind { L2, LInf };

std::string attack_kind_name(AttackKind k);
AttackKind attack_kind_from_name(const std::string& name);

struct AttackConfig {
  AttackKind attack = AttackKind::Pgd;
  NormKind norm = NormKind::L2;
  int iterations = 20;         // N
  double learning_rate = 0.1;  // eta
  double epsilon = 0.1;        // PGD perturbation bound
  int search_steps = 8;        // CW binary-search / bound-shrink rounds
  double initial_const = 0.3;  // CW c0
  double kappa = 0.0;          // margin
  bool targeted = false;
  embed::LabelId target_label = -1;
  embed::LabelId source_label = -1;  // untargeted objective uses the true source label
  // Pixel box. Images use [0,1]; synthetic instances may widen it.
  double box_lo = 0.0;
  double box_hi = 1.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws ArgumentError

  // Table-style presets.
  static AttackConfig pgd();
  static AttackConfig cw_small();
  static AttackConfig cw_large();
  static AttackConfig cw_linf();
};

nlohmann::json attack_config_to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const nlohmann::json& j);

struct PerturbationOutcome {
  Tensor original;  // x
  Tensor mask;      // raw delta, same shape as x
  double alpha = 1.0;
  double l2 = 0.0;    // |alpha * delta|_2
  double linf = 0.0;  // |alpha * delta|_inf
  std::vector<double> objective_trace;
  // Instrumentation for the projection invariants, one entry per iteration:
  // |delta|_2 after projection, and how far x+delta escapes the pixel box
  // (0 when inside).
  std::vector<double> delta_l2_trace;
  std::vector<double> box_excess_trace;
  bool feasible = false;  // targeted: G(x+delta,t) <= 0 on the surrogate;
                          // untargeted: surrogate top-1 leaves the source label

  // Amplification is post-processing: rescales the stored norms, never delta.
  void set_alpha(double a);
};

// d'_f(z, A_y): mean embedding distance from z to every gallery member of y.
double mean_distance(const nn::EmbeddingNetwork& net, const Tensor& z,
                     const embed::ReferenceSet& A, embed::LabelId y);
Tensor mean_distance_gradient(const nn::EmbeddingNetwork& net, const Tensor& z,
                              const embed::ReferenceSet& A, embed::LabelId y);

// Target loss: d'_f(z, A_t).
double target_loss(const nn::EmbeddingNetwork& net, const Tensor& z,
                   const embed::ReferenceSet& A, embed::LabelId t);
Tensor target_loss_gradient(const nn::EmbeddingNetwork& net, const Tensor& z,
                            const embed::ReferenceSet& A, embed::LabelId t);

// Hinge loss G = [d'(z,A_t) - max_{y != t} d'(z,A_y) + kappa]_+.
double hinge_loss(const nn::EmbeddingNetwork& net, const Tensor& z,
                  const embed::ReferenceSet& A, embed::LabelId t, double kappa);
Tensor hinge_loss_gradient(const nn::EmbeddingNetwork& net, const Tensor& z,
                           const embed::ReferenceSet& A, embed::LabelId t, double kappa);

// Normalized-gradient PGD with per-iteration projection onto the epsilon
// ball and the pixel box. Untargeted: ascend d'(x+delta, A_source);
// targeted: descend G(x+delta, target).
PerturbationOutcome pgd_attack(const nn::EmbeddingNetwork& net, const Tensor& x,
                               const embed::ReferenceSet& A, const AttackConfig& cfg);

// CW-l2: min |delta|_2^2 + c * G via tanh box reparameterization and binary
// search on c. Returns the minimal-norm feasible delta found.
PerturbationOutcome cw_l2_attack(const nn::EmbeddingNetwork& net, const Tensor& x,
                                 const embed::ReferenceSet& A, const AttackConfig& cfg);

// CW-linf: penalty sum_i [(|delta_i| - tau)]_+ with tau shrinking by 0.9
// after each feasible round; search_steps caps the rounds.
PerturbationOutcome cw_linf_attack(const nn::EmbeddingNetwork& net, const Tensor& x,
                                   const embed::ReferenceSet& A, const AttackConfig& cfg);

PerturbationOutcome run_attack(const nn::EmbeddingNetwork& net, const Tensor& x,
                               const embed::ReferenceSet& A, const AttackConfig& cfg);

// clip(x + alpha * delta, 0, 1); alpha >= 1.
Tensor amplify(const Tensor& x, const Tensor& delta, double alpha);

}  // namespace veil::attack
