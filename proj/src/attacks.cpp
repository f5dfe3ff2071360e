#include "veil/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace veil::attack {

namespace {

using embed::EmbeddedGallery;
using embed::LabelId;
using nn::EmbeddingNetwork;

constexpr double kDistEps = 1e-12;

// Mean distance from embedding e to the members of one label, with the
// gradient taken in embedding space.
double mean_dist_emb(const EmbeddedGallery& g, const Tensor& e, LabelId y,
                     Tensor* emb_grad = nullptr) {
  const auto& members = g.members(y);
  const double inv = 1.0 / static_cast<double>(members.size());
  if (emb_grad) *emb_grad = Tensor::zeros(e.shape);
  double total = 0.0;
  for (const Tensor& m : members) {
    double sq = 0.0;
    for (std::size_t k = 0; k < e.data.size(); ++k) {
      const double d = e.data[k] - m.data[k];
      sq += d * d;
    }
    const double dist = std::sqrt(sq);
    total += dist;
    if (emb_grad) {
      const double scale = inv / std::max(dist, kDistEps);
      for (std::size_t k = 0; k < e.data.size(); ++k)
        emb_grad->data[k] += scale * (e.data[k] - m.data[k]);
    }
  }
  return total * inv;
}

// G and its embedding-space gradient at e. The inner max loops over every
// label other than t; ties resolve to the smaller label id.
double hinge_emb(const EmbeddedGallery& g, const Tensor& e, LabelId t, double kappa,
                 Tensor* emb_grad = nullptr) {
  if (g.labels.size() < 2) throw ArgumentError("hinge loss needs a gallery with >= 2 labels");
  Tensor grad_t;
  const double d_t = mean_dist_emb(g, e, t, emb_grad ? &grad_t : nullptr);
  double best = -std::numeric_limits<double>::infinity();
  LabelId best_y = -1;
  for (LabelId y : g.labels) {
    if (y == t) continue;
    const double d = mean_dist_emb(g, e, y);
    if (d > best) {
      best = d;
      best_y = y;
    }
  }
  const double value = d_t - best + kappa;
  if (value <= 0.0) {
    if (emb_grad) *emb_grad = Tensor::zeros(e.shape);
    return 0.0;
  }
  if (emb_grad) {
    Tensor grad_y;
    mean_dist_emb(g, e, best_y, &grad_y);
    *emb_grad = grad_t - grad_y;
  }
  return value;
}

struct Objective {
  double value = 0.0;
  Tensor input_grad;
};

// Attack objective at z = x + delta. Targeted: G (to be minimized).
// Untargeted: d'(z, A_source) (to be maximized).
Objective eval_objective(const EmbeddingNetwork& net, const EmbeddedGallery& g, const Tensor& z,
                         const AttackConfig& cfg, bool want_grad) {
  Objective out;
  const Tensor e = net.forward(z);
  Tensor emb_grad;
  if (cfg.targeted)
    out.value = hinge_emb(g, e, cfg.target_label, cfg.kappa, want_grad ? &emb_grad : nullptr);
  else
    out.value = mean_dist_emb(g, e, cfg.source_label, want_grad ? &emb_grad : nullptr);
  if (want_grad) out.input_grad = net.input_gradient(z, emb_grad);
  return out;
}

bool surrogate_escapes_source(const EmbeddingNetwork& net, const EmbeddedGallery& g,
                              const Tensor& z, LabelId source) {
  return embed::predict(net, g, z) != source;
}

void finish_norms(PerturbationOutcome& out) {
  out.l2 = out.alpha * l2_norm(out.mask);
  out.linf = out.alpha * linf_norm(out.mask);
}

// Minimal Adam state for the CW inner loops.
struct Adam {
  double lr;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;

  explicit Adam(std::size_t n, double lr_) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& w, const std::vector<double>& grad) {
    ++t;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

// tanh box reparameterization: z(w) = lo + (hi-lo) * (tanh(w)+1)/2.
struct BoxTransform {
  double lo, hi;

  std::vector<double> to_w(const Tensor& x) const {
    std::vector<double> w(x.data.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      double u = 2.0 * (x.data[i] - lo) / (hi - lo) - 1.0;
      u = std::clamp(u, -1.0 + 1e-6, 1.0 - 1e-6);
      w[i] = std::atanh(u);
    }
    return w;
  }

  Tensor to_z(const std::vector<double>& w, const std::vector<int>& shape) const {
    Tensor z = Tensor::zeros(shape);
    for (std::size_t i = 0; i < w.size(); ++i)
      z.data[i] = lo + (hi - lo) * (std::tanh(w[i]) + 1.0) * 0.5;
    return z;
  }

  double dz_dw(double wi) const {
    const double th = std::tanh(wi);
    return (hi - lo) * 0.5 * (1.0 - th * th);
  }
};

}  // namespace

std::string attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::Pgd: return "pgd";
    case AttackKind::CwL2: return "cw_l2";
    case AttackKind::CwLinf: return "cw_linf";
  }
  throw ArgumentError("unknown attack kind");
}

AttackKind attack_kind_from_name(const std::string& name) {
  if (name == "pgd") return AttackKind::Pgd;
  if (name == "cw_l2") return AttackKind::CwL2;
  if (name == "cw_linf") return AttackKind::CwLinf;
  throw ArgumentError("unknown attack kind: " + name);
}

void AttackConfig::validate() const {
  if (iterations < 1) throw ArgumentError("attack config: iterations must be >= 1");
  if (learning_rate <= 0.0) throw ArgumentError("attack config: learning rate must be > 0");
  if (kappa < 0.0) throw ArgumentError("attack config: kappa must be >= 0");
  if (box_lo >= box_hi) throw ArgumentError("attack config: empty pixel box");
  if (attack == AttackKind::Pgd) {
    if (epsilon <= 0.0) throw ArgumentError("pgd: perturbation bound must be > 0");
    if (!targeted && source_label < 0) throw ArgumentError("pgd untargeted: missing source label");
  } else {
    if (!targeted) throw ArgumentError("cw attacks are targeted");
    if (search_steps < 1) throw ArgumentError("cw: search steps must be >= 1");
    if (initial_const <= 0.0) throw ArgumentError("cw: initial const must be > 0");
  }
  if (targeted && target_label < 0) throw ArgumentError("targeted attack: missing target label");
}

AttackConfig AttackConfig::pgd() {
  AttackConfig c;
  c.attack = AttackKind::Pgd;
  c.norm = NormKind::L2;
  c.iterations = 20;
  c.learning_rate = 0.1;
  c.epsilon = 0.1;
  return c;
}

AttackConfig AttackConfig::cw_small() {
  AttackConfig c;
  c.attack = AttackKind::CwL2;
  c.norm = NormKind::L2;
  c.iterations = 100;
  c.search_steps = 8;
  c.learning_rate = 0.1;
  c.initial_const = 0.3;
  c.targeted = true;
  return c;
}

AttackConfig AttackConfig::cw_large() {
  AttackConfig c = cw_small();
  c.iterations = 800;
  c.search_steps = 15;
  return c;
}

AttackConfig AttackConfig::cw_linf() {
  AttackConfig c = cw_small();
  c.attack = AttackKind::CwLinf;
  c.norm = NormKind::LInf;
  c.iterations = 100;
  c.search_steps = 10;
  return c;
}

nlohmann::json attack_config_to_json(const AttackConfig& cfg) {
  nlohmann::json j;
  j["attack"] = attack_kind_name(cfg.attack);
  j["norm"] = cfg.norm == NormKind::L2 ? "2" : "inf";
  j["iterations"] = cfg.iterations;
  j["learning_rate"] = cfg.learning_rate;
  j["perturbation_bound"] = cfg.epsilon;
  j["search_steps"] = cfg.search_steps;
  j["initial_const"] = cfg.initial_const;
  j["kappa"] = cfg.kappa;
  j["targeted"] = cfg.targeted;
  j["target_label"] = cfg.target_label;
  j["source_label"] = cfg.source_label;
  j["box_lo"] = cfg.box_lo;
  j["box_hi"] = cfg.box_hi;
  j["seed"] = cfg.seed;
  return j;
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig cfg;
  if (j.contains("attack")) cfg.attack = attack_kind_from_name(j.at("attack").get<std::string>());
  if (j.contains("norm")) cfg.norm = j.at("norm") == "inf" ? NormKind::LInf : NormKind::L2;
  if (j.contains("iterations")) cfg.iterations = j.at("iterations").get<int>();
  if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("perturbation_bound")) cfg.epsilon = j.at("perturbation_bound").get<double>();
  if (j.contains("search_steps")) cfg.search_steps = j.at("search_steps").get<int>();
  if (j.contains("initial_const")) cfg.initial_const = j.at("initial_const").get<double>();
  if (j.contains("kappa")) cfg.kappa = j.at("kappa").get<double>();
  if (j.contains("targeted")) cfg.targeted = j.at("targeted").get<bool>();
  if (j.contains("target_label")) cfg.target_label = j.at("target_label").get<int>();
  if (j.contains("source_label")) cfg.source_label = j.at("source_label").get<int>();
  if (j.contains("box_lo")) cfg.box_lo = j.at("box_lo").get<double>();
  if (j.contains("box_hi")) cfg.box_hi = j.at("box_hi").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

void PerturbationOutcome::set_alpha(double a) {
  if (a < 1.0) throw ArgumentError("amplification factor must be >= 1");
  alpha = a;
  finish_norms(*this);
}

double mean_distance(const EmbeddingNetwork& net, const Tensor& z, const embed::ReferenceSet& A,
                     LabelId y) {
  const EmbeddedGallery g = EmbeddedGallery::build(net, A);
  return mean_dist_emb(g, net.forward(z), y);
}

Tensor mean_distance_gradient(const EmbeddingNetwork& net, const Tensor& z,
                              const embed::ReferenceSet& A, LabelId y) {
  const EmbeddedGallery g = EmbeddedGallery::build(net, A);
  Tensor emb_grad;
  mean_dist_emb(g, net.forward(z), y, &emb_grad);
  return net.input_gradient(z, emb_grad);
}

double target_loss(const EmbeddingNetwork& net, const Tensor& z, const embed::ReferenceSet& A,
                   LabelId t) {
  return mean_distance(net, z, A, t);
}

Tensor target_loss_gradient(const EmbeddingNetwork& net, const Tensor& z,
                            const embed::ReferenceSet& A, LabelId t) {
  return mean_distance_gradient(net, z, A, t);
}

double hinge_loss(const EmbeddingNetwork& net, const Tensor& z, const embed::ReferenceSet& A,
                  LabelId t, double kappa) {
  const EmbeddedGallery g = EmbeddedGallery::build(net, A);
  if (!A.has_label(t)) throw LookupError("hinge_loss: unknown target label");
  return hinge_emb(g, net.forward(z), t, kappa);
}

Tensor hinge_loss_gradient(const EmbeddingNetwork& net, const Tensor& z,
                           const embed::ReferenceSet& A, LabelId t, double kappa) {
  const EmbeddedGallery g = EmbeddedGallery::build(net, A);
  Tensor emb_grad;
  hinge_emb(g, net.forward(z), t, kappa, &emb_grad);
  return net.input_gradient(z, emb_grad);
}

PerturbationOutcome pgd_attack(const EmbeddingNetwork& net, const Tensor& x,
                               const embed::ReferenceSet& A, const AttackConfig& cfg) {
  if (cfg.attack != AttackKind::Pgd) throw ArgumentError("pgd_attack: config is not pgd");
  cfg.validate();
  const EmbeddedGallery g = EmbeddedGallery::build(net, A);

  PerturbationOutcome out;
  out.original = x;
  out.mask = Tensor::zeros(x.shape);

  Tensor delta = Tensor::zeros(x.shape);
  out.objective_trace.push_back(eval_objective(net, g, x, cfg, false).value);

  for (int it = 0; it < cfg.iterations; ++it) {
    const Tensor z = x + delta;
    Objective obj = eval_objective(net, g, z, cfg, true);
    const double gnorm = l2_norm(obj.input_grad);
    if (gnorm > kDistEps) {
      // Ascend d' (untargeted) or descend G (targeted), normalized step.
      const double step = (cfg.targeted ? -1.0 : 1.0) * cfg.learning_rate / gnorm;
      for (std::size_t i = 0; i < delta.data.size(); ++i)
        delta.data[i] += step * obj.input_grad.data[i];
    }
    // Project onto the epsilon ball, then the pixel box (the box clip can
    // only shrink coordinates, so the ball constraint survives it).
    if (cfg.norm == NormKind::L2) {
      const double n = l2_norm(delta);
      if (n > cfg.epsilon) {
        const double s = cfg.epsilon / n;
        for (double& v : delta.data) v *= s;
      }
    } else {
      for (double& v : delta.data) v = std::clamp(v, -cfg.epsilon, cfg.epsilon);
    }
    double box_excess = 0.0;
    for (std::size_t i = 0; i < delta.data.size(); ++i) {
      const double zi = std::clamp(x.data[i] + delta.data[i], cfg.box_lo, cfg.box_hi);
      delta.data[i] = zi - x.data[i];
      const double z_now = x.data[i] + delta.data[i];
      box_excess = std::max({box_excess, z_now - cfg.box_hi, cfg.box_lo - z_now});
    }
    out.delta_l2_trace.push_back(l2_norm(delta));
    out.box_excess_trace.push_back(box_excess);
    out.objective_trace.push_back(eval_objective(net, g, x + delta, cfg, false).value);
  }

  out.mask = delta;
  const Tensor z_final = x + delta;
  if (cfg.targeted)
    out.feasible = hinge_emb(g, net.forward(z_final), cfg.target_label, cfg.kappa) <= 0.0;
  else
    out.feasible = surrogate_escapes_source(net, g, z_final, cfg.source_label);
  finish_norms(out);
  return out;
}

PerturbationOutcome cw_l2_attack(const EmbeddingNetwork& net, const Tensor& x,
                                 const embed::ReferenceSet& A, const AttackConfig& cfg) {
  if (cfg.attack != AttackKind::CwL2) throw ArgumentError("cw_l2_attack: config is not cw_l2");
  cfg.validate();
  const EmbeddedGallery g = EmbeddedGallery::build(net, A);
  const BoxTransform box{cfg.box_lo, cfg.box_hi};

  PerturbationOutcome out;
  out.original = x;
  out.mask = Tensor::zeros(x.shape);

  double best_norm = std::numeric_limits<double>::infinity();
  Tensor best_delta;
  Tensor last_delta = Tensor::zeros(x.shape);

  double c = cfg.initial_const;
  double c_lo = 0.0;
  double c_hi = std::numeric_limits<double>::infinity();

  const std::vector<double> w0 = box.to_w(x);
  for (int round = 0; round < cfg.search_steps; ++round) {
    std::vector<double> w = w0;
    Adam adam(w.size(), cfg.learning_rate);
    bool round_feasible = false;

    for (int it = 0; it <= cfg.iterations; ++it) {
      const Tensor z = box.to_z(w, x.shape);
      const Tensor delta = z - x;

      const Tensor e = net.forward(z);
      Tensor emb_grad;
      const double gval = hinge_emb(g, e, cfg.target_label, cfg.kappa,
                                    it < cfg.iterations ? &emb_grad : nullptr);
      const double dn = l2_norm(delta);
      out.objective_trace.push_back(dn * dn + c * gval);

      if (gval <= 0.0) {
        round_feasible = true;
        if (dn < best_norm) {
          best_norm = dn;
          best_delta = delta;
        }
      }
      if (it == cfg.iterations) {
        last_delta = delta;
        break;
      }

      Tensor zgrad = net.input_gradient(z, emb_grad);
      std::vector<double> wgrad(w.size());
      for (std::size_t i = 0; i < w.size(); ++i)
        wgrad[i] = (2.0 * delta.data[i] + c * zgrad.data[i]) * box.dz_dw(w[i]);
      adam.step(w, wgrad);
    }

    if (round_feasible) {
      c_hi = c;
      c = 0.5 * (c_lo + c_hi);
    } else {
      c_lo = c;
      c = std::isinf(c_hi) ? c * 10.0 : 0.5 * (c_lo + c_hi);
    }
  }

  out.feasible = std::isfinite(best_norm);
  out.mask = out.feasible ? best_delta : last_delta;
  finish_norms(out);
  return out;
}

PerturbationOutcome cw_linf_attack(const EmbeddingNetwork& net, const Tensor& x,
                                   const embed::ReferenceSet& A, const AttackConfig& cfg) {
  if (cfg.attack != AttackKind::CwLinf)
    throw ArgumentError("cw_linf_attack: config is not cw_linf");
  cfg.validate();
  const EmbeddedGallery g = EmbeddedGallery::build(net, A);
  const BoxTransform box{cfg.box_lo, cfg.box_hi};

  PerturbationOutcome out;
  out.original = x;

  double tau = cfg.box_hi - cfg.box_lo;  // largest possible |delta_i|
  double c = cfg.initial_const;
  double best_linf = std::numeric_limits<double>::infinity();
  Tensor best_delta;
  Tensor last_delta = Tensor::zeros(x.shape);

  // Warm-started w across shrink rounds.
  std::vector<double> w = box.to_w(x);
  for (int round = 0; round < cfg.search_steps; ++round) {
    Adam adam(w.size(), cfg.learning_rate);
    double round_best = std::numeric_limits<double>::infinity();
    Tensor round_delta;

    for (int it = 0; it <= cfg.iterations; ++it) {
      const Tensor z = box.to_z(w, x.shape);
      const Tensor delta = z - x;

      const Tensor e = net.forward(z);
      Tensor emb_grad;
      const double gval = hinge_emb(g, e, cfg.target_label, cfg.kappa,
                                    it < cfg.iterations ? &emb_grad : nullptr);
      double penalty = 0.0;
      for (double v : delta.data) penalty += std::max(std::abs(v) - tau, 0.0);
      out.objective_trace.push_back(c * gval + penalty);

      if (gval <= 0.0) {
        const double n = linf_norm(delta);
        if (n < round_best) {
          round_best = n;
          round_delta = delta;
        }
      }
      if (it == cfg.iterations) {
        last_delta = delta;
        break;
      }

      Tensor zgrad = net.input_gradient(z, emb_grad);
      std::vector<double> wgrad(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double di = delta.data[i];
        const double pen_grad = std::abs(di) > tau ? (di > 0.0 ? 1.0 : -1.0) : 0.0;
        wgrad[i] = (c * zgrad.data[i] + pen_grad) * box.dz_dw(w[i]);
      }
      adam.step(w, wgrad);
    }

    if (std::isfinite(round_best)) {
      if (round_best < best_linf) {
        best_linf = round_best;
        best_delta = round_delta;
      }
      tau = 0.9 * std::min(tau, round_best);
    } else {
      c *= 10.0;
    }
  }

  out.feasible = std::isfinite(best_linf);
  out.mask = out.feasible ? best_delta : last_delta;
  finish_norms(out);
  return out;
}

PerturbationOutcome run_attack(const EmbeddingNetwork& net, const Tensor& x,
                               const embed::ReferenceSet& A, const AttackConfig& cfg) {
  switch (cfg.attack) {
    case AttackKind::Pgd: return pgd_attack(net, x, A, cfg);
    case AttackKind::CwL2: return cw_l2_attack(net, x, A, cfg);
    case AttackKind::CwLinf: return cw_linf_attack(net, x, A, cfg);
  }
  throw ArgumentError("unknown attack kind");
}

Tensor amplify(const Tensor& x, const Tensor& delta, double alpha) {
  require_same_shape(x, delta, "amplify");
  if (alpha < 1.0) throw ArgumentError("amplify: alpha must be >= 1");
  Tensor out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::clamp(x.data[i] + alpha * delta.data[i], 0.0, 1.0);
  return out;
}

}  // namespace veil::attack
