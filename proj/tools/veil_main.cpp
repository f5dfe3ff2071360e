// veil: adversarial-perturbation toolkit for metric-embedding face
// verification. Subcommands: gen-data, train, attack, sweep, eval, serve,
// verify. Every run writes run_manifest.json (deterministic) and
// run_timing.json (wall-clock per stage) under the output directory.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "veil/attacks.hpp"
#include "veil/dataset_io.hpp"
#include "veil/imageio.hpp"
#include "veil/pipeline.hpp"
#include "veil/service.hpp"
#include "veil/transfer.hpp"
#include "veil/weights_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kConfigVersion = 1;

struct StageTimer {
  std::map<std::string, double> seconds;

  template <typename Fn>
  auto stage(const std::string& name, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = fn();
    seconds[name] +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
  }
};

struct RunContext {
  std::string subcommand;
  fs::path out_dir;
  json config;
  std::vector<std::string> outputs;
  StageTimer timer;
  int verbosity = 0;

  void note_output(const fs::path& p) { outputs.push_back(p.string()); }

  void log(const std::string& msg) const {
    if (verbosity > 0) std::cerr << "[veil] " << msg << "\n";
  }
};

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw veil::IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw veil::ArgumentError("config not found: " + path);
  json cfg = json::parse(in, nullptr, false);
  if (cfg.is_discarded()) throw veil::ArgumentError("config is not valid JSON: " + path);
  if (!cfg.contains("version") || cfg.at("version").get<int>() != kConfigVersion)
    throw veil::ArgumentError("config must carry \"version\": 1");
  return cfg;
}

// The manifest is deterministic; wall-clock goes to run_timing.json.
void write_manifest(RunContext& ctx, const std::string& status) {
  json manifest;
  manifest["version"] = kConfigVersion;
  manifest["subcommand"] = ctx.subcommand;
  manifest["status"] = status;
  manifest["config"] = ctx.config;
  manifest["outputs"] = ctx.outputs;
  write_json_file(ctx.out_dir / "run_manifest.json", manifest);

  json timing;
  timing["stages_seconds"] = ctx.timer.seconds;
  write_json_file(ctx.out_dir / "run_timing.json", timing);
}

veil::embed::Dataset load_dataset_stage(RunContext& ctx, const std::string& path) {
  ctx.log("loading dataset " + path);
  return ctx.timer.stage("load_dataset", [&] { return veil::embed::load_dataset(path); });
}

std::vector<veil::nn::LayerSpec> layers_from_json(const json& arr) {
  std::vector<veil::nn::LayerSpec> layers;
  for (const json& lj : arr) {
    const std::string kind = lj.at("kind").get<std::string>();
    if (kind == "dense")
      layers.push_back(veil::nn::LayerSpec::dense(lj.at("units").get<int>()));
    else if (kind == "conv2d")
      layers.push_back(veil::nn::LayerSpec::conv2d(lj.at("out_channels").get<int>(),
                                                   lj.at("kernel").get<int>(),
                                                   lj.value("stride", 1)));
    else if (kind == "relu")
      layers.push_back(veil::nn::LayerSpec::relu());
    else if (kind == "flatten")
      layers.push_back(veil::nn::LayerSpec::flatten());
    else if (kind == "l2normalize")
      layers.push_back(veil::nn::LayerSpec::l2normalize());
    else
      throw veil::ArgumentError("unknown layer kind in arch: " + kind);
  }
  return layers;
}

veil::service::Calibration calibrate_from_dataset(const veil::nn::EmbeddingNetwork& net,
                                                  const veil::embed::Dataset& ds,
                                                  std::size_t pair_count, std::uint64_t seed) {
  std::vector<std::pair<veil::Tensor, veil::Tensor>> genuine, impostor;
  veil::xfer::make_calibration_pairs(ds.images, pair_count, seed, genuine, impostor);
  return veil::service::calibrate(net, genuine, impostor);
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(RunContext& ctx) {
  veil::xfer::SynthSpec spec;
  spec.identities = ctx.config.value("identities", 10);
  spec.per_identity = ctx.config.value("per_identity", 20);
  spec.height = ctx.config.value("height", 16);
  spec.width = ctx.config.value("width", 16);
  spec.shift_px = ctx.config.value("shift_px", 1);
  spec.noise_sigma = ctx.config.value("noise_sigma", 0.03);
  spec.seed = ctx.config.value("seed", std::uint64_t{0});

  const auto ds = ctx.timer.stage("generate", [&] { return veil::xfer::gen_identities(spec); });
  const fs::path dir = ctx.out_dir / "dataset";
  ctx.timer.stage("save", [&] {
    veil::embed::save_dataset(dir.string(), ds);
    return 0;
  });
  ctx.note_output(dir / "manifest.json");
  std::cout << "generated " << ds.images.size() << " images across " << ds.label_names.size()
            << " identities under " << dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

int cmd_train(RunContext& ctx) {
  const auto ds = load_dataset_stage(ctx, ctx.config.at("dataset").get<std::string>());

  const json& arch = ctx.config.at("arch");
  veil::nn::EmbeddingNetwork net(arch.at("input").get<std::vector<int>>(),
                                 layers_from_json(arch.at("layers")));
  net.init_parameters(ctx.config.value("init_seed", std::uint64_t{1}));

  veil::embed::TrainConfig tc;
  tc.loss = ctx.config.value("loss", std::string("triplet")) == "contrastive"
                ? veil::embed::TrainConfig::Loss::Contrastive
                : veil::embed::TrainConfig::Loss::Triplet;
  tc.margin = ctx.config.value("margin", 0.4);
  tc.epochs = ctx.config.value("epochs", 40);
  tc.batch_size = ctx.config.value("batch_size", 8);
  tc.learning_rate = ctx.config.value("learning_rate", 0.05);
  tc.seed = ctx.config.value("seed", std::uint64_t{0});

  veil::embed::TrainReport report;
  const auto trained =
      ctx.timer.stage("train", [&] { return veil::embed::train(net, ds.images, tc, &report); });

  const fs::path wpath = ctx.out_dir / ctx.config.value("weights_out", std::string("model.veilw"));
  veil::nn::save_weights(wpath.string(), trained);
  ctx.note_output(wpath);

  json rj;
  rj["epoch_loss"] = report.epoch_loss;
  rj["parameter_count"] = trained.parameter_count();
  write_json_file(ctx.out_dir / "train_report.json", rj);
  ctx.note_output(ctx.out_dir / "train_report.json");
  std::cout << "trained " << trained.parameter_count() << " parameters; weights at "
            << wpath.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ attack

int cmd_attack(RunContext& ctx) {
  const auto ds = load_dataset_stage(ctx, ctx.config.at("gallery").get<std::string>());
  const veil::embed::ReferenceSet gallery(ds.images);
  const auto net = veil::nn::load_weights(ctx.config.at("surrogate").get<std::string>());
  if (net.input_shape().size() != 3 || net.input_shape()[2] != 3)
    throw veil::ArgumentError("attack expects a surrogate with (H,W,3) input");

  veil::img::Photo photo{veil::img::read_image(ctx.config.at("photo").get<std::string>()),
                         ctx.config.at("photo").get<std::string>()};

  veil::img::BoundingBox box{0, 0, photo.pixels.shape[1], photo.pixels.shape[0]};
  if (ctx.config.contains("box")) {
    std::ifstream in(ctx.config.at("box").get<std::string>());
    if (!in) throw veil::ArgumentError("box sidecar not found");
    const json bj = json::parse(in);
    box = {bj.at("x0").get<int>(), bj.at("y0").get<int>(), bj.at("w").get<int>(),
           bj.at("h").get<int>()};
  }

  veil::attack::AttackConfig acfg =
      veil::attack::attack_config_from_json(ctx.config.value("attack", json::object()));
  if (ctx.config.contains("source"))
    acfg.source_label = ds.id_of(ctx.config.at("source").get<std::string>());
  if (ctx.config.contains("target")) {
    acfg.target_label = ds.id_of(ctx.config.at("target").get<std::string>());
    acfg.targeted = true;
  }
  const double alpha = ctx.config.value("alpha", 1.0);

  const veil::Tensor face = veil::img::crop(photo, box);
  const veil::Tensor face_net = (face.shape == net.input_shape())
                                    ? face
                                    : veil::img::resize_bilinear(face, net.input_shape()[0],
                                                                 net.input_shape()[1]);

  ctx.log("running " + veil::attack::attack_kind_name(acfg.attack));
  auto outcome = ctx.timer.stage(
      "attack", [&] { return veil::attack::run_attack(net, face_net, gallery, acfg); });
  outcome.set_alpha(alpha);

  // Cropped output: perturbed face at network resolution.
  const veil::Tensor cropped = veil::img::apply_cropped(face_net, outcome.mask, alpha);
  // Uncropped output: mask resized back onto the original photo.
  double clipped_fraction = 0.0;
  const veil::img::Photo uncropped =
      veil::img::apply_uncropped(photo, box, outcome.mask, alpha, &clipped_fraction);

  veil::img::write_png((ctx.out_dir / "cropped.png").string(), cropped);
  veil::img::write_f32((ctx.out_dir / "cropped.f32").string(), cropped);
  veil::img::write_png((ctx.out_dir / "uncropped.png").string(), uncropped.pixels);
  veil::img::write_f32((ctx.out_dir / "uncropped.f32").string(), uncropped.pixels);
  veil::img::write_f32((ctx.out_dir / "mask.f32").string(), outcome.mask);
  for (const char* name : {"cropped.png", "cropped.f32", "uncropped.png", "uncropped.f32",
                           "mask.f32", "mask.png", "mask_meta.json"})
    ctx.note_output(ctx.out_dir / name);

  // PNG mask preview: remap delta to [0,1]; knots recorded in the sidecar.
  double dmin = 0.0, dmax = 0.0;
  for (double v : outcome.mask.data) {
    dmin = std::min(dmin, v);
    dmax = std::max(dmax, v);
  }
  veil::Tensor remapped = outcome.mask;
  const double range = dmax - dmin;
  for (double& v : remapped.data) v = range > 0.0 ? (v - dmin) / range : 0.0;
  veil::img::write_png((ctx.out_dir / "mask.png").string(), remapped);

  json meta;
  meta["mask_min"] = dmin;
  meta["mask_max"] = dmax;
  meta["alpha"] = outcome.alpha;
  meta["l2_norm"] = outcome.l2;
  meta["linf_norm"] = outcome.linf;
  meta["feasible"] = outcome.feasible;
  meta["clipped_fraction_uncropped"] = clipped_fraction;
  meta["iterations_traced"] = outcome.objective_trace.size();
  meta["attack"] = veil::attack::attack_config_to_json(acfg);
  write_json_file(ctx.out_dir / "mask_meta.json", meta);

  std::cout << "attack done: |alpha*delta|_2 = " << outcome.l2
            << ", feasible = " << (outcome.feasible ? "true" : "false") << "\n";
  return 0;
}

// ------------------------------------------------------------------- sweep

int cmd_sweep(RunContext& ctx) {
  const auto ds = load_dataset_stage(ctx, ctx.config.at("dataset").get<std::string>());
  const auto surrogate = veil::nn::load_weights(ctx.config.at("surrogate").get<std::string>());

  veil::xfer::SweepGrid grid;
  grid.attack = ctx.config.value("attack", std::string("cw_l2"));
  grid.norm_p = ctx.config.value("norm", 2);
  if (ctx.config.contains("kappas"))
    grid.kappas = ctx.config.at("kappas").get<std::vector<double>>();
  if (ctx.config.contains("epsilons"))
    grid.epsilons = ctx.config.at("epsilons").get<std::vector<double>>();
  if (ctx.config.contains("alphas"))
    grid.alphas = ctx.config.at("alphas").get<std::vector<double>>();
  if (ctx.config.contains("iterations"))
    grid.iterations = ctx.config.at("iterations").get<std::vector<int>>();
  grid.search_steps = ctx.config.value("search_steps", 8);
  grid.learning_rate = ctx.config.value("learning_rate", 0.1);
  grid.initial_const = ctx.config.value("initial_const", 0.3);
  grid.targeted = ctx.config.value("targeted", true);
  grid.seed = ctx.config.value("seed", std::uint64_t{0});
  grid.jobs = ctx.config.value("jobs", 1);

  if (ctx.config.contains("pairs") && ctx.config.at("pairs").is_array()) {
    for (const json& pj : ctx.config.at("pairs"))
      grid.pairs.emplace_back(ds.id_of(pj.at(0).get<std::string>()),
                              ds.id_of(pj.at(1).get<std::string>()));
  } else {
    // all ordered source-target pairs
    const int n = static_cast<int>(ds.label_names.size());
    for (int s = 0; s < n; ++s)
      for (int t = 0; t < n; ++t)
        if (s != t) grid.pairs.emplace_back(s, t);
  }

  std::vector<veil::xfer::VictimModel> victims;
  const std::size_t cal_pairs = ctx.config.value("calibration_pairs", std::size_t{60});
  const std::uint64_t cal_seed = ctx.config.value("calibration_seed", std::uint64_t{1});
  for (const json& vj : ctx.config.at("victims")) {
    const std::string id = vj.at("id").get<std::string>();
    if (vj.contains("url")) {
      victims.push_back(veil::xfer::RemoteVictim{id, vj.at("url").get<std::string>()});
    } else {
      auto vnet = veil::nn::load_weights(vj.at("weights").get<std::string>());
      auto cal = calibrate_from_dataset(vnet, ds, cal_pairs, cal_seed);
      victims.push_back(veil::xfer::LocalVictim{id, std::move(vnet), cal});
    }
  }

  ctx.log("sweep over " + std::to_string(grid.pairs.size()) + " pairs");
  const auto result = ctx.timer.stage(
      "sweep", [&] { return veil::xfer::run_sweep(grid, surrogate, victims, ds); });

  const fs::path csv_path = ctx.out_dir / "report.csv";
  {
    std::ofstream csv(csv_path);
    if (!csv) throw veil::IoError("cannot write " + csv_path.string());
    veil::xfer::write_csv(csv, result.records, ds);
  }
  ctx.note_output(csv_path);

  // Per-victim confidence-vs-norm curve data for external plotting.
  const bool is_pgd_attack = grid.attack == "pgd";
  for (const json& vj : ctx.config.at("victims")) {
    const std::string id = vj.at("id").get<std::string>();
    const fs::path curve_path = ctx.out_dir / ("curves_" + id + ".csv");
    std::ofstream curve(curve_path);
    if (!curve) throw veil::IoError("cannot write " + curve_path.string());
    curve << "norm," << (is_pgd_attack ? "epsilon" : "kappa") << ",confidence\n";
    char line[96];
    for (const auto& rec : result.records) {
      for (const auto& vr : rec.victims) {
        if (vr.victim_id != id) continue;
        std::snprintf(line, sizeof(line), "%.10g,%.10g,%.10g\n", rec.l2_norm,
                      is_pgd_attack ? rec.epsilon : rec.kappa, vr.confidence);
        curve << line;
      }
    }
    ctx.note_output(curve_path);
  }

  json summary;
  summary["records"] = result.records.size();
  summary["cell_errors"] = result.cell_errors;
  if (!result.records.empty()) {
    json per_victim = json::object();
    for (const json& vj : ctx.config.at("victims")) {
      const std::string id = vj.at("id").get<std::string>();
      per_victim[id] = grid.targeted ? veil::xfer::success_targeted(result.records, id)
                                     : veil::xfer::success_untargeted(result.records, id);
    }
    summary[grid.targeted ? "success_targeted" : "success_untargeted"] = per_victim;
  }
  write_json_file(ctx.out_dir / "summary.json", summary);
  ctx.note_output(ctx.out_dir / "summary.json");

  std::cout << "sweep wrote " << result.records.size() << " records ("
            << result.cell_errors.size() << " failed cells) to " << csv_path.string() << "\n";
  return result.cell_errors.empty() ? 0 : 1;
}

// -------------------------------------------------------------------- eval

int cmd_eval(RunContext& ctx) {
  const std::string victim = ctx.config.at("victim").get<std::string>();
  const veil::Tensor a = veil::img::read_image(ctx.config.at("image_a").get<std::string>());
  const veil::Tensor b = veil::img::read_image(ctx.config.at("image_b").get<std::string>());

  json out;
  if (victim.rfind("http", 0) == 0) {
    veil::service::VerifyClient client(victim);
    const auto v = ctx.timer.stage("query", [&] { return client.verify(a, b); });
    out["confidence"] = v.confidence;
    out["threshold"] = v.threshold;
    out["matched"] = v.matched;
    out["label_a"] = client.recognize(a, 1).front().first;
    out["label_b"] = client.recognize(b, 1).front().first;
  } else {
    const auto ds = load_dataset_stage(ctx, ctx.config.at("gallery").get<std::string>());
    const auto net = veil::nn::load_weights(victim);
    const auto cal =
        calibrate_from_dataset(net, ds, ctx.config.value("calibration_pairs", std::size_t{60}),
                               ctx.config.value("calibration_seed", std::uint64_t{1}));
    const auto v =
        ctx.timer.stage("query", [&] { return veil::service::local_verify(net, cal, a, b); });
    out["confidence"] = v.confidence;
    out["threshold"] = v.threshold;
    out["matched"] = v.matched;
    const veil::embed::ReferenceSet gallery(ds.images);
    out["label_a"] = ds.name_of(veil::embed::predict(net, gallery, a));
    out["label_b"] = ds.name_of(veil::embed::predict(net, gallery, b));
  }
  write_json_file(ctx.out_dir / "eval.json", out);
  ctx.note_output(ctx.out_dir / "eval.json");
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------- serve

volatile std::sig_atomic_t g_stop_flag = 0;

int cmd_serve(RunContext& ctx) {
  const auto ds = load_dataset_stage(ctx, ctx.config.at("gallery").get<std::string>());
  auto net = veil::nn::load_weights(ctx.config.at("weights").get<std::string>());
  const auto cal =
      calibrate_from_dataset(net, ds, ctx.config.value("calibration_pairs", std::size_t{60}),
                             ctx.config.value("calibration_seed", std::uint64_t{1}));
  veil::embed::ReferenceSet gallery(ds.images);

  veil::service::VictimService svc(std::move(net), std::move(gallery), ds.label_names, cal);
  const std::string host = ctx.config.value("host", std::string("127.0.0.1"));
  const int port = svc.start(host, ctx.config.value("port", 0));
  std::cout << json{{"serving", host}, {"port", port}}.dump() << std::endl;

  write_manifest(ctx, "serving");
  std::signal(SIGINT, [](int) { g_stop_flag = 1; });
  std::signal(SIGTERM, [](int) { g_stop_flag = 1; });
  while (!g_stop_flag) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  svc.stop();
  std::cout << "served " << svc.queries_served() << " queries\n";
  return 0;
}

// ------------------------------------------------------------------ verify

int cmd_verify(RunContext& ctx, const std::string& victim_url, const std::string& img_a,
               const std::string& img_b) {
  if (victim_url.empty()) throw veil::ArgumentError("verify needs --victim URL");
  veil::service::VerifyClient client(victim_url);
  const veil::Tensor a = veil::img::read_image(img_a);
  const veil::Tensor b = veil::img::read_image(img_b);
  const auto v = ctx.timer.stage("query", [&] { return client.verify(a, b); });
  const json out = {
      {"confidence", v.confidence}, {"threshold", v.threshold}, {"matched", v.matched}};
  write_json_file(ctx.out_dir / "verify.json", out);
  ctx.note_output(ctx.out_dir / "verify.json");
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"veil: adversarial perturbations against metric-embedding face verification"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", victim_override, attack_override, target_override;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> jobs_override, iters_override;
  std::optional<double> alpha_override, kappa_override;
  int verbosity = 0;

  app.add_option("--config", config_path, "JSON config (version 1)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed_override, "seed override");
  app.add_option("--jobs", jobs_override, "parallel sweep cells");
  app.add_option("--alpha", alpha_override, "amplification override");
  app.add_option("--kappa", kappa_override, "margin override");
  app.add_option("--iters", iters_override, "iteration-count override");
  app.add_option("--attack", attack_override, "attack kind override (pgd|cw_l2|cw_linf)");
  app.add_option("--target", target_override, "target label override");
  app.add_option("--victim", victim_override, "victim URL or weights path override");
  app.add_flag("-v,--verbose", verbosity, "verbose logging");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic identity dataset");
  auto* train = app.add_subcommand("train", "train an embedding network");
  auto* attack = app.add_subcommand("attack", "craft a perturbation for one photo");
  auto* sweep = app.add_subcommand("sweep", "run a transferability sweep");
  auto* eval = app.add_subcommand("eval", "score a pair of images against a victim");
  auto* serve = app.add_subcommand("serve", "run the mock verification service");
  auto* verify = app.add_subcommand("verify", "query a running service with two images");
  std::string verify_a, verify_b;
  verify->add_option("image_a", verify_a, "first image")->required();
  verify->add_option("image_b", verify_b, "second image")->required();

  // Global flags remain valid after the subcommand name.
  for (CLI::App* sub : {gen, train, attack, sweep, eval, serve, verify}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  RunContext ctx;
  ctx.verbosity = verbosity;
  ctx.out_dir = out_dir;

  try {
    std::error_code ec;
    fs::create_directories(ctx.out_dir, ec);
    if (ec) throw veil::IoError("cannot create output directory: " + out_dir);

    ctx.config =
        config_path.empty() ? json{{"version", kConfigVersion}} : load_config(config_path);

    // Flags override config fields.
    if (seed_override) ctx.config["seed"] = *seed_override;
    if (jobs_override) ctx.config["jobs"] = *jobs_override;
    if (!victim_override.empty()) ctx.config["victim"] = victim_override;
    if (!target_override.empty()) ctx.config["target"] = target_override;
    if (alpha_override) {
      ctx.config["alpha"] = *alpha_override;
      ctx.config["alphas"] = std::vector<double>{*alpha_override};
    }
    if (!attack_override.empty()) {
      if (!ctx.config.contains("attack") || !ctx.config["attack"].is_object()) {
        if (ctx.config.contains("attack") && ctx.config["attack"].is_string())
          ctx.config["attack"] = attack_override;  // sweep-style flat field
        else
          ctx.config["attack"] = json{{"attack", attack_override}};
      } else {
        ctx.config["attack"]["attack"] = attack_override;
      }
    }
    if (kappa_override) {
      if (ctx.config.contains("attack") && ctx.config["attack"].is_object())
        ctx.config["attack"]["kappa"] = *kappa_override;
      ctx.config["kappas"] = std::vector<double>{*kappa_override};
    }
    if (iters_override) {
      if (ctx.config.contains("attack") && ctx.config["attack"].is_object())
        ctx.config["attack"]["iterations"] = *iters_override;
      ctx.config["iterations"] = std::vector<int>{*iters_override};
    }

    int rc = 0;
    if (gen->parsed()) {
      ctx.subcommand = "gen-data";
      rc = cmd_gen_data(ctx);
    } else if (train->parsed()) {
      ctx.subcommand = "train";
      rc = cmd_train(ctx);
    } else if (attack->parsed()) {
      ctx.subcommand = "attack";
      rc = cmd_attack(ctx);
    } else if (sweep->parsed()) {
      ctx.subcommand = "sweep";
      rc = cmd_sweep(ctx);
    } else if (eval->parsed()) {
      ctx.subcommand = "eval";
      rc = cmd_eval(ctx);
    } else if (serve->parsed()) {
      ctx.subcommand = "serve";
      return cmd_serve(ctx);  // writes its own manifest before blocking
    } else if (verify->parsed()) {
      ctx.subcommand = "verify";
      rc = cmd_verify(ctx, victim_override, verify_a, verify_b);
    }
    write_manifest(ctx, rc == 0 ? "ok" : "failed");
    return rc;
  } catch (const veil::ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    if (!ctx.subcommand.empty()) {
      try {
        write_manifest(ctx, "usage-error");
      } catch (...) {
      }
    }
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "usage error: bad config: " << e.what() << "\n";
    if (!ctx.subcommand.empty()) {
      try {
        write_manifest(ctx, "usage-error");
      } catch (...) {
      }
    }
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (!ctx.subcommand.empty()) {
      try {
        write_manifest(ctx, "error");
      } catch (...) {
      }
    }
    return 1;
  }
}
