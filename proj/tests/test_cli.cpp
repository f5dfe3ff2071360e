// End-to-end tests that drive the installed CLI binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <thread>

#include "veil/imageio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int status = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(VEIL_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe))
    result.output += buf.data();
  const int rc = pclose(pipe);
  result.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return result;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << text;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// CSV text with the volatile trailing seconds field removed from each row.
std::string strip_seconds(const std::string& csv) {
  std::istringstream lines(csv);
  std::string line, out;
  while (std::getline(lines, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

// One shared scratch tree: gen-data + surrogate + victim, built once.
struct Workspace {
  fs::path root;

  Workspace() {
    root = fs::path("cli_scratch");
    fs::remove_all(root);
    fs::create_directories(root);

    write_file(root / "gen.json",
               R"({"version":1,"identities":4,"per_identity":10,"height":12,"width":12,
                   "noise_sigma":0.03,"shift_px":1,"seed":7})");
    REQUIRE(run("gen-data --config " + (root / "gen.json").string() + " --out " +
                (root / "data").string())
                .status == 0);

    const std::string arch =
        R"("arch":{"input":[12,12,3],"layers":[
             {"kind":"conv2d","out_channels":4,"kernel":3,"stride":2},{"kind":"relu"},
             {"kind":"flatten"},{"kind":"dense","units":8},{"kind":"l2normalize"}]})";
    write_file(root / "train_s.json",
               R"({"version":1,"dataset":")" + (root / "data/dataset/manifest.json").string() +
                   R"(",)" + arch +
                   R"(,"loss":"triplet","margin":0.4,"epochs":40,"batch_size":8,
                   "learning_rate":0.05,"seed":3,"init_seed":11,"weights_out":"surrogate.veilw"})");
    REQUIRE(run("train --config " + (root / "train_s.json").string() + " --out " +
                (root / "models").string())
                .status == 0);

    const std::string varch =
        R"("arch":{"input":[12,12,3],"layers":[
             {"kind":"conv2d","out_channels":3,"kernel":3,"stride":2},{"kind":"relu"},
             {"kind":"flatten"},{"kind":"dense","units":8},{"kind":"l2normalize"}]})";
    write_file(root / "train_v.json",
               R"({"version":1,"dataset":")" + (root / "data/dataset/manifest.json").string() +
                   R"(",)" + varch +
                   R"(,"loss":"triplet","margin":0.4,"epochs":40,"batch_size":8,
                   "learning_rate":0.05,"seed":13,"init_seed":29,"weights_out":"victim.veilw"})");
    REQUIRE(run("train --config " + (root / "train_v.json").string() + " --out " +
                (root / "models").string())
                .status == 0);
  }

  std::string dataset() const { return (root / "data/dataset/manifest.json").string(); }
  std::string surrogate() const { return (root / "models/surrogate.veilw").string(); }
  std::string victim() const { return (root / "models/victim.veilw").string(); }
  std::string probe() const { return (root / "data/dataset/id_00/img_0009.ppm").string(); }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("").status == 2);
  CHECK(run("train --config does_not_exist.json").status == 2);
  CHECK(run("frobnicate").status == 2);
  // config missing a required key
  auto& ws = workspace();
  write_file(ws.root / "bad.json", R"({"version":1})");
  CHECK(run("train --config " + (ws.root / "bad.json").string() + " --out " +
            (ws.root / "bad_out").string())
            .status == 2);
  // config without the version field
  write_file(ws.root / "nover.json", R"({"identities":3})");
  CHECK(run("gen-data --config " + (ws.root / "nover.json").string()).status == 2);
}

TEST_CASE("runtime failures exit with code 1") {
  auto& ws = workspace();
  write_file(ws.root / "missing_data.json",
             R"({"version":1,"dataset":"nope/manifest.json","arch":{"input":[4],"layers":
                 [{"kind":"dense","units":2}]},"epochs":1})");
  CHECK(run("train --config " + (ws.root / "missing_data.json").string() + " --out " +
            (ws.root / "rf_out").string())
            .status == 1);
}

TEST_CASE("gen-data is deterministic and writes a loadable dataset") {
  auto& ws = workspace();
  REQUIRE(run("gen-data --config " + (ws.root / "gen.json").string() + " --out " +
              (ws.root / "data2").string())
              .status == 0);
  CHECK(slurp(ws.root / "data/dataset/manifest.json") ==
        slurp(ws.root / "data2/dataset/manifest.json"));
  CHECK(slurp(ws.root / "data/dataset/id_02/img_0003.ppm") ==
        slurp(ws.root / "data2/dataset/id_02/img_0003.ppm"));
  CHECK(fs::exists(ws.root / "data/run_manifest.json"));
  CHECK(fs::exists(ws.root / "data/run_timing.json"));
}

TEST_CASE("attack emits cropped, uncropped, and mask artifacts") {
  auto& ws = workspace();
  write_file(ws.root / "atk.json",
             R"({"version":1,"surrogate":")" + ws.surrogate() + R"(","gallery":")" +
                 ws.dataset() + R"(","photo":")" + ws.probe() +
                 R"(","source":"id_00","target":"id_01","alpha":2.0,
                 "attack":{"attack":"cw_l2","iterations":50,"search_steps":4,"kappa":1.0,
                           "learning_rate":0.1,"initial_const":0.3,"targeted":true}})");
  const auto res =
      run("attack --config " + (ws.root / "atk.json").string() + " --out " +
          (ws.root / "atk_out").string());
  REQUIRE(res.status == 0);
  for (const char* f : {"cropped.png", "cropped.f32", "uncropped.png", "uncropped.f32",
                        "mask.png", "mask.f32", "mask_meta.json", "run_manifest.json"})
    CHECK(fs::exists(ws.root / "atk_out" / f));

  const json meta = json::parse(slurp(ws.root / "atk_out/mask_meta.json"));
  CHECK(meta.at("feasible").get<bool>());
  CHECK(meta.at("l2_norm").get<double>() > 0.0);
  CHECK(meta.at("mask_min").get<double>() <= 0.0);
  CHECK(meta.at("mask_max").get<double>() >= 0.0);

  // raw mask sidecar reapplies exactly: face + mask recertifies the PNG path
  const auto mask = veil::img::read_f32((ws.root / "atk_out/mask.f32").string());
  CHECK(mask.shape == std::vector<int>{12, 12, 3});
}

TEST_CASE("attack with a vanishing PGD ball returns the input image") {
  auto& ws = workspace();
  write_file(ws.root / "atk0.json",
             R"({"version":1,"surrogate":")" + ws.surrogate() + R"(","gallery":")" +
                 ws.dataset() + R"(","photo":")" + ws.probe() +
                 R"(","source":"id_00","alpha":1.0,
                 "attack":{"attack":"pgd","iterations":5,"perturbation_bound":1e-9,
                           "learning_rate":0.1,"targeted":false}})");
  const auto res = run("attack --config " + (ws.root / "atk0.json").string() + " --out " +
                       (ws.root / "atk0_out").string());
  REQUIRE(res.status == 0);
  const auto original = veil::img::read_image(ws.probe());
  const auto cropped = veil::img::read_image((ws.root / "atk0_out/cropped.png").string());
  CHECK(veil::bit_equal(original, cropped));
}

TEST_CASE("sweep: 1x1 grid gives one data row; reruns are byte-stable") {
  auto& ws = workspace();
  write_file(ws.root / "sweep1.json",
             R"({"version":1,"dataset":")" + ws.dataset() + R"(","surrogate":")" +
                 ws.surrogate() + R"(","victims":[{"id":"v0","weights":")" + ws.victim() +
                 R"("}],"attack":"pgd","epsilons":[0.5],"alphas":[2.0],"iterations":[10],
                 "targeted":false,"pairs":[["id_00","id_01"]],"seed":4})");
  const std::string cmd = "sweep --config " + (ws.root / "sweep1.json").string() + " --out " +
                          (ws.root / "sw1").string();
  REQUIRE(run(cmd).status == 0);
  const std::string csv = slurp(ws.root / "sw1/report.csv");
  const std::string manifest = slurp(ws.root / "sw1/run_manifest.json");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one row

  // identical argv + config + seed: byte-identical outside the seconds column
  REQUIRE(run(cmd).status == 0);
  CHECK(strip_seconds(csv) == strip_seconds(slurp(ws.root / "sw1/report.csv")));
  CHECK(manifest == slurp(ws.root / "sw1/run_manifest.json"));
}

TEST_CASE("sweep respects --jobs and flag overrides") {
  auto& ws = workspace();
  write_file(ws.root / "sweepj.json",
             R"({"version":1,"dataset":")" + ws.dataset() + R"(","surrogate":")" +
                 ws.surrogate() + R"(","victims":[{"id":"v0","weights":")" + ws.victim() +
                 R"("}],"attack":"pgd","epsilons":[0.3,0.6],"alphas":[1.0,2.0],
                 "iterations":[8],"targeted":false,
                 "pairs":[["id_00","id_01"],["id_01","id_02"]],"seed":4})");
  REQUIRE(run("sweep --config " + (ws.root / "sweepj.json").string() + " --jobs 3 --out " +
              (ws.root / "swj").string())
              .status == 0);
  const std::string csv = slurp(ws.root / "swj/report.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);  // header + 2*2*2 rows

  // --iters narrows the iteration axis
  REQUIRE(run("sweep --config " + (ws.root / "sweepj.json").string() +
              " --iters 4 --jobs 2 --out " + (ws.root / "swi").string())
              .status == 0);
  CHECK(slurp(ws.root / "swi/report.csv").find(",4,id_00,") != std::string::npos);
}

TEST_CASE("serve + verify + remote eval round trip") {
  auto& ws = workspace();
  write_file(ws.root / "serve.json",
             R"({"version":1,"weights":")" + ws.victim() + R"(","gallery":")" + ws.dataset() +
                 R"(","host":"127.0.0.1","port":18645})");
  const std::string cmd = std::string(VEIL_CLI_PATH) + " serve --config " +
                          (ws.root / "serve.json").string() + " --out " +
                          (ws.root / "serve_out").string() + " > " +
                          (ws.root / "serve_log.txt").string() + " 2>&1 & echo $! > " +
                          (ws.root / "serve.pid").string();
  REQUIRE(std::system(cmd.c_str()) == 0);

  // wait for readiness
  bool up = false;
  for (int i = 0; i < 50 && !up; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    httplib::Client probe("127.0.0.1", 18645);
    probe.set_connection_timeout(1, 0);
    if (auto r = probe.Get("/v1/health")) up = r->status == 200;
  }
  REQUIRE(up);

  const auto vres = run("verify " + ws.probe() + " " + ws.probe() +
                        " --victim http://127.0.0.1:18645 --out " + (ws.root / "vr").string());
  CHECK(vres.status == 0);
  const json verdict = json::parse(slurp(ws.root / "vr/verify.json"));
  CHECK(verdict.at("confidence").get<double>() == doctest::Approx(1.0));
  CHECK(verdict.at("matched").get<bool>());

  // remote eval agrees with local eval on the same images
  write_file(ws.root / "eval.json",
             R"({"version":1,"victim":")" + ws.victim() + R"(","gallery":")" + ws.dataset() +
                 R"(","image_a":")" + (ws.root / "atk_out/cropped.png").string() +
                 R"(","image_b":")" + ws.probe() + R"("})");
  REQUIRE(run("eval --config " + (ws.root / "eval.json").string() + " --out " +
              (ws.root / "ev_local").string())
              .status == 0);
  REQUIRE(run("eval --config " + (ws.root / "eval.json").string() +
              " --victim http://127.0.0.1:18645 --out " + (ws.root / "ev_remote").string())
              .status == 0);
  const json local = json::parse(slurp(ws.root / "ev_local/eval.json"));
  const json remote = json::parse(slurp(ws.root / "ev_remote/eval.json"));
  CHECK(local.at("confidence").get<double>() ==
        doctest::Approx(remote.at("confidence").get<double>()).epsilon(1e-6));
  CHECK(local.at("label_a") == remote.at("label_a"));

  const std::string pid = slurp(ws.root / "serve.pid");
  std::system(("kill " + pid).c_str());
}

TEST_CASE("end-to-end: adversarial image lowers victim confidence") {
  auto& ws = workspace();
  // clean pair: probe vs a genuine gallery image of the same identity
  const std::string genuine = (ws.root / "data/dataset/id_00/img_0000.ppm").string();
  write_file(ws.root / "ev_clean.json",
             R"({"version":1,"victim":")" + ws.victim() + R"(","gallery":")" + ws.dataset() +
                 R"(","image_a":")" + ws.probe() + R"(","image_b":")" + genuine + R"("})");
  REQUIRE(run("eval --config " + (ws.root / "ev_clean.json").string() + " --out " +
              (ws.root / "ev_clean").string())
              .status == 0);
  write_file(ws.root / "ev_adv.json",
             R"({"version":1,"victim":")" + ws.victim() + R"(","gallery":")" + ws.dataset() +
                 R"(","image_a":")" + (ws.root / "atk_out/cropped.png").string() +
                 R"(","image_b":")" + genuine + R"("})");
  REQUIRE(run("eval --config " + (ws.root / "ev_adv.json").string() + " --out " +
              (ws.root / "ev_adv").string())
              .status == 0);
  const double clean =
      json::parse(slurp(ws.root / "ev_clean/eval.json")).at("confidence").get<double>();
  const double adv =
      json::parse(slurp(ws.root / "ev_adv/eval.json")).at("confidence").get<double>();
  CHECK(adv < clean);
}
