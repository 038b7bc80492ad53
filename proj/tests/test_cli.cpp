#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kCli = ADVFORGE_CLI;
const fs::path kConfigs = ADVFORGE_CONFIGS;
const fs::path kWork = ADVFORGE_WORK;
const fs::path kParams = kWork / "train" / "detector.bin";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code = -1;
  std::string out, err;
};

// Runs the CLI with `args` (already shell-quoted where needed).
Run cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  fs::create_directories(kWork / "logs");
  const auto out = kWork / "logs" / ("run" + std::to_string(++counter) + ".out");
  const auto err = kWork / "logs" / ("run" + std::to_string(counter) + ".err");
  const std::string cmd = env + " '" + kCli.string() + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

fs::path write_config(const std::string& name, const std::string& text) {
  fs::create_directories(kWork / "configs");
  const auto p = kWork / "configs" / name;
  std::ofstream(p) << text;
  return p;
}

// Every output file of a run, with the manifest's timestamp removed.
std::map<std::string, std::string> payload(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string text = slurp(e.path());
    if (e.path().filename() == "manifest.json") {
      auto j = nlohmann::json::parse(text);
      j.erase("created_utc");
      text = j.dump();
    }
    files[e.path().filename().string()] = text;
  }
  return files;
}

void check_worker_invariance(const std::string& name, const std::string& args) {
  const auto a = kWork / ("w1_" + name), b = kWork / ("w3_" + name);
  fs::remove_all(a);
  fs::remove_all(b);
  const auto r1 = cli(args + " --workers 1 --out " + q(a));
  const auto r3 = cli(args + " --workers 3 --out " + q(b));
  INFO(name << ": " << r1.err << r3.err);
  REQUIRE(r1.code == 0);
  REQUIRE(r3.code == 0);
  auto strip = [](std::string s, const fs::path& dir) {
    for (auto at = s.find(dir.string()); at != std::string::npos; at = s.find(dir.string())) s.replace(at, dir.string().size(), "<out>");
    return s;
  };
  CHECK(strip(r1.out, a) == strip(r3.out, b));
  const auto pa = payload(a), pb = payload(b);
  CHECK(pa.size() > 1);
  CHECK(pa == pb);
}

}  // namespace

TEST_CASE("every subcommand is byte-identical across worker counts") {
  REQUIRE(fs::exists(kParams));
  const std::string params = "--set params=" + q(kParams);
  check_worker_invariance("simulate", "simulate " + q(kConfigs / "simulate.json") + " --set scenario.n_frames=2");
  check_worker_invariance("train", "train-detector " + q(kConfigs / "train_detector.json") +
                                       " --set n_scenes=24 --set hyper.epochs=1 --set hyper.held_out_scenes=4");
  check_worker_invariance("attack", "attack " + q(kConfigs / "attack_small.json") + " " + params + " --set attack.steps=20");
  check_worker_invariance("attack_ex", "attack " + q(kConfigs / "attack_small.json") + " " + params + " --exhaustive");
  check_worker_invariance("sweep", "sweep " + q(kConfigs / "sweep_attributes.json") + " " + params +
                                       " --set n_trials=2 --emit-plotdata");
  check_worker_invariance("occlusion", "sweep " + q(kConfigs / "sweep_occlusion.json") + " " + params + " --set n_trials=2");
  check_worker_invariance("plan", "plan-physical " + q(kConfigs / "plan_physical.json") + " --set validate.params=" +
                                      q(kParams) + " --set budget=1");
  check_worker_invariance("evaluate", "evaluate " + q(kConfigs / "evaluate.json") + " --set detections=" +
                                          q(kWork / "w1_attack" / "summary.json"));
}

TEST_CASE("outputs carry provenance") {
  const auto dir = kWork / "w1_sweep";
  REQUIRE(fs::exists(dir / "cells.csv"));
  const auto csv = slurp(dir / "cells.csv");
  CHECK(csv.rfind("# advforge sweep seed=0\n# config=", 0) == 0);
  CHECK(csv.find("\nscenario,condition,n,detected,attacked,dsr,dsr_stderr,asr,asr_stderr\n") != std::string::npos);
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest.at("subcommand") == "sweep");
  CHECK(manifest.at("seed") == 0);
  CHECK(manifest.contains("created_utc"));
  CHECK(fs::exists(dir / "plotdata.csv"));

  const auto sim = kWork / "w1_simulate";
  CHECK(fs::file_size(sim / "000000.bin") % 16 == 0);
  const auto side = nlohmann::json::parse(slurp(sim / "000001.json"));
  CHECK(side.at("frame") == 1);
  CHECK(side.contains("gt_box"));

  const auto summary = nlohmann::json::parse(slurp(kWork / "w1_attack" / "summary.json"));
  CHECK(summary.contains("prompt"));
  CHECK(summary.contains("hard_loss"));
  std::ifstream trace(kWork / "w1_attack" / "trace.jsonl");
  int lines = 0;
  for (std::string line; std::getline(trace, line);) {
    CHECK(nlohmann::json::parse(line).contains("loss"));
    ++lines;
  }
  CHECK(lines == 20);
}

TEST_CASE("config errors exit with 2 and name the offending line") {
  const auto sim = q(kConfigs / "simulate.json");
  const auto out = " --out " + q(kWork / "err");

  auto r = cli("simulate " + sim + " --set scenario.lidar.beams=0" + out);
  CHECK(r.code == 2);
  CHECK(r.err.find("--set scenario.lidar.beams") != std::string::npos);

  const auto unknown = write_config("unknown.json", "{\n  \"seed\": 1,\n  \"scenario\": {\"scene\": \"open_lot\"},\n  \"colour\": 3\n}\n");
  r = cli("simulate " + q(unknown) + out);
  CHECK(r.code == 2);
  CHECK(r.err.find("unknown.json:4: /colour: unknown key") != std::string::npos);

  const auto beams = write_config("beams.json", "{\n  \"seed\": 1,\n  \"scenario\": {\n    \"lidar\": {\"beams\": -4}\n  }\n}\n");
  r = cli("simulate " + q(beams) + out);
  CHECK(r.code == 2);
  CHECK(r.err.find("beams.json:4:") != std::string::npos);

  const auto syntax = write_config("syntax.json", "{\n  \"seed\": 1,\n  \"scenario\": {\n    \"scene\" \"open_lot\"\n  }\n}\n");
  r = cli("simulate " + q(syntax) + out);
  CHECK(r.code == 2);
  CHECK(r.err.find("syntax.json:4:") != std::string::npos);

  const auto dup = write_config("dup.json", "{\n  \"seed\": 1,\n  \"seed\": 2\n}\n");
  r = cli("simulate " + q(dup) + out);
  CHECK(r.code == 2);
  CHECK(r.err.find("duplicate key /seed") != std::string::npos);

  r = cli("attack " + q(kConfigs / "attack_small.json") + " --set params=/nonexistent/p.bin" + out);
  CHECK(r.code == 2);

  r = cli("attack " + q(kConfigs / "attack_small.json") + " --set params=" + q(kParams) + " --mode sideways" + out);
  CHECK(r.code == 2);

  r = cli("simulate " + q(kWork / "no_such_config.json") + out);
  CHECK(r.code == 2);
  r = cli("frobnicate " + sim);
  CHECK(r.code == 2);
  CHECK(r.out.empty());
}

TEST_CASE("corrupt inputs are config errors, unwritable outputs are runtime errors") {
  fs::create_directories(kWork / "bad");
  std::ofstream(kWork / "bad" / "cloud.bin", std::ios::binary) << "not a multiple of sixteen";
  const auto cfg = write_config("eval_bad.json", "{\"cloud\": " + nlohmann::json((kWork / "bad" / "cloud.bin").string()).dump() +
                                                     ", \"params\": " + nlohmann::json(kParams.string()).dump() +
                                                     ", \"gt_box\": {\"center\": [10, 0, 0.9], \"size\": [0.6, 0.8, 1.75], \"yaw\": 0}}");
  auto r = cli("evaluate " + q(cfg) + " --out " + q(kWork / "eval_bad"));
  CHECK(r.code == 2);
  CHECK(r.err.find("/cloud") != std::string::npos);
  CHECK(r.out.empty());

  std::ofstream(kWork / "bad" / "plain_file") << "x";
  r = cli("simulate " + q(kConfigs / "simulate.json") + " --out " + q(kWork / "bad" / "plain_file" / "sub"));
  CHECK(r.code == 3);
  CHECK(r.out.empty());
}

TEST_CASE("seed precedence: flag, then config, then environment") {
  const auto noseed = write_config("noseed.json", R"({"scenario": {"scene": "open_lot", "lidar": {"beams": 16}}})");
  auto r = cli("simulate " + q(noseed) + " --out " + q(kWork / "seed_none"), "env -u LIDAR_ADVFORGE_SEED");
  CHECK(r.code == 2);

  r = cli("simulate " + q(noseed) + " --out " + q(kWork / "seed_env"), "LIDAR_ADVFORGE_SEED=41");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(slurp(kWork / "seed_env" / "manifest.json")).at("seed") == 41);

  r = cli("simulate " + q(kConfigs / "simulate.json") + " --out " + q(kWork / "seed_cfg"), "LIDAR_ADVFORGE_SEED=41");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(slurp(kWork / "seed_cfg" / "manifest.json")).at("seed") == 1);

  r = cli("simulate " + q(kConfigs / "simulate.json") + " --seed 5 --out " + q(kWork / "seed_flag"), "LIDAR_ADVFORGE_SEED=41");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(slurp(kWork / "seed_flag" / "manifest.json")).at("seed") == 5);
  CHECK(slurp(kWork / "seed_flag" / "000000.bin") != slurp(kWork / "seed_cfg" / "000000.bin"));
}

TEST_CASE("stdout carries a single summary line") {
  const auto r = cli("simulate " + q(kConfigs / "simulate.json") + " --out " + q(kWork / "summary_line"));
  REQUIRE(r.code == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
}
