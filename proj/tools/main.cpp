#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "advforge/error.hpp"
#include "advforge/parallel.hpp"
#include "commands.hpp"
#include "config.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace advforge;
  CLI::App app{"Adversarial composition generator and evaluator for LiDAR pedestrian detection"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  cli::CommandOptions opt;
  int workers = 0;

  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "Scan a scenario and write KITTI .bin frames with JSON sidecars"},
      {"train-detector", "Train the surrogate pedestrian detector"},
      {"attack", "Optimise a verb-object-pose composition against the detector"},
      {"sweep", "Run an attribute, environment, beam or occlusion sweep"},
      {"plan-physical", "Approximate a target shape with posed pool objects"},
      {"evaluate", "Score stored detections or a stored cloud against a ground-truth box"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("config", opt.config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", opt.overrides, "Dotted-path override, e.g. lidar.beams=128")->take_all();
    sub->add_option("--seed", opt.seed, "Global seed (falls back to the config, then LIDAR_ADVFORGE_SEED)");
    sub->add_option("--out", opt.out, "Output directory")->capture_default_str();
    sub->add_option("--workers", workers, "Cap on worker threads (0 = hardware concurrency)")
        ->check(CLI::NonNegativeNumber);
    if (std::string(name) == "attack") {
      sub->add_option("--mode", opt.mode, "random | verb_only | verb_object | full");
      sub->add_flag("--exhaustive", opt.exhaustive, "Score every triplet instead of optimising");
    }
    if (std::string(name) == "sweep") {
      sub->add_flag("--emit-plotdata", opt.emit_plotdata, "Also write per-trial rows to plotdata.csv");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (workers > 0) set_worker_count(workers);
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    std::cout << cli::run_command(name, opt) << '\n';
    return 0;
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
