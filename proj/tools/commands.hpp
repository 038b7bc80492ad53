#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace advforge::cli {

struct CommandOptions {
  std::filesystem::path config;
  std::vector<std::string> overrides;  // "a.b=value"
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "out";
  std::optional<std::string> mode;  // attack
  bool exhaustive = false;          // attack
  bool emit_plotdata = false;       // sweep
};

inline constexpr const char* kSeedEnv = "LIDAR_ADVFORGE_SEED";

/// Runs one subcommand and returns the line for stdout. Throws ConfigError
/// for config and input problems and advforge::Error for runtime failures.
std::string run_command(const std::string& name, const CommandOptions& options);

}  // namespace advforge::cli
