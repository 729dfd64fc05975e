#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fsta_cli/config.hpp"

namespace fsta::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kReportRootEnv = "FSTA_REPORT_ROOT";

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

// Full command line: `fsta <command> <config.yaml> [--seed N] [--out DIR]`.
int run(int argc, const char* const* argv);

// Applies overrides, validates and executes. Exceptions map to exit codes:
// ConfigError and std::invalid_argument give 1, anything else 2.
int run_command(const std::string& command, RunConfig config, const Overrides& overrides = {});

// <out> if given, else config.output, else <$FSTA_REPORT_ROOT or "reports">/<run id>.
std::filesystem::path run_directory(const std::string& command, const RunConfig& config, const Overrides& overrides);

std::string sha256_hex(const std::filesystem::path& file);

// manifest.json: command, seed, config snapshot and the SHA-256 of each artifact.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const RunConfig& config,
                    const std::vector<std::filesystem::path>& artifacts);

}  // namespace fsta::cli
