#pragma once

#include <filesystem>
#include <string>

#include "pcsi/config.hpp"

namespace pcsi::harness {

inline constexpr const char* kVersion = "1.0.0";

struct CommandOptions {
  unsigned threads{0};        // 0: all available cores
  std::string output_dir;     // empty: PCSI_OUTPUT_DIR, then the config's output_dir
};

/// Output directory after the command-line and environment overrides.
std::filesystem::path resolve_output_dir(const config::ExperimentConfig& cfg, const CommandOptions& options);

/// Runs the configured policy for every replica. Writes summary.json,
/// trace.csv (first replica, when requested) and run_meta.json.
std::filesystem::path cmd_simulate(const config::ExperimentConfig& cfg, const CommandOptions& options);

/// Stability check and exponent bounds. Writes bounds.json. Throws
/// bounds::UnstableArrivals for arrival vectors outside the region.
std::filesystem::path cmd_bounds(const config::ExperimentConfig& cfg, const CommandOptions& options);

/// Overflow estimates per level and method, exponent fits and their
/// comparison with the bounds. Writes estimates.csv, fit.json, run_meta.json.
std::filesystem::path cmd_exponent(const config::ExperimentConfig& cfg, const CommandOptions& options);

/// Text of the bounds report (the content of bounds.json).
std::string bounds_report_json(const config::ExperimentConfig& cfg);

}  // namespace pcsi::harness
