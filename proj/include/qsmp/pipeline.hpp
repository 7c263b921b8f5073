#pragma once

// Pipeline dispatch and artifact writing for one experiment.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qsmp/config.hpp"

namespace qsmp {

enum ExitCode : int {
  kExitOk = 0,
  kExitSolverError = 1,
  kExitConfigError = 2,
  kExitInconclusive = 3,
};

/// Command-line values that replace the corresponding config entries.
struct RunOverrides {
  std::optional<Pipeline> pipeline;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> format;
};

struct RunResult {
  int exit_code = kExitOk;
  std::string message;             ///< one-line status or error diagnostic
  std::vector<std::string> files;  ///< artifact names relative to the output directory
};

void apply_overrides(ExperimentConfig& config, const RunOverrides& overrides);

/// Runs the configured pipeline and writes manifest.json, summary.txt and
/// the pipeline's result files into config.output_dir. Errors are mapped to
/// exit codes rather than thrown.
RunResult run_pipeline(const ExperimentConfig& config);

/// Parses the text, applies the overrides and runs. Config errors yield
/// kExitConfigError with a located message.
RunResult run_config_text(const std::string& text, const RunOverrides& overrides = {});

/// Version string recorded in manifests.
const char* version();

}  // namespace qsmp
