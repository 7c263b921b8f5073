#pragma once

// Experiment configuration: a sectioned key = value text file.
//
//   [section]
//   key = value        # comments start with '#' or ';'
//
// Numeric values are constant expressions ("0.5", "2^-6", "[1, 2]").
// Coefficient and control values are expressions in the variables of the
// expression language. Unknown sections and keys are rejected with their
// line and column.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qsmp/expr.hpp"
#include "qsmp/model.hpp"
#include "qsmp/paths.hpp"
#include "qsmp/regression.hpp"

namespace qsmp {

struct ConfigEntry {
  std::string value;
  int line = 0;
  int column = 0;      ///< column of the first character of value
  int key_column = 1;
};

class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text);

  const ConfigEntry* find(const std::string& section, const std::string& key) const;
  const std::map<std::string, std::map<std::string, ConfigEntry>>& sections() const { return sections_; }
  /// Line of the section header.
  int section_line(const std::string& section) const;

 private:
  std::map<std::string, std::map<std::string, ConfigEntry>> sections_;
  std::map<std::string, int> section_lines_;
};

enum class Pipeline { solve, adjoint, gradient_check, descend, mp_check, bmo, constants };

const char* to_string(Pipeline p);
std::optional<Pipeline> pipeline_from_string(std::string_view name);
std::vector<std::string> pipeline_names();

struct InlineProblem {
  expr::Dims dims;
  double T = 1.0;
  std::vector<double> x0;
  ConfigEntry drift, diffusion, generator, terminal;
  AssumptionConstants constants;
};

struct ExperimentConfig {
  std::string text;  ///< source, hashed into the manifest
  ConfigFile file;

  std::string family;  ///< empty for an inline problem
  std::map<std::string, double> family_params;
  std::optional<InlineProblem> inline_problem;

  std::size_t steps = 100;
  std::size_t paths = 10000;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;
  RegressionBasis basis;
  double ridge_per_path = kDefaultRidgePerPath;

  Pipeline pipeline = Pipeline::solve;
  std::string output_dir = "out";
  std::string format = "csv";

  // [tolerances]
  double mp_tolerance_se = 5.0;
  double inconclusive_ratio = 0.1;
  std::size_t validation_samples = 2000;
  double fd_tolerance = 1e-6;

  // [controls]
  ConfigEntry reference{"0", 0, 0, 1};
  std::optional<ConfigEntry> direction;
  std::vector<double> epsilons;
  double boundary_fraction = 0.5;
  std::size_t mp_time_samples = 20;
  std::size_t mp_path_samples = 250;
  std::size_t mp_candidates = 8;
  std::uint64_t mp_seed = 1;

  // [descent]
  std::size_t descent_iterations = 40;
  double descent_step = 0.5;
  double descent_decay = 0.0;
  double descent_gradient_tolerance = 1e-5;
  double descent_init_scale = 1.0;
  std::uint64_t descent_init_seed = 1;

  int energy_n_max = 4;
};

/// Throws ConfigError with the location of the first problem.
ExperimentConfig parse_experiment(std::string_view text);
ExperimentConfig load_experiment(const std::string& path);

/// Builds the family or the inline problem; a domain given under [controls]
/// replaces the family's. Expression problems throw ConfigError located in
/// the original file.
ProblemSpec build_problem(const ExperimentConfig& config);

/// Feedback control u = proj_U(expr(t, x)) from an expression entry.
std::shared_ptr<const ControlProcess> build_control(const ConfigEntry& entry, const ProblemSpec& spec);

/// Coefficients from expressions; derivatives by symbolic differentiation.
/// drift is n x 1, diffusion n x d, generator and terminal are scalars.
std::shared_ptr<const Coefficients> expression_coefficients(const expr::Dims& dims, const ConfigEntry& drift,
                                                            const ConfigEntry& diffusion,
                                                            const ConfigEntry& generator,
                                                            const ConfigEntry& terminal);

}  // namespace qsmp
