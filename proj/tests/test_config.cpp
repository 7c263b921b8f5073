#include <gtest/gtest.h>

#include <filesystem>

#include "helpers.hpp"
#include "qsmp/config.hpp"
#include "qsmp/error.hpp"
#include "qsmp/pipeline.hpp"

namespace qsmp {
namespace {

const char* kInline =
    "[problem]\n"
    "x0 = [0.5]\n"
    "drift = u1 - 0.5*x1\n"
    "diffusion = 0.3\n"
    "generator = 0.5*z1^2 + 0.5*u1^2\n"
    "terminal = tanh(x1)\n"
    "[constants]\n"
    "alpha = 0.5\n"
    "gamma = 1\n"
    "b_x_sup = 0.5\n"
    "Phi_sup = 1\n"
    "Phi_x_sup = 1\n"
    "[grid]\n"
    "N = 10\n"
    "[monte_carlo]\n"
    "M = 1e3  ; scientific notation is accepted\n";

struct Located {
  int line;
  int column;
};

Located error_location(const std::string& text) {
  try {
    build_problem(parse_experiment(text));
  } catch (const ConfigError& e) {
    return {e.line(), e.column()};
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return {0, 0};
}

TEST(Config, InlineProblemParses) {
  const ExperimentConfig cfg = parse_experiment(kInline);
  EXPECT_EQ(cfg.steps, 10u);
  EXPECT_EQ(cfg.paths, 1000u);
  ASSERT_TRUE(cfg.inline_problem.has_value());
  EXPECT_EQ(cfg.inline_problem->drift.line, 3);
  EXPECT_EQ(cfg.inline_problem->drift.column, 9);
  const ProblemSpec spec = build_problem(cfg);
  EXPECT_EQ(spec.name, "inline");
  std::vector<double> x{0.2}, u{0.1}, b(1);
  spec.coeffs->drift(0.0, x, u, b);
  EXPECT_DOUBLE_EQ(b[0], 0.0);
}

TEST(Config, FamilyParametersAndOverrides) {
  const ExperimentConfig cfg = parse_experiment(
      "[problem]\nfamily = linear-quadratic\nA = 0.25\n[monte_carlo]\nseed = 9\ndegree = 2\n[pipeline]\nname = descend\n");
  EXPECT_EQ(cfg.family, "linear-quadratic");
  EXPECT_EQ(cfg.family_params.at("A"), 0.25);
  EXPECT_EQ(cfg.pipeline, Pipeline::descend);
  EXPECT_EQ(cfg.basis.degree, 2);
  ExperimentConfig c2 = cfg;
  apply_overrides(c2, {Pipeline::bmo, 77, std::string("elsewhere"), std::string("json")});
  EXPECT_EQ(c2.pipeline, Pipeline::bmo);
  EXPECT_EQ(c2.seed, 77u);
  EXPECT_EQ(c2.output_dir, "elsewhere");
  EXPECT_EQ(c2.format, "json");
}

TEST(Config, MultiLineValuesKeepLocations) {
  const std::string text =
      "[problem]\nn = 2\nd = 2\nk = 2\nx0 = [0, 0]\ndrift = [u1, u2]\n"
      "diffusion = [[1, 0],\n             [0, x3]]\n"
      "generator = 0\nterminal = 0\n";
  const Located l = error_location(text);
  EXPECT_EQ(l.line, 8);
  EXPECT_EQ(l.column, 18);
}

TEST(Config, ErrorsAreLocated) {
  struct Case {
    std::string text;
    int line;
    int column;
  };
  const std::vector<Case> cases = {
      {"[problem\nfamily = tanh\n", 1, 1},
      {"family = tanh\n", 1, 1},
      {"[problem]\nfamily = tanh\nfamily = tanh\n", 3, 1},
      {"[problem]\nfamily =\n", 2, 9},
      {"[problem]\nfamily tanh\n", 2, 1},
      {"[problem]\nfamily = tanh\n[problem]\n", 3, 1},
      {"[problem]\nfamily = tanh\n[nonsense]\nx = 1\n", 3, 1},
      {"[problem]\nfamily = tanh\n[grid]\nsteps = 4\n", 4, 1},
      {"[problem]\nfamily = tanh\ndrift = 0\n", 3, 1},
      {"[problem]\nfamily = tanh\nwobble = 2\n", 3, 1},
      {"[problem]\nfamily = tanh\n[grid]\nN = -4\n", 4, 5},
      {"[problem]\nfamily = tanh\n[controls]\nlower = 0\n", 4, 1},
      {"[problem]\nx0 = [0]\ndrift = x1 +\ndiffusion = 1\ngenerator = 0\nterminal = 0\n", 3, 13},
      {"[problem]\nx0 = [0]\ndrift = z1\ndiffusion = 1\ngenerator = 0\nterminal = 0\n", 3, 9},
      {"[problem]\nx0 = [0]\ndrift = 0\ndiffusion = 1\ngenerator = 0\n", 1, 1},
      {"[problem]\nx0 = [0]\ndrift = 0\ndiffusion = 1\ngenerator = 0\nterminal = u1\n", 6, 12},
      {"[problem]\nfamily = volcano\n", 2, 10},
  };
  for (const Case& c : cases) {
    const Located l = error_location(c.text);
    EXPECT_EQ(l.line, c.line) << c.text;
    EXPECT_EQ(l.column, c.column) << c.text;
  }
}

TEST(Config, MalformedCorpusExitsWithConfigError) {
  const std::vector<std::string> corpus = {
      "",
      "[problem]\n",
      "[problem]\nfamily = tanh\n[pipeline]\nname = fly\n",
      "[problem]\nfamily = tanh\n[output]\nformat = xml\n",
      "[problem]\nfamily = tanh\n[monte_carlo]\nM = 0\n",
      "[problem]\nfamily = tanh\n[monte_carlo]\nM = 1.5\n",
      "[problem]\nfamily = tanh\n[controls]\nepsilons = [0.5, -1]\n",
      "[problem]\nfamily = tanh\nkappa = -1\n",
      "[problem]\nn = 2\nx0 = [0]\ndrift = [0, 0]\ndiffusion = [1, 1]\ngenerator = 0\nterminal = 0\n",
      "[problem]\nx0 = [0]\ndrift = 0\ndiffusion = 1\ngenerator = 0\nterminal = 0\nT = 0\n",
      "[problem]\nfamily = tanh\n[controls]\ndomain = ball\ncenter = [0]\nradius = -1\n",
      "[problem]\nfamily = tanh\n[pipeline]\nname = gradient-check\n",
  };
  const std::string out = (std::filesystem::temp_directory_path() / "qsmp_malformed").string();
  for (const std::string& text : corpus) {
    const RunResult r = run_config_text(text, {std::nullopt, std::nullopt, out, std::nullopt});
    EXPECT_EQ(r.exit_code, kExitConfigError) << text << "\n" << r.message;
    EXPECT_FALSE(r.message.empty());
  }
  std::filesystem::remove_all(out);
}

TEST(Config, ControlsFromExpressions) {
  const ProblemSpec spec = build_problem(parse_experiment("[problem]\nfamily = tanh\n"));
  const auto c = build_control({"5", 1, 1, 1}, spec);
  EXPECT_FALSE(c->path_dependent());
  std::vector<double> x{0.0}, u(1);
  c->value(0, 0.0, 0, x, u);
  EXPECT_EQ(u[0], 1.0);  // projected onto [-1, 1]
  const auto f = build_control({"-0.5*x1 + t", 1, 1, 1}, spec);
  EXPECT_TRUE(f->path_dependent());
  x[0] = 0.4;
  f->value(3, 0.25, 0, x, u);
  EXPECT_DOUBLE_EQ(u[0], 0.05);
  try {
    build_control({"0.5 * y", 4, 13, 1}, spec);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_EQ(e.column(), 19);
  }
}

}  // namespace
}  // namespace qsmp
