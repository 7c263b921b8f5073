#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "qsmp/config.hpp"
#include "qsmp/expr.hpp"
#include "qsmp/families.hpp"

namespace qsmp {
namespace {

using namespace expr;
using testing::random_expression;
using testing::fuzz_string;

const Dims kDims{2, 2, 2};

double eval(std::string_view text, std::vector<double> x = {1.0, 2.0}, std::vector<double> z = {0.5, -0.5},
            std::vector<double> u = {1.5, -1.0}, double y = 0.25, double t = 0.5) {
  return evaluate(parse(text, kDims), Bindings{t, x, y, z, u});
}

TEST(Parse, Examples) {
  EXPECT_EQ(eval("0"), 0.0);
  EXPECT_EQ(eval("exp(0)"), 1.0);
  EXPECT_EQ(eval("x1 + 2*u1"), 4.0);
  EXPECT_DOUBLE_EQ(eval("0.5*(z1^2 + z2^2)"), 0.25);
  EXPECT_DOUBLE_EQ(eval("-2^2"), -4.0);
  EXPECT_DOUBLE_EQ(eval("2^3^2"), 512.0);
  EXPECT_DOUBLE_EQ(eval("8/4/2"), 1.0);
  EXPECT_DOUBLE_EQ(eval("min(x1, x2, -3) + max(y, t)"), -2.5);
  EXPECT_DOUBLE_EQ(eval("1e-3 * 2.5E2"), 0.25);
  EXPECT_DOUBLE_EQ(eval("abs(u2) + sqrt(4) + log(exp(2)) + tanh(0)"), 5.0);
}

TEST(Parse, UnbalancedParenthesisIsLocated) {
  try {
    parse("x1*(", kDims);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 1);
    EXPECT_EQ(e.column(), 4);
  }
}

TEST(Parse, ErrorsCarryLocations) {
  const std::vector<std::pair<std::string, int>> cases = {
      {"x3", 1}, {"z0", 1}, {"1 +", 4}, {"foo(1)", 1}, {"exp(1, 2)", 1}, {"min(1)", 1},
      {"1 $ 2", 3}, {"2 [1]", 3}, {"x1 + [1, 2]", 6}, {")", 1}, {"", 1},
  };
  for (const auto& [text, column] : cases) {
    try {
      parse(text, kDims);
      ADD_FAILURE() << text;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.line(), 1) << text;
      EXPECT_EQ(e.column(), column) << text << ": " << e.what();
    }
  }
  try {
    parse("1 +\n  * 2", kDims, 7, 10);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 8);
    EXPECT_EQ(e.column(), 3);
  }
}

TEST(Parse, DepthLimit) {
  std::string deep(kMaxDepth + 5, '(');
  deep += "1" + std::string(kMaxDepth + 5, ')');
  EXPECT_THROW(parse(deep, kDims), ConfigError);
  std::string ok(20, '(');
  ok += "1" + std::string(20, ')');
  EXPECT_EQ(evaluate(parse(ok, kDims), {}), 1.0);
}

TEST(Evaluate, DomainErrorsAreReported) {
  EXPECT_THROW(eval("1 / (x1 - 1)"), EvalError);
  EXPECT_THROW(eval("log(-x1)"), EvalError);
  EXPECT_THROW(eval("sqrt(u2)"), EvalError);
  EXPECT_THROW(eval("exp(1000)"), EvalError);
}

TEST(Shapes, ListsAndMatrices) {
  const NodePtr m = parse("[[1, x1], [u1, 4]]", kDims);
  const Shape s = shape_of(m);
  EXPECT_EQ(s.rows, 2u);
  EXPECT_EQ(s.cols, 2u);
  EXPECT_TRUE(s.is_list);
  std::vector<double> x{1.0, 2.0}, u{3.0, 0.0};
  const std::vector<double> v = evaluate_all(m, {0.0, x, 0.0, {}, u});
  EXPECT_EQ(v, (std::vector<double>{1.0, 1.0, 3.0, 4.0}));
  EXPECT_EQ(components(m, 2, 2, "m").size(), 4u);
  EXPECT_THROW(components(m, 4, 1, "m"), ConfigError);
  EXPECT_EQ(components(parse("[1, 2]", kDims), 1, 2, "v").size(), 2u);
  EXPECT_EQ(components(parse("5", kDims), 1, 1, "s").size(), 1u);
}

TEST(Fuzz, RandomTextAlwaysParsesOrFailsWithALocation) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const std::string s = fuzz_string(rng, i);
    try {
      const NodePtr node = parse(s, kDims);
      ASSERT_NE(node, nullptr);
    } catch (const ConfigError& e) {
      EXPECT_GE(e.line(), 1) << s;
      EXPECT_GE(e.column(), 1) << s;
    }
  }
}

TEST(RoundTrip, RandomExpressions) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 300; ++i) {
    const NodePtr a = parse(random_expression(rng, 5), kDims);
    const NodePtr b = parse(to_string(a), kDims);
    EXPECT_TRUE(equal(a, b)) << to_string(a);
  }
}

TEST(RoundTrip, ShippedConfigExpressions) {
  const std::filesystem::path dir = std::filesystem::path(QSMP_SOURCE_DIR) / "configs";
  int checked = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".ini") continue;
    const ExperimentConfig cfg = load_experiment(entry.path().string());
    const ProblemSpec spec = build_problem(cfg);
    const Dims dims{spec.n, spec.d, spec.k};
    std::vector<std::string> texts{cfg.reference.value};
    if (cfg.direction) texts.push_back(cfg.direction->value);
    if (cfg.inline_problem) {
      const InlineProblem& p = *cfg.inline_problem;
      for (const ConfigEntry* e : {&p.drift, &p.diffusion, &p.generator, &p.terminal}) texts.push_back(e->value);
    }
    for (const std::string& text : texts) {
      const NodePtr a = parse(text, dims);
      EXPECT_TRUE(equal(a, parse(to_string(a), dims))) << entry.path() << ": " << text;
      ++checked;
    }
  }
  EXPECT_GE(checked, 12);
}

TEST(Differentiate, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  int compared = 0;
  for (int i = 0; i < 300; ++i) {
    const NodePtr f = parse(random_expression(rng, 4), kDims);
    std::vector<double> x{0.3 + 0.2 * g(rng), 0.7 + 0.2 * g(rng)}, z{g(rng), g(rng)}, u{g(rng), g(rng)};
    const double y = 0.4;
    for (auto [var, idx] : {std::pair{Var::x, 0u}, std::pair{Var::z, 1u}, std::pair{Var::u, 0u}, std::pair{Var::y, 0u}}) {
      std::vector<double>* v = var == Var::x ? &x : var == Var::z ? &z : var == Var::u ? &u : nullptr;
      const double h = 1e-6;
      auto at = [&](double shift) {
        std::vector<double> xs = x, zs = z, us = u;
        double ys = y;
        if (v == &x) xs[idx] += shift;
        if (v == &z) zs[idx] += shift;
        if (v == &u) us[idx] += shift;
        if (!v) ys += shift;
        return evaluate(f, {0.5, xs, ys, zs, us});
      };
      try {
        const double up = at(h), dn = at(-h), mid = at(0.0);
        const double fd = (up - dn) / (2.0 * h);
        const double second = std::abs(up - 2.0 * mid + dn) / (h * h);
        // Skip points near kinks and poles where the difference quotient is meaningless.
        if (std::abs(fd) > 1e4 || second > 1e4) continue;
        const double exact = evaluate(differentiate(f, var, idx), {0.5, x, y, z, u});
        EXPECT_NEAR(exact, fd, 1e-5 * (1.0 + std::abs(fd))) << to_string(f);
        ++compared;
      } catch (const EvalError&) {
      }
    }
  }
  EXPECT_GT(compared, 300);
}

TEST(Program, AgreesWithTreeEvaluation) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  for (int i = 0; i < 300; ++i) {
    const NodePtr f = parse(random_expression(rng, 5), kDims);
    const Program p(f);
    std::vector<double> x{g(rng), g(rng)}, z{g(rng), g(rng)}, u{g(rng), g(rng)};
    const Bindings b{0.3, x, 0.1, z, u};
    bool tree_threw = false, prog_threw = false;
    double a = 0.0, c = 0.0;
    try {
      a = evaluate(f, b);
    } catch (const EvalError&) {
      tree_threw = true;
    }
    try {
      c = p(b);
    } catch (const EvalError&) {
      prog_threw = true;
    }
    EXPECT_EQ(tree_threw, prog_threw) << to_string(f);
    if (!tree_threw && !prog_threw) EXPECT_EQ(a, c) << to_string(f);
  }
  EXPECT_TRUE(Program(parse("7", kDims)).constant());
  EXPECT_EQ(Program(parse("2*3 + 1", kDims))({}), 7.0);
  EXPECT_FALSE(Program(parse("x1", kDims)).constant());
}

TEST(InlineProblem, MatchesTheNativeFamily) {
  std::ifstream in(std::filesystem::path(QSMP_SOURCE_DIR) / "configs" / "exponential_utility_inline.ini");
  std::stringstream ss;
  ss << in.rdbuf();
  const ProblemSpec a = build_problem(parse_experiment(ss.str()));
  const ProblemSpec b = exponential_utility_family({.dim = 2, .kappa = 0.5});
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x{g(rng), g(rng)}, z{g(rng), g(rng)}, u{g(rng), g(rng)};
    const double y = g(rng), t = 0.3;
    std::vector<double> oa(8), ob(8);
    EXPECT_NEAR(a.coeffs->generator(t, x, y, z, u), b.coeffs->generator(t, x, y, z, u), 1e-12);
    EXPECT_NEAR(a.coeffs->terminal(x), b.coeffs->terminal(x), 1e-12);
    a.coeffs->drift(t, x, u, std::span(oa).first(2));
    b.coeffs->drift(t, x, u, std::span(ob).first(2));
    EXPECT_NEAR(oa[0], ob[0], 1e-12);
    EXPECT_NEAR(oa[1], ob[1], 1e-12);
    a.coeffs->diffusion(t, x, u, std::span(oa).first(4));
    b.coeffs->diffusion(t, x, u, std::span(ob).first(4));
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(oa[j], ob[j], 1e-12);
    a.coeffs->generator_dz(t, x, y, z, u, std::span(oa).first(2));
    b.coeffs->generator_dz(t, x, y, z, u, std::span(ob).first(2));
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(oa[j], ob[j], 1e-12);
    a.coeffs->generator_du(t, x, y, z, u, std::span(oa).first(2));
    b.coeffs->generator_du(t, x, y, z, u, std::span(ob).first(2));
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(oa[j], ob[j], 1e-12);
    a.coeffs->terminal_dx(x, std::span(oa).first(2));
    b.coeffs->terminal_dx(x, std::span(ob).first(2));
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(oa[j], ob[j], 1e-12);
  }
  const DerivedConstants ca = derive_constants(a), cb = derive_constants(b);
  EXPECT_NEAR(ca.A, cb.A, 1e-12 * cb.A);
}

}  // namespace
}  // namespace qsmp
