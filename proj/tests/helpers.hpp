#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <iterator>
#include <random>
#include <string>

#include "qsmp/config.hpp"

namespace qsmp::testing {

/// Problem built from a config fragment holding [problem] and [constants].
inline ProblemSpec inline_spec(const std::string& text) { return build_problem(parse_experiment(text)); }

/// E[g(G)] for G ~ N(0, 1) by Gauss-Hermite quadrature; nodes and weights
/// from the eigen-decomposition of the Jacobi matrix (Golub-Welsch).
inline double gauss_hermite_expectation(const std::function<double(double)>& g, int nodes = 80) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(nodes, nodes);
  for (int k = 1; k < nodes; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  double s = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double w = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
    s += w * g(es.eigenvalues()(i));
  }
  return s;
}

/// Y_0 of dY = -(gamma/2) Z^2 dt + Z dW, Y_T = tanh(a (x0 + s W_T)), via the
/// exponential transform: Y_0 = log E[exp(gamma Y_T)] / gamma.
inline double exponential_utility_y0(double gamma, double a, double s, double x0, double T) {
  const double e = gauss_hermite_expectation(
      [&](double g) { return std::exp(gamma * std::tanh(a * (x0 + s * std::sqrt(T) * g))); });
  return std::log(e) / gamma;
}

/// Random well-formed expression over two-dimensional x, z and u.
inline std::string random_expression(std::mt19937_64& rng, int depth) {
  static const char* leaves[] = {"x1", "x2", "z1", "z2", "u1", "u2", "y", "t", "0.5", "2", "1e-2", "3.25"};
  static const char* unary[] = {"exp", "tanh", "abs", "sqrt", "log"};
  static const char* binary[] = {" + ", " - ", " * ", " / ", "^"};
  std::uniform_int_distribution<int> pick(0, 9);
  if (depth <= 0 || pick(rng) < 3) return leaves[rng() % std::size(leaves)];
  const int c = pick(rng);
  if (c < 4) {
    return "(" + random_expression(rng, depth - 1) + binary[rng() % std::size(binary)] +
           random_expression(rng, depth - 1) + ")";
  }
  if (c < 6) return std::string(unary[rng() % std::size(unary)]) + "(" + random_expression(rng, depth - 1) + ")";
  if (c < 7) return "-" + random_expression(rng, depth - 1);
  if (c < 8) return "max(" + random_expression(rng, depth - 1) + ", " + random_expression(rng, depth - 1) + ")";
  return random_expression(rng, depth - 1) + binary[rng() % 3] + random_expression(rng, depth - 1);
}

/// Fuzz input number i: a generated expression, the same with one character
/// replaced, or random text from the token alphabet, in rotation.
inline std::string fuzz_string(std::mt19937_64& rng, int i) {
  static const std::string alphabet = "xzuyt12.e+-*/^()[],  abcdefghimnopqrs$#\n";
  std::uniform_int_distribution<std::size_t> len(0, 40), ch(0, alphabet.size() - 1);
  std::string s(len(rng), ' ');
  for (char& c : s) c = alphabet[ch(rng)];
  if (i % 3 != 2) {
    s = random_expression(rng, 4);
    if (i % 3 == 1 && !s.empty()) s[rng() % s.size()] = alphabet[ch(rng)];
  }
  return s;
}

}  // namespace qsmp::testing
