#pragma once

// Expression language for inline coefficients.
//
//   expr    := sum
//   sum     := product (('+' | '-') product)*
//   product := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?            right associative
//   primary := number | variable | name '(' expr (',' expr)* ')' | '(' expr ')'
//            | '[' expr (',' expr)* ']'
//
// Variables are t, y, x1..xn, z1..zd and u1..uk. Functions are exp, log,
// sqrt, abs, tanh (one argument) and min, max (two or more). Lists build
// vectors and, nested once, matrices; they may only appear at the top level
// or inside another list. Nesting deeper than kMaxDepth is rejected.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qsmp/error.hpp"

namespace qsmp::expr {

inline constexpr int kMaxDepth = 64;

struct Dims {
  std::size_t n = 1;
  std::size_t d = 1;
  std::size_t k = 1;
};

enum class Var : std::uint8_t { t, x, y, z, u };

enum class Op : std::uint8_t {
  number,
  variable,
  neg,
  add,
  sub,
  mul,
  div,
  pow,
  exp,
  log,
  sqrt,
  abs,
  tanh,
  min,
  max,
  sign,  ///< only produced by differentiation
  le,    ///< 1 if a <= b else 0; only produced by differentiation
  list,
};

struct Location {
  int line = 1;
  int column = 1;
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::number;
  double value = 0.0;
  Var var = Var::t;
  std::uint32_t index = 0;  ///< 0-based component of x, z or u
  std::vector<NodePtr> args;
  Location loc;
};

/// Evaluation failure: division by zero, log or sqrt outside its domain,
/// or a non-finite result.
class EvalError : public Error {
 public:
  EvalError(const std::string& what, Location loc) : Error(what), loc_(loc) {}
  Location location() const { return loc_; }

 private:
  Location loc_;
};

/// Throws ConfigError carrying the line and column of the offending token.
/// first_line and first_column shift the reported location when the source
/// is embedded in a larger file.
NodePtr parse(std::string_view source, const Dims& dims, int first_line = 1, int first_column = 1);

/// Rows and columns of a parsed expression: 1 x 1 for scalars, r x 1 for a
/// flat list, r x c for a list of lists.
struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;
  bool is_list = false;
};
Shape shape_of(const NodePtr& node);

/// Scalar components in row-major order, checked against rows x cols. A
/// scalar is accepted for 1 x 1; a flat list is accepted when rows or cols is 1.
std::vector<NodePtr> components(const NodePtr& node, std::size_t rows, std::size_t cols, const std::string& what);

struct Bindings {
  double t = 0.0;
  std::span<const double> x;
  double y = 0.0;
  std::span<const double> z;
  std::span<const double> u;
};

/// Tree-walking evaluation of a scalar expression.
double evaluate(const NodePtr& node, const Bindings& b);

/// Value of any expression, flattened row-major.
std::vector<double> evaluate_all(const NodePtr& node, const Bindings& b);

/// d node / d var_index, simplified. The result may contain sign and le.
NodePtr differentiate(const NodePtr& node, Var var, std::uint32_t index = 0);

/// Text that parses back to a structurally equal tree.
std::string to_string(const NodePtr& node);

/// Structural equality; locations are ignored.
bool equal(const NodePtr& a, const NodePtr& b);

/// Number of nodes on the longest root-to-leaf path.
int depth(const NodePtr& node);

/// Scalar expression flattened to postfix code for repeated evaluation.
class Program {
 public:
  Program() = default;
  explicit Program(const NodePtr& scalar);
  double operator()(const Bindings& b) const;
  bool constant() const { return code_.size() == 1 && code_[0].op == Op::number; }

 private:
  struct Instr {
    Op op;
    Var var;
    std::uint32_t index;
    std::uint32_t arity;
    double value;
    Location loc;
  };
  std::vector<Instr> code_;
  std::size_t max_stack_ = 0;
};

// Builders with constant folding and the identities 0 + a, 1 * a, 0 * a, a ^ 1.
NodePtr number(double v);
NodePtr variable(Var v, std::uint32_t index = 0);
NodePtr make_unary(Op op, NodePtr a);
NodePtr make_binary(Op op, NodePtr a, NodePtr b);

}  // namespace qsmp::expr
