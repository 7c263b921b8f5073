#include "qsmp/expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace qsmp::expr {
namespace {

enum class Tok { number, ident, plus, minus, star, slash, caret, lparen, rparen, lbracket, rbracket, comma, end };

struct Token {
  Tok kind;
  std::string_view text;
  double value = 0.0;
  Location loc;
};

[[noreturn]] void fail(const std::string& what, Location loc) { throw ConfigError(what, loc.line, loc.column); }

std::vector<Token> lex(std::string_view s, int line, int column) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto advance = [&](std::size_t count) {
    for (std::size_t j = 0; j < count; ++j) {
      if (s[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
      ++i;
    }
  };
  while (i < s.size()) {
    const char c = s[i];
    const Location here{line, column};
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance(1);
      continue;
    }
    auto is_digit = [](char ch) { return ch >= '0' && ch <= '9'; };
    auto is_alpha = [](char ch) { return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || ch == '_'; };
    if (is_digit(c) || (c == '.' && i + 1 < s.size() && is_digit(s[i + 1]))) {
      std::size_t j = i;
      while (j < s.size() && is_digit(s[j])) ++j;
      if (j < s.size() && s[j] == '.') {
        ++j;
        while (j < s.size() && is_digit(s[j])) ++j;
      }
      if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
        std::size_t e = j + 1;
        if (e < s.size() && (s[e] == '+' || s[e] == '-')) ++e;
        if (e >= s.size() || !is_digit(s[e])) fail("malformed number", here);
        while (e < s.size() && is_digit(s[e])) ++e;
        j = e;
      }
      if (j < s.size() && is_alpha(s[j])) fail("malformed number", here);
      Token t{Tok::number, s.substr(i, j - i), 0.0, here};
      const auto res = std::from_chars(s.data() + i, s.data() + j, t.value);
      if (res.ec != std::errc() || !std::isfinite(t.value)) fail("number out of range", here);
      out.push_back(t);
      advance(j - i);
      continue;
    }
    if (is_alpha(c)) {
      std::size_t j = i;
      while (j < s.size() && (is_alpha(s[j]) || is_digit(s[j]))) ++j;
      out.push_back({Tok::ident, s.substr(i, j - i), 0.0, here});
      advance(j - i);
      continue;
    }
    Tok kind;
    switch (c) {
      case '+': kind = Tok::plus; break;
      case '-': kind = Tok::minus; break;
      case '*': kind = Tok::star; break;
      case '/': kind = Tok::slash; break;
      case '^': kind = Tok::caret; break;
      case '(': kind = Tok::lparen; break;
      case ')': kind = Tok::rparen; break;
      case '[': kind = Tok::lbracket; break;
      case ']': kind = Tok::rbracket; break;
      case ',': kind = Tok::comma; break;
      default: {
        char buf[48];
        const auto uc = static_cast<unsigned char>(c);
        if (uc >= 0x20 && uc < 0x7f)
          std::snprintf(buf, sizeof buf, "unexpected character '%c'", c);
        else
          std::snprintf(buf, sizeof buf, "unexpected byte 0x%02x", uc);
        fail(buf, here);
      }
    }
    out.push_back({kind, s.substr(i, 1), 0.0, here});
    advance(1);
  }
  out.push_back({Tok::end, {}, 0.0, {line, column}});
  return out;
}

struct Parsed {
  NodePtr node;
  int depth;
};

std::shared_ptr<Node> make_node(Op op, Location loc) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->loc = loc;
  return n;
}

class Parser {
 public:
  Parser(std::vector<Token> toks, const Dims& dims) : toks_(std::move(toks)), dims_(dims) {}

  NodePtr run() {
    Parsed p = expression();
    const Token& t = peek();
    if (t.kind == Tok::rparen) fail("unbalanced ')'", t.loc);
    if (t.kind != Tok::end) fail("unexpected '" + std::string(t.text) + "'", t.loc);
    check_lists(p.node, true);
    return p.node;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& take() { return toks_[pos_++]; }

  void guard(int depth, Location loc) const {
    if (depth > kMaxDepth) fail("expression nesting exceeds " + std::to_string(kMaxDepth) + " levels", loc);
  }

  Parsed binary(Op op, Parsed a, Parsed b, Location loc) {
    auto n = make_node(op, loc);
    n->args = {std::move(a.node), std::move(b.node)};
    const int dep = 1 + std::max(a.depth, b.depth);
    guard(dep, loc);
    return {n, dep};
  }

  Parsed expression() { return sum(); }

  Parsed sum() {
    Parsed acc = product();
    while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
      const Token& op = take();
      acc = binary(op.kind == Tok::plus ? Op::add : Op::sub, acc, product(), op.loc);
    }
    return acc;
  }

  Parsed product() {
    Parsed acc = unary();
    while (peek().kind == Tok::star || peek().kind == Tok::slash) {
      const Token& op = take();
      acc = binary(op.kind == Tok::star ? Op::mul : Op::div, acc, unary(), op.loc);
    }
    return acc;
  }

  Parsed unary() {
    const Token& t = peek();
    if (t.kind == Tok::minus || t.kind == Tok::plus) {
      take();
      guard(++nesting_, t.loc);
      Parsed a = unary();
      --nesting_;
      if (t.kind == Tok::plus) return a;
      auto n = make_node(Op::neg, t.loc);
      n->args = {a.node};
      guard(a.depth + 1, t.loc);
      return {n, a.depth + 1};
    }
    return power();
  }

  Parsed power() {
    Parsed base = primary();
    if (peek().kind == Tok::caret) {
      const Token& op = take();
      guard(++nesting_, op.loc);
      Parsed ex = unary();
      --nesting_;
      return binary(Op::pow, base, ex, op.loc);
    }
    return base;
  }

  [[noreturn]] void missing_operand(const Token& t) const {
    if (t.kind == Tok::end) {
      if (!open_.empty()) fail(open_.back().second == '(' ? "unbalanced '('" : "unbalanced '['", open_.back().first);
      fail("unexpected end of expression", t.loc);
    }
    if (t.kind == Tok::rparen && open_.empty()) fail("unbalanced ')'", t.loc);
    fail("expected an operand before '" + std::string(t.text) + "'", t.loc);
  }

  void expect_close(Tok kind, char open_char) {
    const Token& t = peek();
    if (t.kind == kind) {
      take();
      open_.pop_back();
      return;
    }
    if (t.kind == Tok::end) fail(open_char == '(' ? "unbalanced '('" : "unbalanced '['", open_.back().first);
    fail(std::string("expected '") + (kind == Tok::rparen ? ")" : "]") + "' before '" + std::string(t.text) + "'",
         t.loc);
  }

  Parsed primary() {
    const Token& t = take();
    switch (t.kind) {
      case Tok::number: {
        auto n = make_node(Op::number, t.loc);
        n->value = t.value;
        return {n, 1};
      }
      case Tok::ident:
        return identifier(t);
      case Tok::lparen: {
        open_.emplace_back(t.loc, '(');
        guard(++nesting_, t.loc);
        Parsed inner = expression();
        --nesting_;
        expect_close(Tok::rparen, '(');
        return inner;
      }
      case Tok::lbracket: {
        open_.emplace_back(t.loc, '[');
        guard(++nesting_, t.loc);
        auto n = make_node(Op::list, t.loc);
        int dep = 0;
        for (;;) {
          Parsed e = expression();
          dep = std::max(dep, e.depth);
          n->args.push_back(e.node);
          if (peek().kind != Tok::comma) break;
          take();
        }
        --nesting_;
        expect_close(Tok::rbracket, '[');
        guard(dep + 1, t.loc);
        return {n, dep + 1};
      }
      default:
        --pos_;
        missing_operand(t);
    }
  }

  Parsed identifier(const Token& t) {
    static constexpr std::pair<std::string_view, Op> functions[] = {
        {"exp", Op::exp}, {"log", Op::log}, {"sqrt", Op::sqrt}, {"abs", Op::abs},
        {"tanh", Op::tanh}, {"min", Op::min}, {"max", Op::max}};
    for (const auto& [name, op] : functions) {
      if (t.text != name) continue;
      if (peek().kind != Tok::lparen) fail("expected '(' after function '" + std::string(name) + "'", peek().loc);
      const Token& lp = take();
      open_.emplace_back(lp.loc, '(');
      guard(++nesting_, lp.loc);
      auto n = make_node(op, t.loc);
      int dep = 0;
      for (;;) {
        Parsed e = expression();
        dep = std::max(dep, e.depth);
        n->args.push_back(e.node);
        if (peek().kind != Tok::comma) break;
        take();
      }
      --nesting_;
      expect_close(Tok::rparen, '(');
      const bool variadic = op == Op::min || op == Op::max;
      if (variadic ? n->args.size() < 2 : n->args.size() != 1)
        fail(std::string(name) + (variadic ? " takes at least two arguments" : " takes one argument"), t.loc);
      guard(dep + 1, t.loc);
      return {n, dep + 1};
    }
    if (peek().kind == Tok::lparen) fail("unknown function '" + std::string(t.text) + "'", t.loc);

    auto n = make_node(Op::variable, t.loc);
    if (t.text == "t") {
      n->var = Var::t;
      return {n, 1};
    }
    if (t.text == "y") {
      n->var = Var::y;
      return {n, 1};
    }
    const char head = t.text[0];
    const std::string_view digits = t.text.substr(1);
    const bool indexed = (head == 'x' || head == 'z' || head == 'u') && !digits.empty() && digits[0] != '0' &&
                         std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; });
    if (!indexed) fail("unknown identifier '" + std::string(t.text) + "'", t.loc);
    unsigned long idx = 0;
    const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), idx);
    const std::size_t limit = head == 'x' ? dims_.n : head == 'z' ? dims_.d : dims_.k;
    const char* dim_name = head == 'x' ? "n" : head == 'z' ? "d" : "k";
    if (res.ec != std::errc() || idx > limit)
      fail("dimension mismatch: " + std::string(t.text) + " with " + dim_name + " = " + std::to_string(limit), t.loc);
    n->var = head == 'x' ? Var::x : head == 'z' ? Var::z : Var::u;
    n->index = static_cast<std::uint32_t>(idx - 1);
    return {n, 1};
  }

  // Lists only at the top level or directly inside a list; matrices must be rectangular.
  void check_lists(const NodePtr& node, bool allowed) const {
    if (node->op == Op::list) {
      if (!allowed) fail("lists may only appear at the top level", node->loc);
      const bool nested = node->args[0]->op == Op::list;
      for (const auto& a : node->args) {
        if ((a->op == Op::list) != nested) fail("list mixes scalars and lists", a->loc);
        if (nested) {
          if (a->args.size() != node->args[0]->args.size()) fail("rows of a matrix differ in length", a->loc);
          for (const auto& e : a->args) check_lists(e, false);
        } else {
          check_lists(a, false);
        }
      }
      return;
    }
    for (const auto& a : node->args) check_lists(a, false);
  }

  std::vector<Token> toks_;
  Dims dims_;
  std::size_t pos_ = 0;
  int nesting_ = 0;
  std::vector<std::pair<Location, char>> open_;
};

[[noreturn]] void eval_fail(const char* what, const Location& loc) { throw EvalError(what, loc); }

double apply(Op op, const double* a, std::size_t arity, const Location& loc) {
  double r = 0.0;
  switch (op) {
    case Op::neg: r = -a[0]; break;
    case Op::add: r = a[0] + a[1]; break;
    case Op::sub: r = a[0] - a[1]; break;
    case Op::mul: r = a[0] * a[1]; break;
    case Op::div:
      if (a[1] == 0.0) eval_fail("division by zero", loc);
      r = a[0] / a[1];
      break;
    case Op::pow:
      r = std::pow(a[0], a[1]);
      if (std::isnan(r)) eval_fail("invalid power", loc);
      break;
    case Op::exp: r = std::exp(a[0]); break;
    case Op::log:
      if (!(a[0] > 0.0)) eval_fail("log of a non-positive value", loc);
      r = std::log(a[0]);
      break;
    case Op::sqrt:
      if (!(a[0] >= 0.0)) eval_fail("sqrt of a negative value", loc);
      r = std::sqrt(a[0]);
      break;
    case Op::abs: r = std::abs(a[0]); break;
    case Op::tanh: r = std::tanh(a[0]); break;
    case Op::min:
      r = a[0];
      for (std::size_t i = 1; i < arity; ++i) r = std::min(r, a[i]);
      break;
    case Op::max:
      r = a[0];
      for (std::size_t i = 1; i < arity; ++i) r = std::max(r, a[i]);
      break;
    case Op::sign: r = static_cast<double>((a[0] > 0.0) - (a[0] < 0.0)); break;
    case Op::le: r = a[0] <= a[1] ? 1.0 : 0.0; break;
    default: eval_fail("not a scalar operation", loc);
  }
  if (!std::isfinite(r)) eval_fail("non-finite value", loc);
  return r;
}

double lookup(Var var, std::uint32_t index, const Bindings& b, const Location& loc) {
  switch (var) {
    case Var::t: return b.t;
    case Var::y: return b.y;
    case Var::x:
      if (index >= b.x.size()) eval_fail("unbound variable x", loc);
      return b.x[index];
    case Var::z:
      if (index >= b.z.size()) eval_fail("unbound variable z", loc);
      return b.z[index];
    case Var::u:
      if (index >= b.u.size()) eval_fail("unbound variable u", loc);
      return b.u[index];
  }
  return 0.0;
}

bool is_number(const NodePtr& n, double v) { return n->op == Op::number && n->value == v; }

int precedence(const NodePtr& n) {
  switch (n->op) {
    case Op::add:
    case Op::sub: return 1;
    case Op::mul:
    case Op::div: return 2;
    case Op::neg: return 3;
    case Op::pow: return 4;
    case Op::number: return n->value < 0.0 || std::signbit(n->value) ? 3 : 5;
    default: return 5;
  }
}

void print(const NodePtr& n, int min_prec, std::string& out) {
  const bool wrap = precedence(n) < min_prec;
  if (wrap) out += '(';
  switch (n->op) {
    case Op::number: {
      char buf[64];
      const auto res = std::to_chars(buf, buf + sizeof buf, n->value);
      out.append(buf, res.ptr);
      break;
    }
    case Op::variable:
      switch (n->var) {
        case Var::t: out += 't'; break;
        case Var::y: out += 'y'; break;
        case Var::x: out += 'x' + std::to_string(n->index + 1); break;
        case Var::z: out += 'z' + std::to_string(n->index + 1); break;
        case Var::u: out += 'u' + std::to_string(n->index + 1); break;
      }
      break;
    case Op::neg:
      out += '-';
      print(n->args[0], 3, out);
      break;
    case Op::add:
    case Op::sub:
      print(n->args[0], 1, out);
      out += n->op == Op::add ? " + " : " - ";
      print(n->args[1], 2, out);
      break;
    case Op::mul:
    case Op::div:
      print(n->args[0], 2, out);
      out += n->op == Op::mul ? " * " : " / ";
      print(n->args[1], 3, out);
      break;
    case Op::pow:
      print(n->args[0], 5, out);
      out += '^';
      print(n->args[1], 3, out);
      break;
    case Op::list:
      out += '[';
      for (std::size_t i = 0; i < n->args.size(); ++i) {
        if (i) out += ", ";
        print(n->args[i], 0, out);
      }
      out += ']';
      break;
    default: {
      static constexpr std::pair<Op, const char*> names[] = {
          {Op::exp, "exp"}, {Op::log, "log"}, {Op::sqrt, "sqrt"}, {Op::abs, "abs"}, {Op::tanh, "tanh"},
          {Op::min, "min"}, {Op::max, "max"}, {Op::sign, "sign"}, {Op::le, "le"}};
      for (const auto& [op, name] : names)
        if (op == n->op) out += name;
      out += '(';
      for (std::size_t i = 0; i < n->args.size(); ++i) {
        if (i) out += ", ";
        print(n->args[i], 0, out);
      }
      out += ')';
    }
  }
  if (wrap) out += ')';
}

}  // namespace

NodePtr number(double v) {
  auto n = make_node(Op::number, {});
  n->value = v;
  return n;
}

NodePtr variable(Var v, std::uint32_t index) {
  auto n = make_node(Op::variable, {});
  n->var = v;
  n->index = index;
  return n;
}

NodePtr make_unary(Op op, NodePtr a) {
  if (a->op == Op::number && op != Op::list) {
    // Fold only when the result is finite; otherwise keep the node so that
    // evaluation reports the domain error at run time.
    double r = 0.0;
    bool ok = true;
    try {
      r = apply(op, &a->value, 1, {});
    } catch (const EvalError&) {
      ok = false;
    }
    if (ok) return number(r);
  }
  if (op == Op::neg && a->op == Op::neg) return a->args[0];
  auto n = make_node(op, {});
  n->args = {std::move(a)};
  return n;
}

NodePtr make_binary(Op op, NodePtr a, NodePtr b) {
  if (a->op == Op::number && b->op == Op::number) {
    const double v[2] = {a->value, b->value};
    try {
      return number(apply(op, v, 2, {}));
    } catch (const EvalError&) {
    }
  }
  switch (op) {
    case Op::add:
      if (is_number(a, 0.0)) return b;
      if (is_number(b, 0.0)) return a;
      break;
    case Op::sub:
      if (is_number(b, 0.0)) return a;
      if (is_number(a, 0.0)) return make_unary(Op::neg, b);
      break;
    case Op::mul:
      if (is_number(a, 0.0) || is_number(b, 0.0)) return number(0.0);
      if (is_number(a, 1.0)) return b;
      if (is_number(b, 1.0)) return a;
      if (is_number(a, -1.0)) return make_unary(Op::neg, b);
      if (is_number(b, -1.0)) return make_unary(Op::neg, a);
      break;
    case Op::div:
      if (is_number(b, 1.0)) return a;
      if (is_number(a, 0.0) && b->op == Op::number) return number(0.0);
      break;
    case Op::pow:
      if (is_number(b, 1.0)) return a;
      if (is_number(b, 0.0)) return number(1.0);
      break;
    default:
      break;
  }
  auto n = make_node(op, {});
  n->args = {std::move(a), std::move(b)};
  return n;
}

NodePtr parse(std::string_view source, const Dims& dims, int first_line, int first_column) {
  Parser p(lex(source, first_line, first_column), dims);
  return p.run();
}

Shape shape_of(const NodePtr& node) {
  if (node->op != Op::list) return {};
  if (node->args[0]->op == Op::list) return {node->args.size(), node->args[0]->args.size(), true};
  return {node->args.size(), 1, true};
}

std::vector<NodePtr> components(const NodePtr& node, std::size_t rows, std::size_t cols, const std::string& what) {
  const Shape s = shape_of(node);
  auto mismatch = [&]() {
    fail("dimension mismatch: " + what + " must be " + std::to_string(rows) + " x " + std::to_string(cols) +
             ", got " + std::to_string(s.rows) + " x " + std::to_string(s.cols),
         node->loc);
  };
  std::vector<NodePtr> out;
  if (!s.is_list) {
    if (rows != 1 || cols != 1) mismatch();
    out.push_back(node);
    return out;
  }
  if (node->args[0]->op != Op::list) {
    if (!((rows == 1 && s.rows == cols) || (cols == 1 && s.rows == rows))) mismatch();
    return node->args;
  }
  if (s.rows != rows || s.cols != cols) mismatch();
  for (const auto& row : node->args)
    for (const auto& e : row->args) out.push_back(e);
  return out;
}

double evaluate(const NodePtr& n, const Bindings& b) {
  switch (n->op) {
    case Op::number: return n->value;
    case Op::variable: return lookup(n->var, n->index, b, n->loc);
    case Op::list: eval_fail("a list is not a scalar", n->loc);
    default: break;
  }
  double a[16];
  std::vector<double> big;
  double* args = a;
  if (n->args.size() > 16) {
    big.resize(n->args.size());
    args = big.data();
  }
  for (std::size_t i = 0; i < n->args.size(); ++i) args[i] = evaluate(n->args[i], b);
  return apply(n->op, args, n->args.size(), n->loc);
}

std::vector<double> evaluate_all(const NodePtr& node, const Bindings& b) {
  std::vector<double> out;
  const Shape s = shape_of(node);
  for (const auto& c : components(node, s.rows, s.cols, "value")) out.push_back(evaluate(c, b));
  return out;
}

NodePtr differentiate(const NodePtr& n, Var var, std::uint32_t index) {
  auto d = [&](const NodePtr& a) { return differentiate(a, var, index); };
  switch (n->op) {
    case Op::number: return number(0.0);
    case Op::variable: return number(n->var == var && (var == Var::t || var == Var::y || n->index == index) ? 1.0 : 0.0);
    case Op::neg: return make_unary(Op::neg, d(n->args[0]));
    case Op::add:
    case Op::sub: return make_binary(n->op, d(n->args[0]), d(n->args[1]));
    case Op::mul: {
      const auto& a = n->args[0];
      const auto& b = n->args[1];
      return make_binary(Op::add, make_binary(Op::mul, d(a), b), make_binary(Op::mul, a, d(b)));
    }
    case Op::div: {
      const auto& a = n->args[0];
      const auto& b = n->args[1];
      return make_binary(Op::sub, make_binary(Op::div, d(a), b),
                         make_binary(Op::div, make_binary(Op::mul, a, d(b)), make_binary(Op::mul, b, b)));
    }
    case Op::pow: {
      const auto& a = n->args[0];
      const auto& b = n->args[1];
      const NodePtr db = d(b);
      if (is_number(db, 0.0))
        return make_binary(Op::mul, make_binary(Op::mul, b, make_binary(Op::pow, a, make_binary(Op::sub, b, number(1.0)))),
                           d(a));
      return make_binary(Op::mul, n,
                         make_binary(Op::add, make_binary(Op::mul, db, make_unary(Op::log, a)),
                                     make_binary(Op::div, make_binary(Op::mul, b, d(a)), a)));
    }
    case Op::exp: return make_binary(Op::mul, n, d(n->args[0]));
    case Op::log: return make_binary(Op::div, d(n->args[0]), n->args[0]);
    case Op::sqrt: return make_binary(Op::div, d(n->args[0]), make_binary(Op::mul, number(2.0), n));
    case Op::abs: return make_binary(Op::mul, make_unary(Op::sign, n->args[0]), d(n->args[0]));
    case Op::tanh:
      return make_binary(Op::mul, make_binary(Op::sub, number(1.0), make_binary(Op::pow, n, number(2.0))),
                         d(n->args[0]));
    case Op::min:
    case Op::max: {
      // Fold left: m = op(m, a_i); the derivative follows the selected branch.
      NodePtr m = n->args[0];
      NodePtr dm = d(m);
      for (std::size_t i = 1; i < n->args.size(); ++i) {
        const NodePtr& a = n->args[i];
        const NodePtr pick_left =
            n->op == Op::min ? make_binary(Op::le, m, a) : make_binary(Op::le, a, m);
        dm = make_binary(Op::add, make_binary(Op::mul, pick_left, dm),
                         make_binary(Op::mul, make_binary(Op::sub, number(1.0), pick_left), d(a)));
        m = make_binary(n->op, m, a);
      }
      return dm;
    }
    case Op::sign:
    case Op::le: return number(0.0);
    case Op::list: {
      auto out = make_node(Op::list, n->loc);
      for (const auto& a : n->args) out->args.push_back(d(a));
      return out;
    }
  }
  return number(0.0);
}

std::string to_string(const NodePtr& node) {
  std::string out;
  print(node, 0, out);
  return out;
}

bool equal(const NodePtr& a, const NodePtr& b) {
  if (a->op != b->op || a->args.size() != b->args.size()) return false;
  if (a->op == Op::number && !(a->value == b->value && std::signbit(a->value) == std::signbit(b->value))) return false;
  if (a->op == Op::variable && (a->var != b->var || a->index != b->index)) return false;
  for (std::size_t i = 0; i < a->args.size(); ++i)
    if (!equal(a->args[i], b->args[i])) return false;
  return true;
}

int depth(const NodePtr& node) {
  int m = 0;
  for (const auto& a : node->args) m = std::max(m, depth(a));
  return m + 1;
}

Program::Program(const NodePtr& scalar) {
  if (scalar->op == Op::list) fail("a list is not a scalar", scalar->loc);
  std::size_t sp = 0;
  auto emit = [&](auto&& self, const NodePtr& n) -> void {
    for (const auto& a : n->args) self(self, a);
    code_.push_back({n->op, n->var, n->index, static_cast<std::uint32_t>(n->args.size()), n->value, n->loc});
    if (n->args.empty()) {
      ++sp;
    } else {
      sp -= n->args.size() - 1;
    }
    max_stack_ = std::max(max_stack_, sp);
  };
  emit(emit, scalar);
}

double Program::operator()(const Bindings& b) const {
  double small[128];
  std::vector<double> big;
  double* st = small;
  if (max_stack_ > 128) {
    big.resize(max_stack_);
    st = big.data();
  }
  std::size_t sp = 0;
  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::number: st[sp++] = in.value; break;
      case Op::variable: st[sp++] = lookup(in.var, in.index, b, in.loc); break;
      default: {
        sp -= in.arity;
        st[sp] = apply(in.op, st + sp, in.arity, in.loc);
        ++sp;
      }
    }
  }
  return st[0];
}

}  // namespace qsmp::expr
