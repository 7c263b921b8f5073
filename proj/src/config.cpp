#include "qsmp/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "qsmp/error.hpp"
#include "qsmp/families.hpp"

namespace qsmp {
namespace {

[[noreturn]] void fail_at(const ConfigEntry& e, const std::string& what) {
  throw ConfigError(what, e.line, e.column);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  auto alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  if (!alpha(s[0])) return false;
  return std::all_of(s.begin(), s.end(), [&](char c) { return alpha(c) || (c >= '0' && c <= '9') || c == '-' || c == '.'; });
}

expr::NodePtr parse_entry(const ConfigEntry& e, const expr::Dims& dims) {
  return expr::parse(e.value, dims, std::max(e.line, 1), std::max(e.column, 1));
}

bool uses_variables(const expr::NodePtr& n) {
  if (n->op == expr::Op::variable) return true;
  return std::any_of(n->args.begin(), n->args.end(), uses_variables);
}

// Values of a constant expression, flattened.
std::vector<double> constant_values(const ConfigEntry& e) {
  const auto node = parse_entry(e, {0, 0, 0});
  if (uses_variables(node)) fail_at(e, "expected a constant");
  try {
    return expr::evaluate_all(node, {});
  } catch (const expr::EvalError& err) {
    throw ConfigError(err.what(), err.location().line, err.location().column);
  }
}

double constant(const ConfigEntry& e) {
  const auto v = constant_values(e);
  if (v.size() != 1) fail_at(e, "expected a single number");
  return v[0];
}

double positive(const ConfigEntry& e) {
  const double v = constant(e);
  if (!(v > 0.0)) fail_at(e, "expected a positive number");
  return v;
}

double nonnegative(const ConfigEntry& e) {
  const double v = constant(e);
  if (!(v >= 0.0)) fail_at(e, "expected a nonnegative number");
  return v;
}

std::uint64_t unsigned_integer(const ConfigEntry& e, std::uint64_t lo, std::uint64_t hi) {
  std::uint64_t v = 0;
  const auto* first = e.value.data();
  const auto* last = first + e.value.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    // Allow constant expressions such as 1e5 or 2^10 when they are exact integers.
    const double d = constant(e);
    if (!(d >= 0.0 && d <= 9007199254740992.0 && d == std::floor(d))) fail_at(e, "expected a nonnegative integer");
    v = static_cast<std::uint64_t>(d);
  }
  if (v < lo || v > hi)
    fail_at(e, "expected an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return v;
}

std::string word(const ConfigEntry& e) {
  std::string_view v = e.value;
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  return std::string(v);
}

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"problem", {"family", "n", "d", "k", "T", "x0", "drift", "diffusion", "generator", "terminal"}},
      {"constants",
       {"alpha", "gamma", "L1", "L2", "L3", "f_y_sup", "Phi_sup", "Phi_x_sup", "sigma_x_sup", "b_x_sup", "b_u_sup",
        "sigma_u_sup"}},
      {"grid", {"N"}},
      {"monte_carlo", {"M", "seed", "stream", "degree", "cross_degree", "ridge_per_path"}},
      {"pipeline", {"name", "energy_n_max"}},
      {"output", {"dir", "format"}},
      {"tolerances", {"mp_tolerance_se", "inconclusive_ratio", "validation_samples", "fd_tolerance"}},
      {"controls",
       {"reference", "direction", "epsilons", "domain", "lower", "upper", "center", "radius", "normals", "offsets",
        "boundary_fraction", "mp_time_samples", "mp_path_samples", "mp_candidates", "mp_seed"}},
      {"descent", {"iterations", "step", "decay", "gradient_tolerance", "init_scale", "init_seed"}},
  };
  return keys;
}

ControlDomain build_domain(const ConfigFile& file, std::size_t k) {
  const ConfigEntry* kind = file.find("controls", "domain");
  auto need = [&](const char* key) -> const ConfigEntry& {
    const ConfigEntry* e = file.find("controls", key);
    if (!e) fail_at(*kind, std::string("domain '") + kind->value + "' needs '" + key + "'");
    return *e;
  };
  auto vector_of = [&](const ConfigEntry& e) {
    std::vector<double> v = constant_values(e);
    if (v.size() == 1 && k > 1) v.assign(k, v[0]);
    if (v.size() != k) fail_at(e, "dimension mismatch: expected " + std::to_string(k) + " values");
    return v;
  };
  const std::string name = word(*kind);
  try {
    if (name == "box") return ControlDomain::box(vector_of(need("lower")), vector_of(need("upper")));
    if (name == "ball") return ControlDomain::ball(vector_of(need("center")), positive(need("radius")));
    if (name == "unconstrained") return ControlDomain::unconstrained(k);
    if (name == "halfspaces") {
      const ConfigEntry& ne = need("normals");
      const ConfigEntry& oe = need("offsets");
      const auto node = parse_entry(ne, {0, 0, 0});
      const expr::Shape s = expr::shape_of(node);
      const std::vector<double> offsets = constant_values(oe);
      const std::size_t rows = offsets.size();
      const std::vector<double> flat = constant_values(ne);
      if (flat.size() != rows * k) fail_at(ne, "dimension mismatch: normals must be " + std::to_string(rows) + " x " + std::to_string(k));
      (void)s;
      std::vector<std::vector<double>> normals(rows);
      for (std::size_t r = 0; r < rows; ++r) normals[r].assign(flat.begin() + r * k, flat.begin() + (r + 1) * k);
      return ControlDomain::halfspaces(std::move(normals), offsets);
    }
  } catch (const DomainError& e) {
    fail_at(*kind, e.what());
  } catch (const SpecError& e) {
    fail_at(*kind, e.what());
  }
  fail_at(*kind, "unknown domain '" + name + "' (expected box, ball, halfspaces or unconstrained)");
}

void check_variables(const expr::NodePtr& n, bool allow_yz, bool allow_tu, const std::string& what) {
  if (n->op == expr::Op::variable) {
    const bool yz = n->var == expr::Var::y || n->var == expr::Var::z;
    const bool tu = n->var == expr::Var::t || n->var == expr::Var::u;
    if ((yz && !allow_yz) || (tu && !allow_tu))
      throw ConfigError(what + " may not depend on " + expr::to_string(n), n->loc.line, n->loc.column);
  }
  for (const auto& a : n->args) check_variables(a, allow_yz, allow_tu, what);
}

class ExpressionCoefficients final : public Coefficients {
 public:
  ExpressionCoefficients(const expr::Dims& dims, const ConfigEntry& drift, const ConfigEntry& diffusion,
                         const ConfigEntry& generator, const ConfigEntry& terminal)
      : n_(dims.n), d_(dims.d), k_(dims.k) {
    using expr::Var;
    const auto b = expr::components(parse_entry(drift, dims), n_, 1, "drift");
    const auto s = expr::components(parse_entry(diffusion, dims), n_, d_, "diffusion");
    const auto f = expr::components(parse_entry(generator, dims), 1, 1, "generator")[0];
    const auto phi = expr::components(parse_entry(terminal, dims), 1, 1, "terminal")[0];
    for (const auto& e : b) check_variables(e, false, true, "drift");
    for (const auto& e : s) check_variables(e, false, true, "diffusion");
    check_variables(phi, false, false, "terminal");

    auto d = [](const expr::NodePtr& e, Var v, std::size_t i) {
      return expr::Program(expr::differentiate(e, v, static_cast<std::uint32_t>(i)));
    };
    for (const auto& e : b) drift_.emplace_back(e);
    for (const auto& e : s) diffusion_.emplace_back(e);
    generator_ = expr::Program(f);
    terminal_ = expr::Program(phi);
    for (std::size_t r = 0; r < n_; ++r) {
      for (std::size_t c = 0; c < n_; ++c) bx_.push_back(d(b[r], Var::x, c));
      for (std::size_t c = 0; c < k_; ++c) bu_.push_back(d(b[r], Var::u, c));
    }
    for (std::size_t i = 0; i < d_; ++i)
      for (std::size_t r = 0; r < n_; ++r) {
        for (std::size_t c = 0; c < n_; ++c) sx_.push_back(d(s[r * d_ + i], Var::x, c));
        for (std::size_t c = 0; c < k_; ++c) su_.push_back(d(s[r * d_ + i], Var::u, c));
      }
    for (std::size_t c = 0; c < n_; ++c) {
      fx_.push_back(d(f, Var::x, c));
      phix_.push_back(d(phi, Var::x, c));
    }
    fy_ = d(f, Var::y, 0);
    for (std::size_t c = 0; c < d_; ++c) fz_.push_back(d(f, Var::z, c));
    for (std::size_t c = 0; c < k_; ++c) fu_.push_back(d(f, Var::u, c));
  }

  void drift(double t, std::span<const double> x, std::span<const double> u, std::span<double> out) const override {
    run(drift_, {t, x, 0.0, {}, u}, out);
  }
  void diffusion(double t, std::span<const double> x, std::span<const double> u,
                 std::span<double> out) const override {
    run(diffusion_, {t, x, 0.0, {}, u}, out);
  }
  double generator(double t, std::span<const double> x, double y, std::span<const double> z,
                   std::span<const double> u) const override {
    return generator_({t, x, y, z, u});
  }
  double terminal(std::span<const double> x) const override { return terminal_({0.0, x, 0.0, {}, {}}); }
  void drift_dx(double t, std::span<const double> x, std::span<const double> u, std::span<double> out) const override {
    run(bx_, {t, x, 0.0, {}, u}, out);
  }
  void drift_du(double t, std::span<const double> x, std::span<const double> u, std::span<double> out) const override {
    run(bu_, {t, x, 0.0, {}, u}, out);
  }
  void diffusion_dx(double t, std::span<const double> x, std::span<const double> u,
                    std::span<double> out) const override {
    run(sx_, {t, x, 0.0, {}, u}, out);
  }
  void diffusion_du(double t, std::span<const double> x, std::span<const double> u,
                    std::span<double> out) const override {
    run(su_, {t, x, 0.0, {}, u}, out);
  }
  void generator_dx(double t, std::span<const double> x, double y, std::span<const double> z,
                    std::span<const double> u, std::span<double> out) const override {
    run(fx_, {t, x, y, z, u}, out);
  }
  double generator_dy(double t, std::span<const double> x, double y, std::span<const double> z,
                      std::span<const double> u) const override {
    return fy_({t, x, y, z, u});
  }
  void generator_dz(double t, std::span<const double> x, double y, std::span<const double> z,
                    std::span<const double> u, std::span<double> out) const override {
    run(fz_, {t, x, y, z, u}, out);
  }
  void generator_du(double t, std::span<const double> x, double y, std::span<const double> z,
                    std::span<const double> u, std::span<double> out) const override {
    run(fu_, {t, x, y, z, u}, out);
  }
  void terminal_dx(std::span<const double> x, std::span<double> out) const override {
    run(phix_, {0.0, x, 0.0, {}, {}}, out);
  }

 private:
  static void run(const std::vector<expr::Program>& progs, const expr::Bindings& b, std::span<double> out) {
    for (std::size_t i = 0; i < progs.size(); ++i) out[i] = progs[i](b);
  }

  std::size_t n_, d_, k_;
  std::vector<expr::Program> drift_, diffusion_, bx_, bu_, sx_, su_, fx_, fz_, fu_, phix_;
  expr::Program generator_, terminal_, fy_;
};

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text) {
  // Lines without their comments.
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0;;) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    lines.push_back(raw.substr(0, std::min(raw.size(), raw.find_first_of("#;"))));
    if (end == text.size()) break;
    pos = end + 1;
  }
  auto depth_of = [](std::string_view v) {
    int depth = 0;
    for (char c : v) depth += (c == '(' || c == '[') - (c == ')' || c == ']');
    return depth;
  };

  ConfigFile out;
  std::string section;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const int line_no = static_cast<int>(li) + 1;
    const std::string_view line = lines[li];
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const int body_col = static_cast<int>(body.data() - line.data()) + 1;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError("expected ']' to close the section name", line_no, body_col);
      const std::string_view name = trim(body.substr(1, body.size() - 2));
      if (!valid_name(name)) throw ConfigError("invalid section name", line_no, body_col);
      section = std::string(name);
      if (out.section_lines_.count(section)) throw ConfigError("duplicate section [" + section + "]", line_no, body_col);
      out.section_lines_[section] = line_no;
      out.sections_[section];
      continue;
    }
    const std::size_t eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'", line_no, body_col);
    const std::string_view key = trim(body.substr(0, eq));
    if (!valid_name(key)) throw ConfigError("invalid key", line_no, body_col);
    if (section.empty()) throw ConfigError("key outside of a section", line_no, body_col);
    const std::string_view value = trim(body.substr(eq + 1));
    if (value.empty()) throw ConfigError("missing value", line_no, body_col + static_cast<int>(eq) + 1);
    ConfigEntry e;
    e.value = std::string(value);
    e.line = line_no;
    e.column = static_cast<int>(value.data() - line.data()) + 1;
    e.key_column = body_col;
    // An open bracket continues the value on the following lines; columns
    // stay exact because continuation lines are kept unindented.
    int depth = depth_of(value);
    while (depth > 0 && li + 1 < lines.size()) {
      const std::string_view next = lines[++li];
      std::string_view kept = next;
      while (!kept.empty() && (kept.back() == ' ' || kept.back() == '\t' || kept.back() == '\r')) kept.remove_suffix(1);
      e.value += '\n';
      e.value += kept;
      depth += depth_of(kept);
    }
    auto& sec = out.sections_[section];
    if (sec.count(std::string(key))) throw ConfigError("duplicate key '" + std::string(key) + "'", line_no, body_col);
    sec.emplace(std::string(key), std::move(e));
  }
  return out;
}

const ConfigEntry* ConfigFile::find(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  const auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

int ConfigFile::section_line(const std::string& section) const {
  const auto it = section_lines_.find(section);
  return it == section_lines_.end() ? 0 : it->second;
}

const char* to_string(Pipeline p) {
  switch (p) {
    case Pipeline::solve: return "solve";
    case Pipeline::adjoint: return "adjoint";
    case Pipeline::gradient_check: return "gradient-check";
    case Pipeline::descend: return "descend";
    case Pipeline::mp_check: return "mp-check";
    case Pipeline::bmo: return "bmo";
    case Pipeline::constants: return "constants";
  }
  return "";
}

std::vector<std::string> pipeline_names() {
  return {"solve", "adjoint", "gradient-check", "descend", "mp-check", "bmo", "constants"};
}

std::optional<Pipeline> pipeline_from_string(std::string_view name) {
  for (Pipeline p : {Pipeline::solve, Pipeline::adjoint, Pipeline::gradient_check, Pipeline::descend,
                     Pipeline::mp_check, Pipeline::bmo, Pipeline::constants})
    if (name == to_string(p)) return p;
  return std::nullopt;
}

ExperimentConfig parse_experiment(std::string_view text) {
  ExperimentConfig cfg;
  cfg.text = std::string(text);
  cfg.file = ConfigFile::parse(text);
  const ConfigFile& f = cfg.file;

  const ConfigEntry* family = f.find("problem", "family");
  for (const auto& [section, entries] : f.sections()) {
    const auto known = known_keys().find(section);
    if (known == known_keys().end())
      throw ConfigError("unknown section [" + section + "]", f.section_line(section), 1);
    for (const auto& [key, e] : entries) {
      if (known->second.count(key)) continue;
      // Remaining [problem] keys are family parameters.
      if (section == "problem" && family) continue;
      throw ConfigError("unknown key '" + key + "' in [" + section + "]", e.line, e.key_column);
    }
  }
  auto get = [&](const char* s, const char* k) { return f.find(s, k); };

  if (family) {
    cfg.family = word(*family);
    const auto names = family_names();
    if (std::find(names.begin(), names.end(), cfg.family) == names.end())
      fail_at(*family, "unknown family '" + cfg.family + "'");
    for (const char* key : {"n", "d", "k", "drift", "diffusion", "generator", "terminal"})
      if (const ConfigEntry* e = get("problem", key))
        throw ConfigError(std::string("'") + key + "' is fixed by the family", e->line, e->key_column);
    if (f.sections().count("constants"))
      throw ConfigError("constants are declared by the family", f.section_line("constants"), 1);
    for (const auto& [key, e] : f.sections().at("problem")) {
      if (key == "family") continue;
      cfg.family_params[key] = constant(e);
    }
  } else {
    if (!f.sections().count("problem")) throw ConfigError("missing section [problem]", 1, 1);
    InlineProblem p;
    const int line = f.section_line("problem");
    auto dim = [&](const char* key) -> std::size_t {
      const ConfigEntry* e = get("problem", key);
      return e ? unsigned_integer(*e, 1, kMaxDim) : 1;
    };
    p.dims = {dim("n"), dim("d"), dim("k")};
    if (const ConfigEntry* e = get("problem", "T")) p.T = positive(*e);
    p.x0.assign(p.dims.n, 0.0);
    if (const ConfigEntry* e = get("problem", "x0")) {
      p.x0 = constant_values(*e);
      if (p.x0.size() != p.dims.n) fail_at(*e, "dimension mismatch: x0 needs " + std::to_string(p.dims.n) + " values");
    }
    auto need = [&](const char* key) {
      const ConfigEntry* e = get("problem", key);
      if (!e) throw ConfigError(std::string("missing key '") + key + "' in [problem]", line, 1);
      return *e;
    };
    p.drift = need("drift");
    p.diffusion = need("diffusion");
    p.generator = need("generator");
    p.terminal = need("terminal");
    AssumptionConstants& c = p.constants;
    const std::pair<const char*, double*> scalars[] = {
        {"alpha", &c.alpha},         {"gamma", &c.gamma},     {"L1", &c.L1},           {"L2", &c.L2},
        {"L3", &c.L3},               {"f_y_sup", &c.f_y_sup}, {"Phi_sup", &c.Phi_sup}, {"Phi_x_sup", &c.Phi_x_sup},
        {"b_x_sup", &c.b_x_sup},     {"b_u_sup", &c.b_u_sup}, {"sigma_u_sup", &c.sigma_u_sup}};
    for (const auto& [key, dst] : scalars)
      if (const ConfigEntry* e = get("constants", key)) *dst = nonnegative(*e);
    c.sigma_x_sup.assign(p.dims.d, 0.0);
    if (const ConfigEntry* e = get("constants", "sigma_x_sup")) {
      auto v = constant_values(*e);
      if (v.size() == 1) v.assign(p.dims.d, v[0]);
      if (v.size() != p.dims.d) fail_at(*e, "dimension mismatch: sigma_x_sup needs " + std::to_string(p.dims.d) + " values");
      c.sigma_x_sup = v;
    }
    cfg.inline_problem = std::move(p);
  }

  if (const ConfigEntry* e = get("grid", "N")) cfg.steps = unsigned_integer(*e, 1, 1000000);
  if (const ConfigEntry* e = get("monte_carlo", "M")) cfg.paths = unsigned_integer(*e, 2, 100000000);
  if (const ConfigEntry* e = get("monte_carlo", "seed")) cfg.seed = unsigned_integer(*e, 0, UINT64_MAX);
  if (const ConfigEntry* e = get("monte_carlo", "stream")) cfg.stream = unsigned_integer(*e, 0, UINT64_MAX);
  if (const ConfigEntry* e = get("monte_carlo", "degree")) cfg.basis.degree = static_cast<int>(unsigned_integer(*e, 0, 12));
  if (const ConfigEntry* e = get("monte_carlo", "cross_degree"))
    cfg.basis.cross_degree = static_cast<int>(unsigned_integer(*e, 0, 12));
  if (const ConfigEntry* e = get("monte_carlo", "ridge_per_path")) cfg.ridge_per_path = nonnegative(*e);

  if (const ConfigEntry* e = get("pipeline", "name")) {
    const auto p = pipeline_from_string(word(*e));
    if (!p) fail_at(*e, "unknown pipeline '" + word(*e) + "'");
    cfg.pipeline = *p;
  }
  if (const ConfigEntry* e = get("pipeline", "energy_n_max")) cfg.energy_n_max = static_cast<int>(unsigned_integer(*e, 1, 6));
  if (const ConfigEntry* e = get("output", "dir")) cfg.output_dir = word(*e);
  if (const ConfigEntry* e = get("output", "format")) {
    cfg.format = word(*e);
    if (cfg.format != "csv" && cfg.format != "json") fail_at(*e, "format must be csv or json");
  }

  if (const ConfigEntry* e = get("tolerances", "mp_tolerance_se")) cfg.mp_tolerance_se = nonnegative(*e);
  if (const ConfigEntry* e = get("tolerances", "inconclusive_ratio")) cfg.inconclusive_ratio = positive(*e);
  if (const ConfigEntry* e = get("tolerances", "validation_samples"))
    cfg.validation_samples = unsigned_integer(*e, 1, 10000000);
  if (const ConfigEntry* e = get("tolerances", "fd_tolerance")) cfg.fd_tolerance = positive(*e);

  if (const ConfigEntry* e = get("controls", "reference")) cfg.reference = *e;
  if (const ConfigEntry* e = get("controls", "direction")) cfg.direction = *e;
  if (const ConfigEntry* e = get("controls", "epsilons")) {
    cfg.epsilons = constant_values(*e);
    for (double v : cfg.epsilons)
      if (!(v > 0.0 && v <= 1.0)) fail_at(*e, "epsilons must lie in (0, 1]");
    if (cfg.epsilons.size() < 2) fail_at(*e, "at least two epsilons are needed");
  }
  if (const ConfigEntry* e = get("controls", "boundary_fraction")) {
    cfg.boundary_fraction = constant(*e);
    if (!(cfg.boundary_fraction >= 0.0 && cfg.boundary_fraction <= 1.0)) fail_at(*e, "expected a number in [0, 1]");
  }
  if (const ConfigEntry* e = get("controls", "mp_time_samples")) cfg.mp_time_samples = unsigned_integer(*e, 1, 1000000);
  if (const ConfigEntry* e = get("controls", "mp_path_samples")) cfg.mp_path_samples = unsigned_integer(*e, 1, 1000000);
  if (const ConfigEntry* e = get("controls", "mp_candidates")) cfg.mp_candidates = unsigned_integer(*e, 1, 1000000);
  if (const ConfigEntry* e = get("controls", "mp_seed")) cfg.mp_seed = unsigned_integer(*e, 0, UINT64_MAX);
  for (const char* key : {"lower", "upper", "center", "radius", "normals", "offsets"})
    if (const ConfigEntry* e = get("controls", key); e && !get("controls", "domain"))
      throw ConfigError(std::string("'") + key + "' requires 'domain'", e->line, e->key_column);

  if (const ConfigEntry* e = get("descent", "iterations")) cfg.descent_iterations = unsigned_integer(*e, 0, 100000);
  if (const ConfigEntry* e = get("descent", "step")) cfg.descent_step = positive(*e);
  if (const ConfigEntry* e = get("descent", "decay")) cfg.descent_decay = nonnegative(*e);
  if (const ConfigEntry* e = get("descent", "gradient_tolerance")) cfg.descent_gradient_tolerance = nonnegative(*e);
  if (const ConfigEntry* e = get("descent", "init_scale")) cfg.descent_init_scale = nonnegative(*e);
  if (const ConfigEntry* e = get("descent", "init_seed")) cfg.descent_init_seed = unsigned_integer(*e, 0, UINT64_MAX);
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str());
}

std::shared_ptr<const Coefficients> expression_coefficients(const expr::Dims& dims, const ConfigEntry& drift,
                                                            const ConfigEntry& diffusion,
                                                            const ConfigEntry& generator,
                                                            const ConfigEntry& terminal) {
  return std::make_shared<ExpressionCoefficients>(dims, drift, diffusion, generator, terminal);
}

ProblemSpec build_problem(const ExperimentConfig& cfg) {
  ProblemSpec spec;
  if (!cfg.family.empty()) {
    for (const auto& [key, value] : cfg.family_params) {
      try {
        (void)make_family(cfg.family, {{key, value}});
      } catch (const SpecError& e) {
        const ConfigEntry* entry = cfg.file.find("problem", key);
        throw ConfigError(e.what(), entry ? entry->line : 0, entry ? entry->key_column : 0);
      }
    }
    spec = make_family(cfg.family, cfg.family_params);
  } else {
    const InlineProblem& p = *cfg.inline_problem;
    spec.name = "inline";
    spec.n = p.dims.n;
    spec.d = p.dims.d;
    spec.k = p.dims.k;
    spec.T = p.T;
    spec.x0 = p.x0;
    spec.coeffs = expression_coefficients(p.dims, p.drift, p.diffusion, p.generator, p.terminal);
    spec.constants = p.constants;
    spec.domain = ControlDomain::unconstrained(spec.k);
  }
  if (cfg.file.find("controls", "domain")) spec.domain = build_domain(cfg.file, spec.k);
  try {
    spec.check();
  } catch (const SpecError& e) {
    throw ConfigError(e.what(), cfg.file.section_line("problem"), 1);
  }
  return spec;
}

std::shared_ptr<const ControlProcess> build_control(const ConfigEntry& entry, const ProblemSpec& spec) {
  const expr::Dims dims{spec.n, 0, spec.k};
  const auto node = parse_entry(entry, dims);
  const auto comps = expr::components(node, spec.k, 1, "control");
  for (const auto& c : comps) {
    check_variables(c, false, true, "control");
    auto no_u = [&](auto&& self, const expr::NodePtr& n) -> void {
      if (n->op == expr::Op::variable && n->var == expr::Var::u)
        throw ConfigError("control may not depend on " + expr::to_string(n), n->loc.line, n->loc.column);
      for (const auto& a : n->args) self(self, a);
    };
    no_u(no_u, c);
  }
  if (!uses_variables(node)) {
    std::vector<double> v;
    try {
      v = expr::evaluate_all(node, {});
    } catch (const expr::EvalError& err) {
      throw ConfigError(err.what(), err.location().line, err.location().column);
    }
    if (v.size() != spec.k) v.assign(spec.k, v.empty() ? 0.0 : v[0]);
    spec.domain.project_in_place(v);
    return std::make_shared<ConstantControl>(std::move(v));
  }
  std::vector<expr::Program> progs;
  for (const auto& c : comps) progs.emplace_back(c);
  const ControlDomain domain = spec.domain;
  return std::make_shared<FeedbackControl>(
      spec.k, [progs = std::move(progs), domain](double t, std::span<const double> x, std::span<double> out) {
        for (std::size_t i = 0; i < progs.size(); ++i) out[i] = progs[i]({t, x, 0.0, {}, {}});
        domain.project_in_place(out);
      });
}

}  // namespace qsmp
