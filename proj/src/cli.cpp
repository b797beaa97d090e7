#include "shiftlab/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "shiftlab/errors.hpp"

namespace shiftlab {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config reading

// Wraps one JSON object, remembers which keys were read and rejects the rest.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    std::string where = key.empty() ? path_ : (path_.empty() ? key : path_ + "." + key);
    throw ValidationError((where.empty() ? "config" : where) + ": " + msg);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    const json& v = raw(key);
    if (!v.is_number()) fail(key, "must be a number");
    double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  }
  double number(const std::string& key, double fallback) {
    return has(key) ? number(key) : fallback;
  }

  long integer(const std::string& key, long fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_integer()) fail(key, "must be an integer");
    return v.get<long>();
  }
  long integer(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    return integer(key, 0);
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_unsigned()) fail(key, "must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) fail(key, "must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    const json& v = raw(key);
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    const json& v = raw(key);
    if (!v.is_array()) fail(key, "must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "must be an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(key, "must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(key, "must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  Block child(const std::string& key) { return Block(raw(key), sub(key)); }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(it.key(), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Runs fn, rethrowing model-level precondition failures as validation errors
// tagged with the block path.
template <class Fn>
auto checked(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError&) {
    throw;
  } catch (const Error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

Coefficients read_coefficients(Block& b) {
  Coefficients c;
  c.r = b.number("r");
  c.mu = b.number("mu");
  c.sigma = b.number("sigma");
  c.b = b.number("b", 0.0);
  return c;
}

MarketModel parse_model(Block b) {
  std::string family = b.string("family");
  double rho = b.number("rho", 0.0);
  if (!(std::abs(rho) < 1.0)) b.fail("rho", "must satisfy |rho| < 1");
  double sigma_min = b.number("sigma_min", 1e-6);
  if (!(sigma_min > 0.0)) b.fail("sigma_min", "must be positive");
  auto make = [&]() -> MarketModel {
    if (family == "constant") {
      Coefficients c = read_coefficients(b);
      return checked("model", [&] { return MarketModel::constant(c, rho, sigma_min); });
    }
    if (family == "affine") {
      Block ib = b.child("intercept");
      Block sb = b.child("slope");
      AffineCoefficients a;
      a.intercept = read_coefficients(ib);
      a.slope.r = sb.number("r", 0.0);
      a.slope.mu = sb.number("mu", 0.0);
      a.slope.sigma = sb.number("sigma", 0.0);
      a.slope.b = sb.number("b", 0.0);
      ib.finish();
      sb.finish();
      double lo = b.number("y_lo");
      double hi = b.number("y_hi");
      return checked("model", [&] { return MarketModel::affine(a, lo, hi, rho, sigma_min); });
    }
    if (family == "table") {
      std::vector<double> y = b.numbers("y");
      std::vector<double> r = b.numbers("r");
      std::vector<double> mu = b.numbers("mu");
      std::vector<double> sigma = b.numbers("sigma");
      std::vector<double> drift = b.has("b") ? b.numbers("b") : std::vector<double>(y.size());
      for (const auto* v : {&r, &mu, &sigma, &drift})
        if (v->size() != y.size()) b.fail("", "every table column needs one value per y node");
      std::vector<Coefficients> rows(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) rows[i] = {r[i], mu[i], sigma[i], drift[i]};
      return checked("model", [&] { return MarketModel::table(y, rows, rho, sigma_min); });
    }
    b.fail("family", "must be constant, affine or table");
  };
  MarketModel m = make();
  b.finish();
  return m;
}

UtilitySpec parse_utility(Block b) {
  std::string family = b.string("family");
  auto make = [&]() -> UtilitySpec {
    if (family == "exponential") {
      double alpha = b.number("alpha");
      return checked("utility", [&] { return UtilitySpec::exponential(alpha); });
    }
    if (family == "power") {
      double gamma = b.number("gamma");
      return checked("utility", [&] { return UtilitySpec::power(gamma); });
    }
    if (family == "log") return UtilitySpec::log();
    b.fail("family", "must be exponential, power or log");
  };
  UtilitySpec u = make();
  b.finish();
  return u;
}

GridSpec parse_grid(Block b) {
  GridSpec g;
  g.t0 = b.number("t0");
  g.T = b.number("T");
  g.nt = static_cast<int>(b.integer("nt"));
  g.x_min = b.number("x_min");
  g.x_max = b.number("x_max");
  g.nx = static_cast<int>(b.integer("nx"));
  g.ny = static_cast<int>(b.integer("ny"));
  bool lo = b.has("y_min"), hi = b.has("y_max");
  if (lo != hi) b.fail("", "y_min and y_max must be given together");
  if (lo) {
    if (b.has("y_center")) b.fail("y_center", "cannot be combined with y_min/y_max");
    g.y_min = b.number("y_min");
    g.y_max = b.number("y_max");
  } else {
    double center = b.number("y_center", 0.0);
    auto [ylo, yhi] = factor_domain(center, g.T - g.t0);
    g.y_min = ylo;
    g.y_max = yhi;
  }
  b.finish();
  checked("grid", [&] {
    g.validate();
    return 0;
  });
  return g;
}

XBoundary parse_boundary(Block& b, const std::string& key) {
  std::string s = b.string(key, "one_sided");
  if (s == "one_sided") return XBoundary::OneSided;
  if (s == "zero_policy") return XBoundary::ZeroPolicy;
  b.fail(key, "must be one_sided or zero_policy");
}

void parse_solver(Block b, SolverConfig& s, DiagnosticBounds& bounds) {
  std::string scheme = b.string("scheme", "implicit_x");
  if (scheme == "explicit")
    s.scheme = Scheme::Explicit;
  else if (scheme == "implicit_x")
    s.scheme = Scheme::ImplicitX;
  else
    b.fail("scheme", "must be explicit or implicit_x");
  bool lo = b.has("pi_lo"), hi = b.has("pi_hi");
  if (lo != hi) b.fail("", "pi_lo and pi_hi must be given together");
  if (lo) {
    s.pi_bounds = {b.number("pi_lo"), b.number("pi_hi")};
    if (!(s.pi_bounds.lo < s.pi_bounds.hi)) b.fail("pi_lo", "must be below pi_hi");
  }
  s.x_lo_boundary = parse_boundary(b, "x_lo_boundary");
  s.x_hi_boundary = parse_boundary(b, "x_hi_boundary");
  s.curvature_floor = b.number("curvature_floor", s.curvature_floor);
  if (!(s.curvature_floor > 0.0)) b.fail("curvature_floor", "must be positive");
  s.spot_check_fraction = b.number("spot_check_fraction", s.spot_check_fraction);
  if (s.spot_check_fraction < 0.0 || s.spot_check_fraction > 1.0)
    b.fail("spot_check_fraction", "must lie in [0, 1]");
  s.spot_check_width = b.number("spot_check_width", s.spot_check_width);
  if (!(s.spot_check_width > 0.0)) b.fail("spot_check_width", "must be positive");
  s.spot_check_seed = b.unsigned_integer("spot_check_seed", s.spot_check_seed);
  bounds.max_residual = b.number("max_residual", bounds.max_residual);
  bounds.max_monotonicity_violations =
      b.integer("max_monotonicity_violations", bounds.max_monotonicity_violations);
  bounds.max_concavity_violations =
      b.integer("max_concavity_violations", bounds.max_concavity_violations);
  bounds.max_spot_check_failures =
      b.integer("max_spot_check_failures", bounds.max_spot_check_failures);
  b.finish();
}

SimConfig parse_sim(Block b, const std::optional<GridSpec>& grid) {
  SimConfig s;
  s.paths = b.integer("paths", s.paths);
  s.steps = static_cast<int>(b.integer("steps", s.steps));
  s.seed = b.unsigned_integer("seed", s.seed);
  s.antithetic = b.boolean("antithetic", s.antithetic);
  s.t0 = b.number("t0", grid ? grid->t0 : s.t0);
  s.T = b.number("T", grid ? grid->T : s.T);
  s.x0 = b.number("x0", s.x0);
  s.y0 = b.number("y0", s.y0);
  s.absorb_x = b.number("absorb_x", grid ? grid->x_min : s.absorb_x);
  b.finish();
  if (!(s.t0 > 0.0)) b.fail("t0", "must be positive");
  if (!(s.T > s.t0)) b.fail("T", "must exceed t0");
  checked("sim", [&] {
    s.validate();
    return 0;
  });
  return s;
}

ShiftPoint parse_point(Block b) {
  ShiftPoint p;
  p.beta = b.number("beta", 1.0);
  p.t = b.number("t", 1.0);
  p.x = b.number("x");
  p.y = b.number("y");
  b.finish();
  if (!(p.beta > 0.0)) b.fail("beta", "must be positive");
  if (!(p.t > 0.0)) b.fail("t", "must be positive");
  if (p.x == 0.0 || p.y == 0.0) b.fail("", "x and y must be nonzero");
  return p;
}

std::vector<double> parse_axis(Block& b, const std::string& key) {
  std::vector<double> v = b.numbers(key);
  if (v.size() != 3 || v[2] < 1 || v[2] != std::floor(v[2]))
    b.fail(key, "must be [lo, hi, count] with an integer count >= 1");
  int n = static_cast<int>(v[2]);
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(n == 1 ? v[0] : v[0] + (v[1] - v[0]) * i / (n - 1));
  return out;
}

IdentityId parse_identity(Block& b, const std::string& key, const std::string& name) {
  try {
    return identity_from_string(name);
  } catch (const Error&) {
    b.fail(key, "unknown identity '" + name + "'");
  }
}

void parse_identities(Block b, IdentitySuite& s) {
  if (b.has("functions")) {
    s.functions = b.strings("functions");
    for (const auto& f : s.functions) checked(b.sub("functions"), [&] { return named_function(f); });
  }
  if (b.has("identities")) {
    s.identities.clear();
    for (const auto& name : b.strings("identities"))
      s.identities.push_back(parse_identity(b, "identities", name));
  }
  if (b.has("points") && b.has("point_grid")) b.fail("", "give either points or point_grid");
  if (b.has("points")) {
    const json& arr = b.raw("points");
    if (!arr.is_array() || arr.empty()) b.fail("points", "must be a non-empty array");
    s.points.clear();
    for (std::size_t i = 0; i < arr.size(); ++i)
      s.points.push_back(parse_point(Block(arr[i], b.sub("points") + "[" + std::to_string(i) + "]")));
  }
  if (b.has("point_grid")) {
    Block pg = b.child("point_grid");
    std::vector<double> xs = parse_axis(pg, "x");
    std::vector<double> ys = parse_axis(pg, "y");
    double t = pg.number("t", 1.0);
    double beta = pg.number("beta", 1.0);
    pg.finish();
    s.points.clear();
    for (double x : xs)
      for (double y : ys) {
        json pj = {{"t", t}, {"x", x}, {"y", y}, {"beta", beta}};
        s.points.push_back(parse_point(Block(pj, pg.sub("point"))));
      }
  }
  s.h = b.number("h", s.h);
  if (!(s.h > 0.0 && s.h <= 0.1)) b.fail("h", "must lie in (0, 0.1]");
  s.tolerance = b.number("tolerance", s.tolerance);
  if (!(s.tolerance > 0.0)) b.fail("tolerance", "must be positive");
  s.ratio_h = b.number("ratio_h", s.ratio_h);
  if (!(s.ratio_h > 0.0 && s.ratio_h <= 0.1)) b.fail("ratio_h", "must lie in (0, 0.1]");
  if (b.has("expect_fail")) {
    const json& arr = b.raw("expect_fail");
    if (!arr.is_array()) b.fail("expect_fail", "must be an array");
    s.expect_fail.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Block e(arr[i], b.sub("expect_fail") + "[" + std::to_string(i) + "]");
      ExpectedFailure ef;
      ef.function = e.string("function");
      checked(e.sub("function"), [&] { return named_function(ef.function); });
      ef.identity = parse_identity(e, "identity", e.string("identity"));
      e.finish();
      s.expect_fail.push_back(ef);
    }
  }
  b.finish();
}

ReduceOptions parse_reduce(Block b) {
  ReduceOptions r;
  r.t = b.number("t", r.t);
  r.x = b.number("x", r.x);
  r.y = b.number("y", r.y);
  if (b.has("c")) r.c = b.number("c");
  r.beta_lo = b.number("beta_lo", r.beta_lo);
  r.beta_hi = b.number("beta_hi", r.beta_hi);
  if (b.has("pi")) r.pi = b.number("pi");
  r.ode.nodes = static_cast<int>(b.integer("nodes", r.ode.nodes));
  r.ode.quad_tol = b.number("quad_tol", r.ode.quad_tol);
  r.fixed_point.max_iterations =
      static_cast<int>(b.integer("max_iterations", r.fixed_point.max_iterations));
  r.fixed_point.rel_tol = b.number("rel_tol", r.fixed_point.rel_tol);
  r.fixed_point.curvature_floor = b.number("curvature_floor", r.fixed_point.curvature_floor);
  b.finish();
  if (!(r.t > 0.0)) b.fail("t", "must be positive");
  if (!(r.x > 0.0)) b.fail("x", "must be positive");
  if (r.y == 0.0) b.fail("y", "must be nonzero");
  if (r.c && *r.c == 0.0) b.fail("c", "must be nonzero");
  if (!(r.beta_lo > 0.0 && r.beta_lo <= 1.0 && r.beta_hi >= 1.0 && r.beta_lo < r.beta_hi))
    b.fail("", "need 0 < beta_lo <= 1 <= beta_hi with beta_lo < beta_hi");
  if (r.ode.nodes < 3) b.fail("nodes", "must be >= 3");
  if (!(r.ode.quad_tol > 0.0)) b.fail("quad_tol", "must be positive");
  if (r.fixed_point.max_iterations < 1) b.fail("max_iterations", "must be >= 1");
  if (!(r.fixed_point.rel_tol > 0.0)) b.fail("rel_tol", "must be positive");
  if (!(r.fixed_point.curvature_floor > 0.0)) b.fail("curvature_floor", "must be positive");
  return r;
}

PolicyName parse_policy(Block& b, const std::string& key, const std::string& name) {
  try {
    return policy_from_string(name);
  } catch (const ValidationError&) {
    b.fail(key, "unknown policy '" + name +
                    "' (expected zero, merton_power, merton_exponential, fd or paper)");
  }
}

void parse_simulate(Block b, SimulateOptions& s) {
  s.policy = parse_policy(b, "policy", b.string("policy", "zero"));
  s.dump_paths = b.boolean("dump_paths", false);
  if (b.has("value_check_points")) {
    const json& arr = b.raw("value_check_points");
    if (!arr.is_array()) b.fail("value_check_points", "must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Block pb(arr[i], b.sub("value_check_points") + "[" + std::to_string(i) + "]");
      ValuePoint p{pb.number("t"), pb.number("x"), pb.number("y")};
      pb.finish();
      s.value_points.push_back(p);
    }
  }
  b.finish();
}

// ---------------------------------------------------------------------------
// Output helpers

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// JSON number, or null when not finite.
ojson jnum(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

std::string field_csv(const GridField& f, const char* column) {
  const GridSpec& g = f.grid();
  std::string out = std::string("t,x,y,") + column + "\n";
  out.reserve(g.size() * 80);
  for (int k = 0; k <= g.nt; ++k)
    for (int i = 0; i < g.nx; ++i)
      for (int j = 0; j < g.ny; ++j) {
        out += num(g.t_at(k));
        out += ',';
        out += num(g.x_at(i));
        out += ',';
        out += num(g.y_at(j));
        out += ',';
        out += num(f.at(k, i, j));
        out += '\n';
      }
  return out;
}

ojson point_json(const ShiftPoint& p) {
  return {{"beta", p.beta}, {"t", p.t}, {"x", p.x}, {"y", p.y}};
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  std::size_t idx = static_cast<std::size_t>(std::ceil(q * v.size()));
  return v[std::min(v.size() - 1, idx == 0 ? 0 : idx - 1)];
}

template <class T>
const T& require(const std::optional<T>& v, const char* block, const char* command) {
  if (!v) throw ValidationError(std::string(command) + " needs a '" + block + "' block");
  return *v;
}

ojson sim_report_json(const SimReport& r) {
  return {{"label", r.label},
          {"estimate", jnum(r.estimate)},
          {"std_error", jnum(r.std_error)},
          {"ci95", {jnum(r.estimate - 1.96 * r.std_error), jnum(r.estimate + 1.96 * r.std_error)}},
          {"mean_x", jnum(r.mean_x)},
          {"var_x", jnum(r.var_x)},
          {"bankrupt", r.bankrupt},
          {"policy_clamped", r.policy_clamped},
          {"factor_clamped", r.factor_clamped},
          {"samples", r.samples},
          {"paths", r.paths},
          {"steps", r.steps}};
}

ojson sim_config_json(const SimConfig& s) {
  return {{"paths", s.paths}, {"steps", s.steps},   {"seed", s.seed}, {"antithetic", s.antithetic},
          {"t0", s.t0},       {"T", s.T},           {"x0", s.x0},     {"y0", s.y0},
          {"absorb_x", s.absorb_x}};
}

SolverConfig solver_config(const RunConfig& cfg) {
  SolverConfig s = cfg.solver;
  s.threads = cfg.threads;
  return s;
}

SimConfig sim_config(const RunConfig& cfg, const char* command) {
  SimConfig s = require(cfg.sim, "sim", command);
  s.threads = cfg.threads;
  return s;
}

// Builds the named policies, solving the HJB once if any of them needs it.
struct PolicySet {
  std::vector<PolicyField> fields;
  ojson notes = ojson::object();
};

PolicySet build_policies(const RunConfig& cfg, const std::vector<PolicyName>& names,
                         const char* command, std::optional<HjbSolution>& solution) {
  const MarketModel& model = require(cfg.model, "model", command);
  const UtilitySpec& utility = require(cfg.utility, "utility", command);
  SolverConfig scfg = solver_config(cfg);
  PolicySet set;
  for (PolicyName n : names) {
    if (needs_solution(n) && !solution) {
      const GridSpec& grid = require(cfg.grid, "grid", command);
      solution = solve(model, utility, grid, scfg);
    }
    switch (n) {
      case PolicyName::Zero: set.fields.push_back(zero_policy()); break;
      case PolicyName::MertonPower: set.fields.push_back(merton_power_policy(model, utility)); break;
      case PolicyName::MertonExponential:
        set.fields.push_back(
            merton_exponential_policy(model, utility, require(cfg.sim, "sim", command).T));
        break;
      case PolicyName::Fd: set.fields.push_back(extract_policy(*solution)); break;
      case PolicyName::Paper: {
        PaperPolicyStats st;
        set.fields.push_back(paper_policy(*solution, model, scfg, &st));
        set.notes["paper"] = {{"degenerate_nodes", st.degenerate},
                              {"singular_nodes", st.singular},
                              {"clipped_nodes", st.clipped}};
        break;
      }
    }
  }
  return set;
}

void check_policy_compat(const RunConfig& cfg, PolicyName n, const char* command) {
  if (needs_solution(n)) require(cfg.grid, "grid", command);
  const UtilitySpec& u = require(cfg.utility, "utility", command);
  if (n == PolicyName::MertonPower && u.family() == UtilityFamily::Exponential)
    throw ValidationError(std::string(command) + ": merton_power needs power or log utility");
  if (n == PolicyName::MertonExponential && u.family() != UtilityFamily::Exponential)
    throw ValidationError(std::string(command) + ": merton_exponential needs exponential utility");
}

}  // namespace

// ---------------------------------------------------------------------------

bool IdentitySuite::expects_failure(const std::string& fn, IdentityId id) const {
  return std::any_of(expect_fail.begin(), expect_fail.end(),
                     [&](const ExpectedFailure& e) { return e.function == fn && e.identity == id; });
}

IdentitySuite default_identity_suite() {
  IdentitySuite s;
  s.functions = {"x2", "xy", "exp_xy", "x_plus_y2", "sin_x_cos_y", "sin_xy", "exp_t_x2"};
  s.identities = all_identities();
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) {
      ShiftPoint p;
      p.t = 0.75;
      p.x = 0.6 + 0.2 * a;
      p.y = 0.6 + 0.2 * b;
      s.points.push_back(p);
    }
  s.expect_fail = {{"x_plus_y2", IdentityId::EQ9}};
  return s;
}

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  Block top(j, "");
  RunConfig cfg;
  cfg.threads = static_cast<int>(top.integer("threads", 1));
  if (cfg.threads < 1) top.fail("threads", "must be >= 1");
  cfg.output_dir = top.string("output_dir", "");
  if (top.has("model")) cfg.model = parse_model(top.child("model"));
  if (top.has("utility")) cfg.utility = parse_utility(top.child("utility"));
  if (top.has("grid")) {
    cfg.grid = parse_grid(top.child("grid"));
    if (cfg.utility && !cfg.utility->in_domain(cfg.grid->x_min))
      top.fail("grid", "x_min lies outside the utility domain");
    if (cfg.model && cfg.model->family() == CoefficientFamily::Table &&
        (cfg.grid->y_min < cfg.model->y_lo() || cfg.grid->y_max > cfg.model->y_hi()))
      top.fail("grid", "factor range exceeds the coefficient table");
  }
  if (top.has("solver")) parse_solver(top.child("solver"), cfg.solver, cfg.bounds);
  if (top.has("sim")) {
    cfg.sim = parse_sim(top.child("sim"), cfg.grid);
    if (cfg.utility && !cfg.utility->in_domain(cfg.sim->x0))
      top.fail("sim", "x0 lies outside the utility domain");
    if (cfg.utility && !cfg.utility->in_domain(cfg.sim->absorb_x))
      top.fail("sim", "absorb_x lies outside the utility domain");
  }
  if (top.has("identities")) parse_identities(top.child("identities"), cfg.identities);
  if (top.has("reduce")) cfg.reduce = parse_reduce(top.child("reduce"));
  if (top.has("simulate")) parse_simulate(top.child("simulate"), cfg.simulate);
  if (top.has("compare")) {
    Block cb = top.child("compare");
    if (!cb.has("policies")) cb.fail("policies", "is required");
    for (const auto& name : cb.strings("policies"))
      cfg.compare.push_back(parse_policy(cb, "policies", name));
    if (cfg.compare.size() < 2) cb.fail("policies", "needs at least two entries");
    cb.finish();
  }
  top.finish();
  if (cfg.grid && !cfg.simulate.value_points.empty())
    for (const auto& p : cfg.simulate.value_points)
      if (!cfg.grid->contains(p.t, p.x, p.y))
        top.fail("simulate", "value_check_points must lie inside the grid");
  return cfg;
}

// ---------------------------------------------------------------------------
// Commands

CommandResult cmd_check_identities(const RunConfig& config) {
  const IdentitySuite& s = config.identities;
  ojson records = ojson::array();
  std::map<std::string, std::vector<double>> residuals;
  std::map<std::string, std::vector<double>> witness;
  std::map<std::string, long> passed, failed;
  long skipped = 0;
  long unexpected = 0, missing = 0;
  std::string first_unexpected, first_missing;

  for (const auto& fname : s.functions) {
    NamedFunction nf = named_function(fname);
    for (IdentityId id : s.identities) {
      bool expect = s.expects_failure(fname, id);
      // The cross-derivative identity only holds for functions of x*y;
      // elsewhere it runs only as a declared witness.
      if (id == IdentityId::EQ9 && !nf.product_form && !expect) {
        skipped += static_cast<long>(s.points.size());
        continue;
      }
      for (const auto& p : s.points) {
        IdentityReport r = check_identity(nf.fn, p, id, s.tolerance, s.h);
        double ratio = convergence_ratio(nf.fn, p, id, s.ratio_h);
        ojson rec = {{"function", fname},
                     {"identity", to_string(id)},
                     {"point", point_json(p)},
                     {"scope", to_string(r.scope)},
                     {"h", r.h},
                     {"tolerance", r.tolerance},
                     {"transform_side", jnum(r.transform_side)},
                     {"direct_side", jnum(r.direct_side)},
                     {"residual", jnum(r.residual)},
                     {"alt_residual", jnum(r.alt_residual)},
                     {"scope_disagreement", jnum(r.scope_disagreement)},
                     {"convergence_ratio", jnum(ratio)},
                     {"pass", r.pass},
                     {"expect_fail", expect}};
        std::string key = to_string(id);
        if (expect) {
          witness[key].push_back(r.residual);
          if (r.pass && missing++ == 0) first_missing = rec.dump();
        } else {
          residuals[key].push_back(r.residual);
          (r.pass ? passed : failed)[key]++;
          if (!r.pass && unexpected++ == 0) first_unexpected = rec.dump();
        }
        records.push_back(std::move(rec));
      }
    }
  }

  ojson summary = ojson::object();
  for (IdentityId id : s.identities) {
    std::string key = to_string(id);
    ojson e = {{"checked", residuals[key].size()},
               {"passed", passed[key]},
               {"failed", failed[key]},
               {"residual_min", jnum(quantile(residuals[key], 0.0))},
               {"residual_median", jnum(quantile(residuals[key], 0.5))},
               {"residual_p90", jnum(quantile(residuals[key], 0.9))},
               {"residual_max", jnum(quantile(residuals[key], 1.0))}};
    if (!witness[key].empty()) {
      e["witness_records"] = witness[key].size();
      e["witness_residual_min"] = jnum(quantile(witness[key], 0.0));
    }
    summary[key] = e;
  }

  CommandResult res;
  ojson report = {{"h", s.h},
                  {"tolerance", s.tolerance},
                  {"ratio_h", s.ratio_h},
                  {"records_checked", records.size()},
                  {"eq9_skipped_non_product", skipped},
                  {"unexpected_failures", unexpected},
                  {"expected_failures_not_observed", missing},
                  {"summary", summary},
                  {"records", records}};
  res.files["identities.json"] = dump(report);
  if (unexpected > 0) {
    res.exit_code = kExitNumerical;
    res.message = "identity check failed: " + first_unexpected;
  } else if (missing > 0) {
    res.exit_code = kExitExpectedFailureMissing;
    res.message = "expected failure not observed: " + first_missing;
  } else {
    res.message = "all identities behaved as expected (" + std::to_string(records.size()) +
                  " records)";
  }
  return res;
}

CommandResult cmd_solve_fd(const RunConfig& config) {
  const MarketModel& model = require(config.model, "model", "solve-fd");
  const UtilitySpec& utility = require(config.utility, "utility", "solve-fd");
  const GridSpec& grid = require(config.grid, "grid", "solve-fd");
  SolverConfig scfg = solver_config(config);
  HjbSolution sol = solve(model, utility, grid, scfg);
  const HjbDiagnostics& d = sol.diagnostics;
  const DiagnosticBounds& b = config.bounds;

  ojson steps = ojson::array();
  for (const auto& s : d.steps)
    steps.push_back({{"step", s.step},
                     {"t", s.t},
                     {"max_residual", jnum(s.max_residual)},
                     {"clipped_nodes", s.clipped_nodes},
                     {"cfl", jnum(s.cfl)}});
  std::vector<std::string> violations;
  if (!(d.max_residual() <= b.max_residual)) violations.push_back("max_residual");
  if (d.monotonicity_violations > b.max_monotonicity_violations)
    violations.push_back("monotonicity_violations");
  if (d.concavity_violations > b.max_concavity_violations)
    violations.push_back("concavity_violations");
  if (d.spot_check_failures > b.max_spot_check_failures)
    violations.push_back("spot_check_failures");
  PiBounds pb = scfg.resolved_bounds(grid);
  ojson diag = {{"producer", sol.value.producer},
                {"scheme", to_string(scfg.scheme)},
                {"x_lo_boundary", to_string(scfg.x_lo_boundary)},
                {"x_hi_boundary", to_string(scfg.x_hi_boundary)},
                {"pi_bounds", {pb.lo, pb.hi}},
                {"max_residual", jnum(d.max_residual())},
                {"max_cfl", jnum(d.max_cfl())},
                {"monotonicity_violations", d.monotonicity_violations},
                {"concavity_violations", d.concavity_violations},
                {"spot_checks", d.spot_checks},
                {"spot_check_failures", d.spot_check_failures},
                {"bounds",
                 {{"max_residual", b.max_residual},
                  {"max_monotonicity_violations", b.max_monotonicity_violations},
                  {"max_concavity_violations", b.max_concavity_violations},
                  {"max_spot_check_failures", b.max_spot_check_failures}}},
                {"violations", violations},
                {"pass", violations.empty()},
                {"steps", steps}};

  CommandResult res;
  res.files["value.csv"] = field_csv(sol.value.field, "value");
  res.files["policy.csv"] = field_csv(sol.policy, "pi");
  res.files["diagnostics.json"] = dump(diag);
  if (!violations.empty()) {
    res.exit_code = kExitNumerical;
    std::string list;
    for (const auto& v : violations) list += (list.empty() ? "" : ", ") + v;
    res.message = "diagnostics outside configured bounds: " + list;
  } else {
    res.message = "solved " + std::to_string(grid.size()) + " nodes, max residual " +
                  num(d.max_residual());
  }
  return res;
}

CommandResult cmd_reduce_ode(const RunConfig& config) {
  const MarketModel& model = require(config.model, "model", "reduce-ode");
  const ReduceOptions& r = require(config.reduce, "reduce", "reduce-ode");

  double c = r.c ? *r.c : r.x * require(config.utility, "utility", "reduce-ode").eval(r.x).du;
  FixedPointResult fp = couple_policy(model, r.t, r.x, r.y, c, r.fixed_point);
  double pi = r.pi.value_or(fp.pi_paper);
  ReducedParams params = reduced_params(model, r.t, r.x, r.y, pi);
  ReducedCoefficients rc = collect_ode(params);
  OdeSolution ode = solve_vbeta(rc, r.beta_lo, r.beta_hi, c, r.ode);

  std::string csv = "beta,W,residual\n";
  for (std::size_t i = 0; i < ode.beta.size(); ++i)
    csv += num(ode.beta[i]) + ',' + num(ode.w[i]) + ',' + num(ode.residual[i]) + '\n';

  ojson report = {
      {"point", {{"t", r.t}, {"x", r.x}, {"y", r.y}}},
      {"coefficients",
       {{"r", params.coeffs.r},
        {"mu", params.coeffs.mu},
        {"sigma", params.coeffs.sigma},
        {"b", params.coeffs.b},
        {"rho", params.rho}}},
      {"ode",
       {{"pi", pi},
        {"pi_source", r.pi ? "config" : "fixed_point"},
        {"A_at_1", jnum(rc.A(1.0))},
        {"B_at_1", jnum(rc.B(1.0))},
        {"c", c},
        {"c_source", r.c ? "config" : "x_du"},
        {"beta_range", {r.beta_lo, r.beta_hi}},
        {"nodes", ode.beta.size()},
        {"max_residual", jnum(ode.max_residual())}}},
      {"policy",
       {{"pi_printed", jnum(fp.pi_paper)},
        {"pi_foc_root", jnum(fp.pi_foc)},
        {"difference", jnum(fp.difference)},
        {"excess_return_term", jnum(fp.terms.excess_return_term)},
        {"hedging_term", jnum(fp.terms.hedging_term)},
        {"v_beta", jnum(fp.v_beta)},
        {"v_betabeta", jnum(fp.v_betabeta)},
        {"pi_initial", jnum(fp.pi_initial)},
        {"iterations", fp.iterations}}}};

  CommandResult res;
  res.files["ode.csv"] = csv;
  res.files["pi_report.json"] = dump(report);
  res.message = "printed pi " + num(fp.pi_paper) + ", FOC root " + num(fp.pi_foc) +
                ", ODE max residual " + num(ode.max_residual());
  return res;
}

CommandResult cmd_simulate(const RunConfig& config) {
  const MarketModel& model = require(config.model, "model", "simulate");
  const UtilitySpec& utility = require(config.utility, "utility", "simulate");
  SimConfig sim = sim_config(config, "simulate");
  const SimulateOptions& opt = config.simulate;
  if (opt.dump_paths && sim.paths * static_cast<long>(sim.steps) > kMaxDumpRows)
    throw ValidationError("simulate: path dump would exceed " + std::to_string(kMaxDumpRows) +
                          " rows");

  std::optional<HjbSolution> solution;
  PolicySet set = build_policies(config, {opt.policy}, "simulate", solution);
  const PolicyField& policy = set.fields.front();
  SimReport rep = simulate_paths(model, policy, utility, sim);

  CommandResult res;
  ojson report = {{"config", sim_config_json(sim)}, {"report", sim_report_json(rep)}};
  if (!set.notes.empty()) report["policy_notes"] = set.notes;
  res.files["sim_report.json"] = dump(report);
  if (opt.dump_paths) {
    std::ostringstream os;
    dump_paths(model, policy, utility, sim, os);
    res.files["paths.csv"] = os.str();
  }
  if (!opt.value_points.empty()) {
    const GridSpec& grid = require(config.grid, "grid", "simulate");
    if (!solution) solution = solve(model, utility, grid, solver_config(config));
    auto rows = value_check(model, utility, *solution, sim, opt.value_points);
    ojson arr = ojson::array();
    long counted = 0, within = 0;
    for (const auto& row : rows) {
      arr.push_back({{"t", row.point.t},
                     {"x", row.point.x},
                     {"y", row.point.y},
                     {"v_fd", jnum(row.v_fd)},
                     {"v_mc", jnum(row.v_mc)},
                     {"std_error", jnum(row.std_error)},
                     {"z", jnum(row.z)},
                     {"boundary_affected", row.boundary_affected}});
      if (!row.boundary_affected) {
        ++counted;
        within += std::abs(row.z) < 3.0;
      }
    }
    res.files["value_check.json"] =
        dump({{"points", arr}, {"counted", counted}, {"within_3_se", within}});
  }
  res.message = rep.label + ": E[u(X_T)] = " + num(rep.estimate) + " +- " + num(rep.std_error);
  return res;
}

CommandResult cmd_compare(const RunConfig& config) {
  const MarketModel& model = require(config.model, "model", "compare");
  const UtilitySpec& utility = require(config.utility, "utility", "compare");
  SimConfig sim = sim_config(config, "compare");
  if (config.compare.size() < 2) throw ValidationError("compare needs a 'compare' block");

  std::optional<HjbSolution> solution;
  PolicySet set = build_policies(config, config.compare, "compare", solution);
  ComparisonReport rep = compare_policies(model, utility, set.fields, sim);

  ojson reports = ojson::array();
  for (const auto& r : rep.reports) reports.push_back(sim_report_json(r));
  ojson diffs = ojson::array();
  for (const auto& d : rep.differences)
    diffs.push_back({{"first", rep.reports[d.first].label},
                     {"second", rep.reports[d.second].label},
                     {"difference", jnum(d.difference)},
                     {"std_error", jnum(d.std_error)},
                     {"ci95",
                      {jnum(d.difference - 1.96 * d.std_error),
                       jnum(d.difference + 1.96 * d.std_error)}},
                     {"z", jnum(d.std_error > 0 ? d.difference / d.std_error
                                                : (d.difference == 0 ? 0.0 : NAN))}});
  ojson ranking = ojson::array();
  std::string csv = "rank,policy,estimate,std_error,ci_lo,ci_hi\n";
  for (std::size_t k = 0; k < rep.ranking.size(); ++k) {
    const SimReport& r = rep.reports[rep.ranking[k]];
    ranking.push_back(r.label);
    csv += std::to_string(k + 1) + ',' + r.label + ',' + num(r.estimate) + ',' +
           num(r.std_error) + ',' + num(r.estimate - 1.96 * r.std_error) + ',' +
           num(r.estimate + 1.96 * r.std_error) + '\n';
  }
  ojson out = {{"config", sim_config_json(sim)},
               {"reports", reports},
               {"differences", diffs},
               {"ranking", ranking}};
  if (!set.notes.empty()) out["policy_notes"] = set.notes;

  CommandResult res;
  res.files["comparison.json"] = dump(out);
  res.files["ranking.csv"] = csv;
  res.message = "best policy: " + rep.reports[rep.ranking.front()].label;
  return res;
}

// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

void write_artifacts(const std::string& dir, const std::string& command, const Artifacts& files) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  ojson list = ojson::array();
  for (const auto& [name, content] : files) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("cannot write " + (fs::path(dir) / name).string());
    list.push_back({{"file", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
  }
  std::string manifest = dump({{"command", command}, {"files", list}});
  std::ofstream f(fs::path(dir) / "manifest.json", std::ios::binary);
  f << manifest;
  if (!f) throw Error("cannot write manifest.json");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shift-parameter HJB laboratory"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  int threads = 0;
  std::uint64_t seed = 0;
  const std::vector<std::string> commands = {"check-identities", "solve-fd", "reduce-ode",
                                             "simulate", "compare"};
  for (const auto& name : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run config")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed-override", seed, "replace sim.seed");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  CLI::App* chosen = app.get_subcommands().front();
  std::string command = chosen->get_name();
  bool seed_given = chosen->get_option("--seed-override")->count() > 0;

  RunConfig cfg;
  try {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw ValidationError("cannot read config file '" + config_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = parse_run_config(ss.str());
    if (threads > 0) cfg.threads = threads;
    if (seed_given) {
      if (!cfg.sim) throw ValidationError("--seed-override needs a 'sim' block");
      cfg.sim->seed = seed;
    }
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (cfg.output_dir.empty()) cfg.output_dir = "out";
    // Command-specific requirements, still before any computation.
    if (command == "solve-fd") {
      require(cfg.model, "model", "solve-fd");
      require(cfg.utility, "utility", "solve-fd");
      require(cfg.grid, "grid", "solve-fd");
    } else if (command == "reduce-ode") {
      require(cfg.model, "model", "reduce-ode");
      require(cfg.reduce, "reduce", "reduce-ode");
      if (!cfg.reduce->c) {
        const UtilitySpec& u = require(cfg.utility, "utility", "reduce-ode (without reduce.c)");
        if (!u.in_domain(cfg.reduce->x)) throw ValidationError("reduce.x lies outside the utility domain");
      }
    } else if (command == "simulate") {
      require(cfg.model, "model", "simulate");
      require(cfg.sim, "sim", "simulate");
      check_policy_compat(cfg, cfg.simulate.policy, "simulate");
      if (!cfg.simulate.value_points.empty()) require(cfg.grid, "grid", "simulate");
      if (cfg.simulate.dump_paths &&
          cfg.sim->paths * static_cast<long>(cfg.sim->steps) > kMaxDumpRows)
        throw ValidationError("simulate: path dump would exceed " +
                              std::to_string(kMaxDumpRows) + " rows");
    } else if (command == "compare") {
      require(cfg.model, "model", "compare");
      require(cfg.sim, "sim", "compare");
      if (cfg.compare.size() < 2) throw ValidationError("compare needs a 'compare' block");
      for (PolicyName p : cfg.compare) check_policy_compat(cfg, p, "compare");
    }
  } catch (const Error& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  }

  CommandResult res;
  try {
    if (command == "check-identities")
      res = cmd_check_identities(cfg);
    else if (command == "solve-fd")
      res = cmd_solve_fd(cfg);
    else if (command == "reduce-ode")
      res = cmd_reduce_ode(cfg);
    else if (command == "simulate")
      res = cmd_simulate(cfg);
    else
      res = cmd_compare(cfg);
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const SingularCoefficientError& e) {
    err << "numerical failure: " << e.what() << " (bracket [" << num(e.bracket_lo()) << ", "
        << num(e.bracket_hi()) << "])\n";
    return kExitNumerical;
  } catch (const NonConvergenceError& e) {
    err << "numerical failure: " << e.what() << " (" << e.iterations() << " iterations)\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }

  try {
    write_artifacts(cfg.output_dir, command, res.files);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  (res.exit_code == kExitOk ? out : err) << command << ": " << res.message << "\n";
  return res.exit_code;
}

}  // namespace shiftlab
