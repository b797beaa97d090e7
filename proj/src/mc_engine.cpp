#include "shiftlab/mc_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "shiftlab/errors.hpp"
#include "shiftlab/parallel.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

namespace {

struct PathOutcome {
  double x_T = 0.0;
  double u = 0.0;
  bool bankrupt = false;
  long policy_clamped = 0;
  long factor_clamped = 0;
};

// Shared per-run constants.
struct StepContext {
  const MarketModel& model;
  const PolicyField& policy;
  const UtilitySpec& utility;
  const SimConfig& cfg;
  double dt;
  double sqrt_dt;
  double rho;
  double rho_bar;

  StepContext(const MarketModel& m, const PolicyField& p, const UtilitySpec& u,
              const SimConfig& c)
      : model(m), policy(p), utility(u), cfg(c), dt((c.T - c.t0) / c.steps),
        sqrt_dt(std::sqrt(dt)), rho(m.rho()), rho_bar(std::sqrt(1.0 - m.rho() * m.rho())) {}
};

// One Euler-Maruyama path. `sign` flips every normal for the antithetic
// partner.
struct PathState {
  StreamRng rng;
  double sign;
  double x;
  double y;
  bool alive = true;
  PathOutcome out;

  PathState(const SimConfig& cfg, std::uint64_t stream, double sgn)
      : rng(cfg.seed, stream), sign(sgn), x(cfg.x0), y(cfg.y0) {}

  // Advances from step n to n + 1. `row` sees the state before the step.
  template <class RowFn>
  void advance(const StepContext& ctx, int n, RowFn&& row) {
    double t = ctx.cfg.t0 + n * ctx.dt;
    bool factor_clamped = false;
    Coefficients c = ctx.model.at_clamped(y, factor_clamped);
    out.factor_clamped += factor_clamped;
    PolicySample ps = ctx.policy.sample(t, x, y);
    out.policy_clamped += ps.clamped;
    row(n, t, x, y, ps.pi);
    auto [z1, z2] = rng.next_normal_pair();
    double dw1 = sign * z1 * ctx.sqrt_dt;
    double dw2 = sign * z2 * ctx.sqrt_dt;
    x += (c.r * x + (c.mu - c.r) * ps.pi) * ctx.dt + ps.pi * c.sigma * dw1;
    y += c.b * ctx.dt + ctx.rho * dw1 + ctx.rho_bar * dw2;
    if (!ctx.utility.in_domain(x)) {
      out.bankrupt = true;
      x = ctx.cfg.absorb_x;
      alive = false;
    }
  }

  PathOutcome finish(const StepContext& ctx) {
    out.x_T = x;
    out.u = ctx.utility.value(x);
    return out;
  }
};

struct NoRows {
  void operator()(int, double, double, double, double) const noexcept {}
};

std::uint64_t stream_of(const SimConfig& cfg, long p) {
  return cfg.antithetic ? static_cast<std::uint64_t>(p / 2) : static_cast<std::uint64_t>(p);
}

double sign_of(const SimConfig& cfg, long p) { return cfg.antithetic && (p % 2 == 1) ? -1.0 : 1.0; }

// Paths are advanced in blocks, step by step, so a grid policy is read one
// time slice at a time. Each path's arithmetic is the same as alone.
constexpr int kBlock = 64;

double sample_variance(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
  return pairwise_sum(sq) / static_cast<double>(v.size() - 1);
}

}  // namespace

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double a : v) s += a;
    return s;
  }
  std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

void SimConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("sim: " + m); };
  if (paths < 100) fail("paths must be >= 100");
  if (steps < 16) fail("steps must be >= 16");
  if (antithetic && paths % 2 != 0) fail("antithetic sampling needs an even path count");
  if (!(T >= t0)) fail("T must not precede t0");
  if (!std::isfinite(x0) || !std::isfinite(y0)) fail("initial state must be finite");
  if (threads < 1) fail("threads must be >= 1");
}

SimSamples simulate_samples(const MarketModel& model, const PolicyField& policy,
                            const UtilitySpec& utility, const SimConfig& config) {
  config.validate();
  if (!utility.in_domain(config.x0)) throw DomainError("initial wealth outside utility domain");
  if (!utility.in_domain(config.absorb_x))
    throw PreconditionError("absorbing level outside utility domain");

  const long n = config.paths;
  const StepContext ctx(model, policy, utility, config);
  std::vector<PathOutcome> outcomes(static_cast<std::size_t>(n));
  const int blocks = static_cast<int>((n + kBlock - 1) / kBlock);
  parallel_for(blocks, config.threads, [&](int b_begin, int b_end) {
    std::vector<PathState> paths;
    paths.reserve(kBlock);
    for (int b = b_begin; b < b_end; ++b) {
      long first = static_cast<long>(b) * kBlock;
      long last = std::min(n, first + kBlock);
      paths.clear();
      for (long p = first; p < last; ++p)
        paths.emplace_back(config, stream_of(config, p), sign_of(config, p));
      for (int step = 0; step < config.steps; ++step)
        for (auto& path : paths)
          if (path.alive) path.advance(ctx, step, NoRows{});
      for (long p = first; p < last; ++p) outcomes[p] = paths[p - first].finish(ctx);
    }
  });

  SimSamples res;
  SimReport& rep = res.report;
  rep.label = policy.label();
  rep.paths = n;
  rep.steps = config.steps;
  std::vector<double> xs(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    xs[i] = outcomes[i].x_T;
    rep.bankrupt += outcomes[i].bankrupt;
    rep.policy_clamped += outcomes[i].policy_clamped;
    rep.factor_clamped += outcomes[i].factor_clamped;
  }
  if (config.antithetic) {
    res.utility.resize(outcomes.size() / 2);
    for (std::size_t q = 0; q < res.utility.size(); ++q)
      res.utility[q] = 0.5 * (outcomes[2 * q].u + outcomes[2 * q + 1].u);
  } else {
    res.utility.resize(outcomes.size());
    for (std::size_t i = 0; i < outcomes.size(); ++i) res.utility[i] = outcomes[i].u;
  }
  rep.samples = static_cast<long>(res.utility.size());
  double m = static_cast<double>(rep.samples);
  rep.estimate = pairwise_sum(res.utility) / m;
  rep.std_error = std::sqrt(sample_variance(res.utility, rep.estimate) / m);
  rep.mean_x = pairwise_sum(xs) / static_cast<double>(n);
  rep.var_x = sample_variance(xs, rep.mean_x);
  return res;
}

SimReport simulate_paths(const MarketModel& model, const PolicyField& policy,
                         const UtilitySpec& utility, const SimConfig& config) {
  return simulate_samples(model, policy, utility, config).report;
}

void dump_paths(const MarketModel& model, const PolicyField& policy, const UtilitySpec& utility,
                const SimConfig& config, std::ostream& out) {
  config.validate();
  if (config.paths * static_cast<long>(config.steps) > kMaxDumpRows) {
    std::ostringstream os;
    os << "path dump of " << config.paths << " x " << config.steps << " rows exceeds the "
       << kMaxDumpRows << " row limit";
    throw PreconditionError(os.str());
  }
  out << "path,step,t,X,Y,pi\n";
  out.precision(17);
  const StepContext ctx(model, policy, utility, config);
  for (long p = 0; p < config.paths; ++p) {
    auto row = [&](int step, double t, double x, double y, double pi) {
      out << p << ',' << step << ',' << t << ',' << x << ',' << y << ',' << pi << '\n';
    };
    PathState path(config, stream_of(config, p), sign_of(config, p));
    for (int step = 0; step < config.steps && path.alive; ++step) path.advance(ctx, step, row);
    if (path.alive) row(config.steps, config.T, path.x, path.y, policy(config.T, path.x, path.y));
  }
}

ComparisonReport compare_policies(const MarketModel& model, const UtilitySpec& utility,
                                  std::span<const PolicyField> policies, const SimConfig& config) {
  if (policies.size() < 2) throw PreconditionError("compare_policies needs at least two policies");
  std::vector<SimSamples> runs;
  runs.reserve(policies.size());
  for (const auto& p : policies) runs.push_back(simulate_samples(model, p, utility, config));

  ComparisonReport rep;
  for (const auto& r : runs) rep.reports.push_back(r.report);
  for (std::size_t a = 0; a < runs.size(); ++a) {
    for (std::size_t b = a + 1; b < runs.size(); ++b) {
      const auto& ua = runs[a].utility;
      const auto& ub = runs[b].utility;
      std::vector<double> diff(ua.size());
      for (std::size_t i = 0; i < ua.size(); ++i) diff[i] = ua[i] - ub[i];
      double m = static_cast<double>(diff.size());
      double mean = pairwise_sum(diff) / m;
      PairDifference pd;
      pd.first = static_cast<int>(a);
      pd.second = static_cast<int>(b);
      pd.difference = mean;
      pd.std_error = std::sqrt(sample_variance(diff, mean) / m);
      rep.differences.push_back(pd);
    }
  }
  rep.ranking.resize(runs.size());
  std::iota(rep.ranking.begin(), rep.ranking.end(), 0);
  std::stable_sort(rep.ranking.begin(), rep.ranking.end(), [&](int a, int b) {
    return rep.reports[a].estimate > rep.reports[b].estimate;
  });
  return rep;
}

std::vector<ValueCheckRow> value_check(const MarketModel& model, const UtilitySpec& utility,
                                       const HjbSolution& solution, const SimConfig& config,
                                       std::span<const ValuePoint> points) {
  const GridSpec& g = solution.value.grid();
  PolicyField policy = extract_policy(solution);
  std::vector<ValueCheckRow> rows;
  for (const auto& pt : points) {
    if (!g.contains(pt.t, pt.x, pt.y))
      throw OutOfBoundsError("value_check point outside the solution grid");
    SimConfig cfg = config;
    cfg.t0 = pt.t;
    cfg.T = g.T;
    cfg.x0 = pt.x;
    cfg.y0 = pt.y;
    SimReport sim = simulate_paths(model, policy, utility, cfg);
    ValueCheckRow row;
    row.point = pt;
    row.v_fd = surface_interpolate(solution.value, pt.t, pt.x, pt.y);
    row.v_mc = sim.estimate;
    row.std_error = sim.std_error;
    double gap = row.v_fd - row.v_mc;
    if (row.std_error > 0.0)
      row.z = gap / row.std_error;
    else
      row.z = gap == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), gap);
    double x_margin = 0.1 * (g.x_max - g.x_min);
    double y_margin = 0.1 * (g.y_max - g.y_min);
    row.boundary_affected = pt.x < g.x_min + x_margin || pt.x > g.x_max - x_margin ||
                            pt.y < g.y_min + y_margin || pt.y > g.y_max - y_margin;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace shiftlab
