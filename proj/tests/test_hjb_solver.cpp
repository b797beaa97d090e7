#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "shiftlab/errors.hpp"
#include "shiftlab/hjb_solver.hpp"

using namespace shiftlab;

namespace {

const Coefficients kMarket{0.03, 0.10, 0.25, 0.0};

GridSpec merton_grid(int nt, int nx, int ny) {
  GridSpec g;
  g.t0 = 0.5;
  g.T = 1.5;
  g.nt = nt;
  g.x_min = 0.2;
  g.x_max = 2.2;
  g.nx = nx;
  auto [lo, hi] = factor_domain(0.0, g.T - g.t0);
  g.y_min = lo;
  g.y_max = hi;
  g.ny = ny;
  return g;
}

// Merton value e^{delta (T - t)} x^gamma / gamma.
double merton_value(double t, double x, double T, double gamma) {
  double ex = kMarket.mu - kMarket.r;
  double s2 = kMarket.sigma * kMarket.sigma;
  double delta = gamma * (kMarket.r + ex * ex / (2 * s2 * (1 - gamma)));
  return std::exp(delta * (T - t)) * std::pow(x, gamma) / gamma;
}

}  // namespace

TEST_CASE("hamiltonian term and its maximiser") {
  HamiltonianCoeffs unit{0.07, 1.0, 0.0};
  CHECK(hamiltonian_term(0.0, 1.0, -1.0, 0.3, unit) == 0.0);
  CHECK(hamiltonian_term(0.07, 1.0, -1.0, 0.0, unit) == doctest::Approx(0.00245).epsilon(1e-14));
  auto r = argmax_pi_closed(1.0, -1.0, 0.0, unit, {-10, 10});
  CHECK(r.pi == doctest::Approx(0.07));
  CHECK_FALSE(r.clipped);
  CHECK(argmax_pi_brute(1.0, -1.0, 0.0, unit, {-10, 10}) == doctest::Approx(0.07).epsilon(1e-4));

  HamiltonianCoeffs hc{0.07, 0.25, 0.0};
  CHECK(argmax_pi_closed(1.0, -1.0, 0.0, hc, {-10, 10}).pi == doctest::Approx(1.12).epsilon(1e-14));
  CHECK(std::abs(argmax_pi_brute(1.0, -1.0, 0.0, hc, {-10, 10}) - 1.12) <= 1e-4);
}

TEST_CASE("degenerate curvature resolves to a bound") {
  HamiltonianCoeffs hc{0.07, 0.25, 0.0};
  SUBCASE("linear with positive slope") {
    auto r = argmax_pi_closed(1.0, 0.0, 0.0, hc, {-5, 5});
    CHECK(r.pi == 5.0);
    CHECK(r.clipped);
  }
  SUBCASE("convex") {
    auto r = argmax_pi_closed(-1.0, 2.0, 0.0, hc, {-5, 4});
    CHECK(r.pi == -5.0);
    CHECK(r.clipped);
  }
  SUBCASE("flat") {
    auto r = argmax_pi_closed(0.0, 0.0, 0.0, hc, {-5, 5});
    CHECK(r.pi == 0.0);
    CHECK(r.clipped);
  }
  SUBCASE("vertex outside the bounds") {
    auto r = argmax_pi_closed(1.0, -1.0, 0.0, hc, {-1, 1});
    CHECK(r.pi == 1.0);
    CHECK(r.clipped);
  }
}

TEST_CASE("closed-form argmax agrees with grid search") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double width = 1e-4;
  for (int n = 0; n < 1000; ++n) {
    HamiltonianCoeffs hc{0.2 * u(rng), 0.1 + 0.4 * std::abs(u(rng)), 0.95 * u(rng)};
    double vx = u(rng), vxx = -0.05 - std::abs(u(rng)), vxy = u(rng);
    PiBounds b{-3.0, 3.0};
    double closed = argmax_pi_closed(vx, vxx, vxy, hc, b).pi;
    double brute = argmax_pi_brute(vx, vxx, vxy, hc, b, width);
    CHECK(std::abs(closed - brute) <= width * (1 + 1e-9));
  }
}

TEST_CASE("constant slices are steady") {
  GridSpec g = merton_grid(10, 9, 7);
  MarketModel m = MarketModel::constant(kMarket, 0.3);
  SolverConfig cfg;
  Slice v(static_cast<std::size_t>(g.nx) * g.ny, 2.5);
  PolicySlice pol = optimal_policy(v, cfg, m, g);
  for (double p : pol.pi) CHECK(p == 0.0);
  // Every interior node is degenerate; edges extrapolate the zero policy.
  CHECK(pol.clipped == (g.nx - 2) * g.ny);
  for (Scheme s : {Scheme::Explicit, Scheme::ImplicitX}) {
    cfg.scheme = s;
    StepResult r = step_backward(v, pol.pi, g.T, cfg, m, g);
    for (double x : r.value) CHECK(x == doctest::Approx(2.5).epsilon(1e-14));
  }
}

TEST_CASE("step contracts") {
  GridSpec g = merton_grid(10, 9, 7);
  MarketModel m = MarketModel::constant(kMarket, 0.0);
  SolverConfig cfg;
  Slice v(static_cast<std::size_t>(g.nx) * g.ny, 1.0);
  CHECK_THROWS_AS(step_backward(Slice(3, 1.0), Slice(3, 0.0), g.T, cfg, m, g), PreconditionError);
  v[4] = NAN;
  CHECK_THROWS_AS(step_backward(v, Slice(v.size(), 0.0), g.T, cfg, m, g), PreconditionError);
}

TEST_CASE("explicit scheme rejects an unstable step") {
  GridSpec g = merton_grid(4, 41, 41);
  MarketModel m = MarketModel::constant(kMarket, 0.0);
  SolverConfig cfg;
  cfg.scheme = Scheme::Explicit;
  try {
    solve(m, UtilitySpec::power(0.5), g, cfg);
    FAIL("expected StabilityError");
  } catch (const StabilityError& e) {
    CHECK(e.cfl() > 1.0);
    CHECK(std::string(e.what()).find("CFL") != std::string::npos);
  }
}

TEST_CASE("one step from the terminal slice follows the Merton time factor") {
  GridSpec g = merton_grid(400, 161, 5);
  MarketModel m = MarketModel::constant(kMarket, 0.0);
  SolverConfig cfg;
  const double gamma = 0.5;
  Slice v(static_cast<std::size_t>(g.nx) * g.ny);
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.ny; ++j) v[i * g.ny + j] = merton_value(g.T, g.x_at(i), g.T, gamma);
  PolicySlice pol = optimal_policy(v, cfg, m, g);
  StepResult r = step_backward(v, pol.pi, g.T, cfg, m, g);
  double t = g.T - g.dt();
  for (int i = g.nx / 5; i < 4 * g.nx / 5; ++i) {
    double exact = merton_value(t, g.x_at(i), g.T, gamma);
    CHECK(r.value[i * g.ny + 2] == doctest::Approx(exact).epsilon(2e-5));
  }
}

TEST_CASE("Merton power on a coarse grid") {
  GridSpec g = merton_grid(100, 41, 9);
  MarketModel m = MarketModel::constant(kMarket, 0.0);
  SolverConfig cfg;
  cfg.spot_check_fraction = 0.02;
  HjbSolution sol = solve(m, UtilitySpec::power(0.5), g, cfg);

  SUBCASE("terminal slice is exact") {
    for (int i = 0; i < g.nx; ++i)
      for (int j = 0; j < g.ny; ++j)
        CHECK(sol.value.field.at(g.nt, i, j) == UtilitySpec::power(0.5).value(g.x_at(i)));
  }
  SUBCASE("policy and value near the closed form") {
    double target = 0.07 / (0.0625 * 0.5);
    for (int k : {0, g.nt / 2})
      for (int i = g.nx / 5; i < 4 * g.nx / 5; ++i) {
        double x = g.x_at(i);
        CHECK(sol.policy.at(k, i, g.ny / 2) / x == doctest::Approx(target).epsilon(0.03));
        CHECK(sol.value.field.at(k, i, g.ny / 2) ==
              doctest::Approx(merton_value(g.t_at(k), x, g.T, 0.5)).epsilon(0.005));
      }
  }
  SUBCASE("diagnostics") {
    CHECK(sol.diagnostics.steps.size() == static_cast<std::size_t>(g.nt));
    CHECK(sol.diagnostics.monotonicity_violations == 0);
    CHECK(sol.diagnostics.concavity_violations == 0);
    CHECK(sol.diagnostics.spot_checks > 0);
    CHECK(sol.diagnostics.spot_check_failures == 0);
    CHECK(sol.diagnostics.max_cfl() <= 1.0);
  }
}

TEST_CASE("no excess return means no investment") {
  GridSpec g = merton_grid(60, 161, 9);
  MarketModel m = MarketModel::constant({0.03, 0.03, 0.25, 0.0}, 0.0);
  UtilitySpec u = UtilitySpec::log();
  HjbSolution sol = solve(m, u, g, SolverConfig{});
  for (double p : sol.policy.values()) CHECK(p == 0.0);
  // V(t, x) = u(x e^{r (T - t)}) in the interior, up to the first-order
  // upwind error of the wealth drift.
  for (int i = 20; i < g.nx - 20; ++i) {
    double x = g.x_at(i);
    CHECK(std::abs(sol.value.field.at(0, i, 4) - u.value(x * std::exp(0.03))) < 5e-4);
  }
}

TEST_CASE("solver preconditions") {
  GridSpec g = merton_grid(10, 9, 7);
  g.x_min = -1.0;
  MarketModel m = MarketModel::constant(kMarket, 0.0);
  CHECK_THROWS_AS(solve(m, UtilitySpec::power(0.5), g, SolverConfig{}), ValidationError);
  g.x_min = 0.2;
  g.nx = 3;
  CHECK_THROWS_AS(solve(m, UtilitySpec::power(0.5), g, SolverConfig{}), ValidationError);
}

TEST_CASE("extracted policy interpolates the solution") {
  GridSpec g = merton_grid(20, 11, 7);
  MarketModel m = MarketModel::constant(kMarket, 0.0);
  HjbSolution sol = solve(m, UtilitySpec::exponential(1.0), g, SolverConfig{});
  // Replace the policy with one linear in x so interpolation is exact.
  for (int k = 0; k <= g.nt; ++k)
    for (int i = 0; i < g.nx; ++i)
      for (int j = 0; j < g.ny; ++j) sol.policy.at(k, i, j) = 3.0 * g.x_at(i) - 1.0;
  PolicyField p = extract_policy(sol);
  CHECK(p.label() == "fd");
  CHECK(p(g.t_at(3), g.x_at(4), g.y_at(2)) == sol.policy.at(3, 4, 2));
  CHECK(p(0.77, 1.234, 0.1) == doctest::Approx(3.0 * 1.234 - 1.0));
  PolicySample s = p.sample(0.77, 9.0, 0.1);
  CHECK(s.clamped);
  CHECK(s.pi == doctest::Approx(3.0 * g.x_max - 1.0));
}
