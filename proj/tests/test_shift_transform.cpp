#include <cmath>
#include <random>

#include "doctest.h"
#include "shiftlab/errors.hpp"
#include "shiftlab/shift_transform.hpp"

using namespace shiftlab;

namespace {

const double e = std::exp(1.0);

double fn_xy(double, double x, double y) { return x * y; }
double fn_x2(double, double x, double) { return x * x; }
double fn_exp_xy(double, double x, double y) { return std::exp(x * y); }
double fn_x_plus_y2(double, double x, double y) { return x + y * y; }

BetaDerivatives rec(double vb, double vbb, ScalingScope s) { return {vb, vbb, s}; }

}  // namespace

TEST_CASE("beta derivatives by central differences") {
  auto d = beta_derivative_fd(fn_xy, {1.0, 1.0, 2.0, 3.0}, ScalingScope::X);
  CHECK(d.v_beta == doctest::Approx(6.0).epsilon(1e-9));
  CHECK(std::abs(d.v_betabeta) < 1e-5);
  CHECK(d.scope == ScalingScope::X);

  d = beta_derivative_fd(fn_x2, {1.0, 1.0, 2.0, 0.3}, ScalingScope::X);
  CHECK(d.v_beta == doctest::Approx(8.0).epsilon(1e-9));
  CHECK(d.v_betabeta == doctest::Approx(8.0).epsilon(1e-6));

  // d/dbeta exp(beta x y) = x y exp(beta x y); second derivative (x y)^2 exp(beta x y).
  d = beta_derivative_fd(fn_exp_xy, {1.0, 1.0, 1.0, 1.0}, ScalingScope::Y);
  CHECK(d.v_beta == doctest::Approx(e).epsilon(1e-8));
  CHECK(d.v_betabeta == doctest::Approx(e).epsilon(1e-6));

  SUBCASE("time dilation") {
    auto t2 = [](double t, double, double) { return t * t; };
    auto dt = beta_derivative_fd(t2, {1.0, 3.0, 1.0, 1.0}, ScalingScope::T);
    CHECK(dt.v_beta == doctest::Approx(18.0).epsilon(1e-9));
  }
  SUBCASE("contracts") {
    CHECK_THROWS_AS(beta_derivative_fd(fn_xy, {1.0, 1.0, 1.0, 1.0}, ScalingScope::X, 0.0),
                    PreconditionError);
    CHECK_THROWS_AS(beta_derivative_fd(fn_xy, {1.0, 1.0, 1.0, 1.0}, ScalingScope::X, 0.2),
                    PreconditionError);
    auto bad = [](double, double x, double) { return std::log(x - 1.0); };
    CHECK_THROWS_AS(beta_derivative_fd(bad, {1.0, 1.0, 1.0, 1.0}, ScalingScope::X),
                    EvaluationError);
  }
}

TEST_CASE("derivative conversions") {
  ShiftPoint p{1.0, 1.0, 2.0, 3.0};
  CHECK(vx_from_beta(rec(8, 8, ScalingScope::X), p) == 4.0);
  CHECK(vx_from_beta(rec(6, 0, ScalingScope::X), p) == 3.0);
  CHECK_THROWS_AS(vx_from_beta(rec(6, 0, ScalingScope::Y), p), ScopeMismatchError);

  CHECK(vxx_from_beta(rec(8, 8, ScalingScope::X), p) == 2.0);
  CHECK(vxx_from_beta(rec(6, 0, ScalingScope::X), {1.3, 0.7, 2.1, 0.4}) == 0.0);
  CHECK_THROWS_AS(vxx_from_beta(rec(8, 8, ScalingScope::T), p), ScopeMismatchError);

  ShiftPoint one{1.0, 1.0, 1.0, 1.0};
  CHECK(vy_from_beta(rec(e, e, ScalingScope::Y), one) == doctest::Approx(e));
  CHECK(vy_from_beta(rec(0, 0, ScalingScope::Y), p) == 0.0);
  CHECK_THROWS_AS(vy_from_beta(rec(1, 0, ScalingScope::Y), {1.0, 1.0, 1.0, 0.0}),
                  PreconditionError);

  CHECK(vyy_from_beta(rec(e, e, ScalingScope::Y), one) == doctest::Approx(e));
  CHECK(vyy_from_beta(rec(1, 0, ScalingScope::Y), p) == 0.0);
  CHECK_THROWS_AS(vyy_from_beta(rec(e, e, ScalingScope::X), one), ScopeMismatchError);

  CHECK(vbetay_from_vxy(1.0, {1.0, 1.0, 2.0, 3.0}) == 2.0);
  CHECK(vbetay_from_vxy(0.0, {0.7, 1.0, 2.0, 3.0}) == 0.0);
  // V_xy of exp(xy) at (1, 1) is (1 + xy) e^{xy} = 2e.
  CHECK(vbetay_from_vxy(2 * e, one) == doctest::Approx(2 * e));
  CHECK_THROWS_AS(vbetay_from_vxy(1.0, {0.0, 1.0, 2.0, 3.0}), PreconditionError);

  CHECK(vxy_from_beta(rec(e, e, ScalingScope::Joint), one) == doctest::Approx(2 * e));
  CHECK(vxy_from_beta(rec(6, 0, ScalingScope::Joint), p) == doctest::Approx(1.0));
  CHECK_THROWS_AS(vxy_from_beta(rec(6, 0, ScalingScope::X), p), ScopeMismatchError);
  CHECK_THROWS_AS(vxy_from_beta(rec(6, 0, ScalingScope::Y), p), ScopeMismatchError);

  CHECK(vt_from_beta(rec(18, 0, ScalingScope::T), {1.0, 3.0, 1.0, 1.0}) == 6.0);
  CHECK(vt_from_beta(rec(0, 0, ScalingScope::T), p) == 0.0);
  CHECK_THROWS_AS(vt_from_beta(rec(1, 0, ScalingScope::T), {1.0, 0.0, 1.0, 1.0}),
                  PreconditionError);
}

TEST_CASE("the cross-derivative formula on x + y^2") {
  ShiftPoint one{1.0, 1.0, 1.0, 1.0};
  auto dy = beta_derivative_fd(fn_x_plus_y2, one, ScalingScope::Joint);
  auto dx = beta_derivative_fd(fn_x_plus_y2, one, ScalingScope::X);
  // Analytic V_xy = 0; the formula returns 2 + 2 from the y-dilation.
  CHECK(std::abs(vxy_from_beta(dy, one)) > 0.1);
  CHECK(std::abs(dx.v_beta - dy.v_beta) > 0.5);
}

TEST_CASE("check_identity examples") {
  auto r = check_identity(fn_exp_xy, {1.0, 1.0, 1.3, 0.7}, IdentityId::EQ1, 1e-6);
  CHECK(r.pass);
  CHECK(r.scope == ScalingScope::X);
  CHECK(r.direct_side == doctest::Approx(0.7 * std::exp(0.91)).epsilon(1e-7));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.4, 1.6);
  for (int n = 0; n < 20; ++n) {
    ShiftPoint p{1.0, 1.0, u(rng), u(rng)};
    auto r9 = check_identity(fn_exp_xy, p, IdentityId::EQ9, 1e-5);
    CHECK(r9.pass);
    CHECK(r9.scope == ScalingScope::Joint);
    CHECK(r9.residual < 1e-5);
  }

  auto w = check_identity(fn_x_plus_y2, {1.0, 1.0, 1.0, 1.0}, IdentityId::EQ9, 1e-6);
  CHECK_FALSE(w.pass);
  CHECK(w.residual > 1e-2);

  CHECK_THROWS_AS(check_identity(fn_exp_xy, {1.0, 1.0, 1.0, 1.0}, IdentityId::EQ1, 0.0),
                  PreconditionError);
}

TEST_CASE("both orientations of the second wealth derivative are reported") {
  // V = x^2 at x = 2: only beta^2 V_bb / x^2 = 2 matches.
  auto r = check_identity(fn_x2, {1.0, 1.0, 2.0, 1.0}, IdentityId::EQ2);
  CHECK(r.pass);
  CHECK(r.transform_side == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(r.alt_residual > 1.0);
  CHECK(std::isnan(check_identity(fn_x2, {1.0, 1.0, 2.0, 1.0}, IdentityId::EQ4).alt_residual));
}

TEST_CASE("scope-local identities hold on smooth functions") {
  std::vector<TestFunction> fns = {
      fn_x2, fn_xy, fn_exp_xy, fn_x_plus_y2,
      [](double, double x, double y) { return std::sin(x) * std::cos(y); },
      [](double t, double x, double) { return std::exp(-t) * x * x; }};
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.6, 1.4);
  for (const auto& fn : fns) {
    for (int n = 0; n < 10; ++n) {
      ShiftPoint p{1.0, u(rng), u(rng), u(rng)};
      for (IdentityId id : {IdentityId::EQ1, IdentityId::EQ2, IdentityId::EQ3, IdentityId::EQ4,
                            IdentityId::EQ5, IdentityId::EQ6, IdentityId::VT}) {
        auto r = check_identity(fn, p, id);
        CHECK_MESSAGE(r.residual < 1e-6, to_string(id) << " residual " << r.residual);
      }
    }
  }
}

TEST_CASE("identities away from beta = 1") {
  ShiftPoint p{1.3, 0.9, 0.8, 1.1};
  for (IdentityId id : {IdentityId::EQ1, IdentityId::EQ2, IdentityId::EQ3, IdentityId::EQ4,
                        IdentityId::EQ5, IdentityId::VT})
    CHECK(check_identity(fn_exp_xy, p, id).pass);
  // The cross formula gives beta (1 + xy) e^{beta xy} against the true
  // beta (1 + beta xy) e^{beta xy}, so it is exact only at beta = 1.
  auto r9 = check_identity(fn_exp_xy, p, IdentityId::EQ9, 1e-5);
  double bxy = p.beta * p.x * p.y;
  CHECK(r9.transform_side == doctest::Approx(p.beta * (1 + p.x * p.y) * std::exp(bxy)).epsilon(1e-6));
  CHECK(r9.direct_side == doctest::Approx(p.beta * (1 + bxy) * std::exp(bxy)).epsilon(1e-6));
  CHECK_FALSE(r9.pass);
}

TEST_CASE("second-order convergence in the step") {
  auto f = [](double, double x, double y) { return std::sin(x) * std::cos(y); };
  for (double x : {0.7, 1.1, 1.3}) {
    double ratio = convergence_ratio(f, {1.0, 1.0, x, 0.8}, IdentityId::EQ1, 1e-2);
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.5);
  }
  double r = convergence_ratio(fn_exp_xy, {1.0, 1.0, 1.2, 0.9}, IdentityId::EQ1, 1e-2);
  CHECK(r >= 3.5);
  CHECK(r <= 4.5);
}

TEST_CASE("identity names round-trip") {
  for (IdentityId id : all_identities()) CHECK(identity_from_string(to_string(id)) == id);
  CHECK_THROWS_AS(identity_from_string("EQ7"), ValidationError);
  for (const auto& name : named_function_names()) CHECK(named_function(name).name == name);
  CHECK(named_function("exp_xy").product_form);
  CHECK_FALSE(named_function("x_plus_y2").product_form);
  CHECK_THROWS_AS(named_function("nope"), ValidationError);
}
