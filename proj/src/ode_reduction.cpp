#include "shiftlab/ode_reduction.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shiftlab/errors.hpp"
#include "shiftlab/quadrature.hpp"

namespace shiftlab {

namespace {

void require_reduced(const ReducedParams& p, double beta) {
  if (!(beta > 0.0)) throw PreconditionError("beta must be positive");
  if (!(p.t > 0.0)) throw PreconditionError("t must be positive");
  if (p.x == 0.0) throw PreconditionError("x must be nonzero");
  if (p.y == 0.0) throw PreconditionError("y must be nonzero");
}

struct PiInputs {
  double excess;  // mu - r
  double sigma;
  double rho;
};

PiInputs pi_inputs(const MarketModel& model, double x, double y) {
  if (!(x > 0.0)) throw PreconditionError("x must be positive");
  if (y == 0.0) throw PreconditionError("y must be nonzero");
  Coefficients c = model.at(y);
  if (!(c.sigma > 0.0)) throw PreconditionError("sigma must be positive");
  return {c.mu - c.r, c.sigma, model.rho()};
}

void require_curvature(double v_betabeta, double floor) {
  if (!(std::abs(v_betabeta) >= floor)) {
    std::ostringstream os;
    os << "degenerate curvature: |V_betabeta| = " << std::abs(v_betabeta) << " < " << floor;
    throw DegenerateCurvatureError(os.str());
  }
}

}  // namespace

ReducedParams reduced_params(const MarketModel& model, double t, double x, double y, double pi) {
  return {t, x, y, pi, model.at(y), model.rho()};
}

double reduced_lhs(double beta, double v_beta, double v_betabeta, const ReducedParams& p) {
  require_reduced(p, beta);
  const auto& c = p.coeffs;
  double x = p.x;
  double y = p.y;
  double pi = p.pi;
  double s = 0.0;
  s += beta * v_beta / p.t;
  s += c.r * beta * v_beta;
  s += (c.mu - c.r) * pi * beta * v_beta / x;
  s += 0.5 * c.sigma * c.sigma * pi * pi * x * x * v_betabeta / (beta * beta);
  s += c.b * beta * v_beta / y;
  s += 0.5 * beta * beta * v_betabeta / (y * y);
  s += p.rho * c.sigma * pi * beta * (v_betabeta + v_beta) / (x * y);
  return s;
}

double ReducedCoefficients::A(double beta) const {
  const auto& c = p_.coeffs;
  double x = p_.x;
  double y = p_.y;
  return 0.5 * c.sigma * c.sigma * p_.pi * p_.pi * x * x / (beta * beta) +
         0.5 * beta * beta / (y * y) + p_.rho * c.sigma * p_.pi * beta / (x * y);
}

double ReducedCoefficients::B(double beta) const {
  const auto& c = p_.coeffs;
  double x = p_.x;
  double y = p_.y;
  return beta * (1.0 / p_.t + c.r + (c.mu - c.r) * p_.pi / x + c.b / y) +
         p_.rho * c.sigma * p_.pi * beta / (x * y);
}

ReducedCoefficients collect_ode(const ReducedParams& p) {
  require_reduced(p, 1.0);
  return ReducedCoefficients(p);
}

double OdeSolution::max_residual() const {
  double m = 0.0;
  for (double r : residual) m = std::max(m, r);
  return m;
}

OdeSolution solve_vbeta(const ReducedCoefficients& coeffs, double beta_lo, double beta_hi,
                        double c, const OdeOptions& opts) {
  if (!(beta_lo > 0.0) || !(beta_lo <= 1.0) || !(beta_hi >= 1.0) || !(beta_hi > beta_lo))
    throw PreconditionError("beta range must be positive and contain 1");
  if (c == 0.0 || !std::isfinite(c)) throw PreconditionError("normalization c must be nonzero");
  if (opts.nodes < 2) throw PreconditionError("need at least two beta nodes");

  // Sign scan of A over the range.
  int samples = std::max(opts.sign_samples, opts.nodes);
  double step = (beta_hi - beta_lo) / samples;
  double prev_beta = beta_lo;
  double prev_a = coeffs.A(beta_lo);
  if (prev_a == 0.0 || !std::isfinite(prev_a))
    throw SingularCoefficientError("A(beta) vanishes at the range start", beta_lo, beta_lo);
  for (int k = 1; k <= samples; ++k) {
    double b = k == samples ? beta_hi : beta_lo + k * step;
    double a = coeffs.A(b);
    if (a == 0.0 || !std::isfinite(a) || (a > 0.0) != (prev_a > 0.0)) {
      std::ostringstream os;
      os << "A(beta) changes sign in [" << prev_beta << ", " << b << "]";
      throw SingularCoefficientError(os.str(), prev_beta, b);
    }
    prev_beta = b;
    prev_a = a;
  }

  auto ratio = [&](double s) { return coeffs.B(s) / coeffs.A(s); };

  OdeSolution sol;
  sol.c = c;
  sol.beta.resize(opts.nodes);
  sol.w.resize(opts.nodes);
  sol.residual.resize(opts.nodes);
  double node_step = (beta_hi - beta_lo) / (opts.nodes - 1);
  for (int i = 0; i < opts.nodes; ++i) {
    double b = i == opts.nodes - 1 ? beta_hi : beta_lo + i * node_step;
    sol.beta[i] = b;
    sol.w[i] = c * std::exp(-adaptive_simpson(ratio, 1.0, b, opts.quad_tol));
  }

  // Residual from a five-point derivative of W. The neighbours come from
  // short integrals starting at the node so quadrature noise stays far below
  // the stencil's truncation error.
  for (int i = 0; i < opts.nodes; ++i) {
    double b = sol.beta[i];
    double h = 1e-3 * std::min(1.0, b);
    double local_tol = 1e-13 * h * (std::abs(ratio(b)) + 1e-300);
    auto w_at = [&](double offset) {
      return sol.w[i] * std::exp(-adaptive_simpson(ratio, b, b + offset, local_tol, 30));
    };
    double dw = (w_at(-2 * h) - 8 * w_at(-h) + 8 * w_at(h) - w_at(2 * h)) / (12 * h);
    double aw = coeffs.A(b) * dw;
    double bw = coeffs.B(b) * sol.w[i];
    sol.residual[i] = std::abs(aw + bw) / (std::abs(aw) + std::abs(bw) + 1e-300);
  }
  return sol;
}

PaperPiTerms optimal_pi_paper_terms(double v_beta, double v_betabeta, double /*t*/, double x,
                                    double y, const MarketModel& model, double curvature_floor) {
  PiInputs in = pi_inputs(model, x, y);
  require_curvature(v_betabeta, curvature_floor);
  double x3 = x * x * x;
  PaperPiTerms terms;
  terms.excess_return_term = -in.excess * v_beta / (in.sigma * in.sigma * x3 * v_betabeta);
  terms.hedging_term = -in.rho * in.sigma * (v_betabeta + v_beta) / (in.sigma * x3 * y * v_betabeta);
  return terms;
}

double optimal_pi_paper(double v_beta, double v_betabeta, double t, double x, double y,
                        const MarketModel& model, double curvature_floor) {
  auto terms = optimal_pi_paper_terms(v_beta, v_betabeta, t, x, y, model, curvature_floor);
  return terms.excess_return_term + terms.hedging_term;
}

double foc_residual(double pi, double v_beta, double v_betabeta, double /*t*/, double x, double y,
                    const MarketModel& model) {
  PiInputs in = pi_inputs(model, x, y);
  return in.excess * v_beta / x + in.sigma * in.sigma * pi * x * x * v_betabeta +
         in.rho * in.sigma * (v_betabeta + v_beta) / (x * y);
}

double foc_root(double v_beta, double v_betabeta, double /*t*/, double x, double y,
                const MarketModel& model, double curvature_floor) {
  PiInputs in = pi_inputs(model, x, y);
  require_curvature(v_betabeta, curvature_floor);
  double linear = in.excess * v_beta / x + in.rho * in.sigma * (v_betabeta + v_beta) / (x * y);
  return -linear / (in.sigma * in.sigma * x * x * v_betabeta);
}

FixedPointResult couple_policy(const MarketModel& model, double t, double x, double y, double c,
                               const FixedPointOptions& opts) {
  if (c == 0.0 || !std::isfinite(c)) throw PreconditionError("normalization c must be nonzero");
  PiInputs in = pi_inputs(model, x, y);
  FixedPointResult res;
  res.pi_initial = in.excess * x / (in.sigma * in.sigma);
  double pi = res.pi_initial;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    ReducedCoefficients rc = collect_ode(reduced_params(model, t, x, y, pi));
    double a = rc.A(1.0);
    if (a == 0.0 || !std::isfinite(a))
      throw SingularCoefficientError("A(1) vanishes during policy coupling", 1.0, 1.0);
    double v_beta = c;
    double v_betabeta = -rc.B(1.0) / a * c;
    double next = optimal_pi_paper(v_beta, v_betabeta, t, x, y, model, opts.curvature_floor);
    if (!std::isfinite(next)) throw NonConvergenceError("policy coupling produced a non-finite pi", it);
    double change = std::abs(next - pi);
    pi = next;
    if (change == 0.0 || change < opts.rel_tol * std::abs(next)) {
      // Derivatives consistent with the converged pi.
      ReducedCoefficients final_rc = collect_ode(reduced_params(model, t, x, y, pi));
      res.v_beta = c;
      res.v_betabeta = -final_rc.B(1.0) / final_rc.A(1.0) * c;
      res.terms = optimal_pi_paper_terms(res.v_beta, res.v_betabeta, t, x, y, model,
                                         opts.curvature_floor);
      res.pi_paper = pi;
      res.pi_foc = foc_root(res.v_beta, res.v_betabeta, t, x, y, model, opts.curvature_floor);
      res.difference = res.pi_paper - res.pi_foc;
      res.iterations = it;
      return res;
    }
  }
  std::ostringstream os;
  os << "policy coupling did not converge after " << opts.max_iterations
     << " iterations (last pi = " << pi << ")";
  throw NonConvergenceError(os.str(), opts.max_iterations);
}

}  // namespace shiftlab
