#pragma once

// The portfolio HJB rewritten in the shift parameter beta. With (t, x, y, pi)
// frozen, the transformed equation is linear in (V_beta, V_betabeta):
//
//   A(beta) V_betabeta + B(beta) V_beta = 0
//
// so W = V_beta solves a first-order linear ODE and follows from one
// quadrature. The optimal portfolio read off at beta = 1 is evaluated both
// exactly as printed and as the root of the first-order condition of the
// beta = 1 equation.

#include <vector>

#include "shiftlab/model.hpp"

namespace shiftlab {

struct ReducedParams {
  double t = 1.0;
  double x = 1.0;
  double y = 1.0;
  double pi = 0.0;
  Coefficients coeffs;
  double rho = 0.0;
};

ReducedParams reduced_params(const MarketModel& model, double t, double x, double y, double pi);

// beta V_b / t + r beta V_b + (mu - r) pi beta V_b / x + sigma^2 pi^2 x^2 V_bb / (2 beta^2)
//   + b beta V_b / y + beta^2 V_bb / (2 y^2) + rho sigma pi beta (V_bb + V_b) / (x y)
double reduced_lhs(double beta, double v_beta, double v_betabeta, const ReducedParams& p);

class ReducedCoefficients {
 public:
  explicit ReducedCoefficients(const ReducedParams& p) : p_(p) {}

  // Coefficient of V_betabeta.
  double A(double beta) const;
  // Coefficient of V_beta.
  double B(double beta) const;

  const ReducedParams& params() const noexcept { return p_; }

 private:
  ReducedParams p_;
};

ReducedCoefficients collect_ode(const ReducedParams& p);

struct OdeSolution {
  std::vector<double> beta;
  std::vector<double> w;         // W = V_beta
  std::vector<double> residual;  // |A W' + B W| / (|A W'| + |B W| + eps)
  double c = 1.0;                // W(1)

  double max_residual() const;
};

struct OdeOptions {
  int nodes = 101;
  double quad_tol = 1e-10;
  int sign_samples = 2000;
};

// W(beta) = c exp(-int_1^beta B/A). The range must contain 1. Throws
// SingularCoefficientError with the bracketing interval when A vanishes or
// changes sign on the range.
OdeSolution solve_vbeta(const ReducedCoefficients& coeffs, double beta_lo, double beta_hi,
                        double c, const OdeOptions& opts = {});

inline constexpr double kDefaultCurvatureFloor = 1e-12;

// Printed closed form:
//   -(mu - r) V_b / (sigma^2 x^3 V_bb) - rho sigma (V_bb + V_b) / (sigma x^3 y V_bb)
double optimal_pi_paper(double v_beta, double v_betabeta, double t, double x, double y,
                        const MarketModel& model, double curvature_floor = kDefaultCurvatureFloor);

// Both terms of the printed formula separately.
struct PaperPiTerms {
  double excess_return_term = 0.0;
  double hedging_term = 0.0;
};
PaperPiTerms optimal_pi_paper_terms(double v_beta, double v_betabeta, double t, double x,
                                    double y, const MarketModel& model,
                                    double curvature_floor = kDefaultCurvatureFloor);

// d/dpi of the beta = 1 equation:
//   (mu - r) V_b / x + sigma^2 pi x^2 V_bb + rho sigma (V_bb + V_b) / (x y)
double foc_residual(double pi, double v_beta, double v_betabeta, double t, double x, double y,
                    const MarketModel& model);

// Root of foc_residual in pi.
double foc_root(double v_beta, double v_betabeta, double t, double x, double y,
                const MarketModel& model, double curvature_floor = kDefaultCurvatureFloor);

struct FixedPointOptions {
  int max_iterations = 100;
  double rel_tol = 1e-8;
  double curvature_floor = kDefaultCurvatureFloor;
};

struct FixedPointResult {
  double pi_paper = 0.0;   // fixed point of the printed formula
  double pi_foc = 0.0;     // FOC root at the same derivatives
  double difference = 0.0; // pi_paper - pi_foc
  PaperPiTerms terms;
  double v_beta = 0.0;
  double v_betabeta = 0.0;
  double pi_initial = 0.0;
  int iterations = 0;
};

// Solves pi = optimal_pi_paper(c, c * W'(1)/W(1)) where W'(1)/W(1) = -B(1)/A(1)
// depends on pi. Starts from the Merton amount -(mu - r) V_x / (sigma^2 V_xx)
// with V_x = V_b / x, V_xx = V_bb / x^2 and V_bb / V_b = -1, i.e.
// (mu - r) x / sigma^2. Throws NonConvergenceError after max_iterations.
FixedPointResult couple_policy(const MarketModel& model, double t, double x, double y, double c,
                               const FixedPointOptions& opts = {});

}  // namespace shiftlab
