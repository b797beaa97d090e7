#pragma once

// Finite-difference solver for the stochastic-factor portfolio HJB
//
//   V_t + r x V_x + b V_y + V_yy / 2
//       + sup_pi { pi^2 sigma^2 V_xx / 2 + pi (mu - r) V_x + rho sigma pi V_xy } = 0,
//   V(T, x, y) = u(x),
//
// marched backward from T with the policy lagged one step. Rows of constant
// y are independent within a step, so they are processed in parallel.

#include <cstdint>
#include <string>
#include <vector>

#include "shiftlab/model.hpp"

namespace shiftlab {

struct HamiltonianCoeffs {
  double excess = 0.0;  // mu - r
  double sigma = 0.0;
  double rho = 0.0;
};

HamiltonianCoeffs hamiltonian_coeffs(const Coefficients& c, double rho);

// pi^2 sigma^2 Vxx / 2 + pi (mu - r) Vx + rho sigma pi Vxy
double hamiltonian_term(double pi, double vx, double vxx, double vxy, const HamiltonianCoeffs& c);

struct PiBounds {
  double lo = -1.0;
  double hi = 1.0;
};

struct ArgmaxResult {
  double pi = 0.0;
  bool clipped = false;  // hit a bound or the curvature was degenerate
};

// Vertex of the quadratic clipped to the bounds when Vxx < -curvature_floor;
// otherwise the better of the two bounds (0 wins ties when it is feasible).
ArgmaxResult argmax_pi_closed(double vx, double vxx, double vxy, const HamiltonianCoeffs& c,
                              const PiBounds& bounds, double curvature_floor = 1e-12);

// Grid search over the bounds with the given width. Used to spot-check the
// closed form.
double argmax_pi_brute(double vx, double vxx, double vxy, const HamiltonianCoeffs& c,
                       const PiBounds& bounds, double width = 1e-4);

enum class Scheme { Explicit, ImplicitX };

// How the first and last wealth nodes are advanced. Both use a second-order
// one-sided V_x and write the maximised Hamiltonian as
// pi [(mu - r) V_x + rho sigma V_xy] / 2, so no V_xx is needed at the edge.
//  OneSided:   pi linearly extrapolated from the two nearest interior nodes.
//  ZeroPolicy: pi = 0, which leaves only the r x V_x drift.
enum class XBoundary { OneSided, ZeroPolicy };

std::string to_string(Scheme s);
std::string to_string(XBoundary b);

struct SolverConfig {
  Scheme scheme = Scheme::ImplicitX;
  // Defaults to [-10 x_max, 10 x_max] when left unset (lo >= hi).
  PiBounds pi_bounds{0.0, 0.0};
  XBoundary x_lo_boundary = XBoundary::OneSided;
  XBoundary x_hi_boundary = XBoundary::OneSided;
  double curvature_floor = 1e-12;
  int threads = 1;
  // Fraction of interior (node, step) pairs whose argmax is re-derived by
  // grid search.
  double spot_check_fraction = 0.01;
  double spot_check_width = 1e-4;
  std::uint64_t spot_check_seed = 12345;

  PiBounds resolved_bounds(const GridSpec& grid) const;
};

struct StepDiagnostics {
  int step = 0;  // time index of the slice produced
  double t = 0.0;
  double max_residual = 0.0;  // discrete HJB residual over interior nodes
  int clipped_nodes = 0;
  double cfl = 0.0;
};

struct HjbDiagnostics {
  std::vector<StepDiagnostics> steps;
  long monotonicity_violations = 0;  // V(x_{i+1}) < V(x_i) on retained slices
  long concavity_violations = 0;     // interior V_xx > 0
  long spot_checks = 0;
  long spot_check_failures = 0;      // closed form off by more than one cell
  double max_residual() const;
  double max_cfl() const;
};

struct HjbSolution {
  ValueSurface value;
  GridField policy;  // pi at every node
  HjbDiagnostics diagnostics;
};

// A slice of V on the (x, y) plane, index i * ny + j.
using Slice = std::vector<double>;

struct StepResult {
  Slice value;
  double cfl = 0.0;
};

// Advance one step from t_next to t_next - dt with the lagged policy.
// Throws StabilityError when the explicit part violates the CFL bound.
StepResult step_backward(const Slice& v_next, const Slice& pi_lagged, double t_next,
                         const SolverConfig& config, const MarketModel& model,
                         const GridSpec& grid);

// Optimal pi at every node of a slice from its own derivatives.
struct PolicySlice {
  Slice pi;
  int clipped = 0;
};
PolicySlice optimal_policy(const Slice& v, const SolverConfig& config, const MarketModel& model,
                           const GridSpec& grid);

// max |(V_next - V)/dt + H(V)| over interior nodes, with H maximised by
// the current slice's own derivatives.
double hjb_residual(const Slice& v, const Slice& v_next, const SolverConfig& config,
                    const MarketModel& model, const GridSpec& grid);

HjbSolution solve(const MarketModel& model, const UtilitySpec& utility, const GridSpec& grid,
                  const SolverConfig& config);

// Grid-kind policy with clamped trilinear interpolation.
PolicyField extract_policy(const HjbSolution& solution, std::string label = "fd");

}  // namespace shiftlab
