#pragma once

// Euler-Maruyama simulation of the wealth/factor system
//
//   dX = [r X + (mu - r) pi] ds + pi sigma dW1
//   dY = b ds + rho dW1 + sqrt(1 - rho^2) dW2
//
// under an arbitrary policy, estimating E[u(X_T)]. Every path draws from its
// own counter-based stream keyed by (seed, path index), so two policies run
// with the same seed see the same increments.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "shiftlab/hjb_solver.hpp"
#include "shiftlab/model.hpp"

namespace shiftlab {

struct SimConfig {
  long paths = 10000;
  int steps = 64;
  std::uint64_t seed = 1;
  bool antithetic = false;
  double t0 = 0.5;
  double T = 1.5;
  double x0 = 1.0;
  double y0 = 0.0;
  // Absorbing level for paths that leave the utility domain.
  double absorb_x = 1e-6;
  int threads = 1;

  // Throws ValidationError.
  void validate() const;
};

struct SimReport {
  std::string label;
  double estimate = 0.0;  // mean of u(X_T)
  double std_error = 0.0; // sample std / sqrt(samples); antithetic pairs count once
  double mean_x = 0.0;
  double var_x = 0.0;
  long bankrupt = 0;
  long policy_clamped = 0;  // policy queries outside a grid policy's box
  long factor_clamped = 0;  // factor levels outside a coefficient table
  long samples = 0;         // independent samples behind std_error
  long paths = 0;
  int steps = 0;
};

// Per-sample utilities (pair averages under antithetic sampling) plus the
// summary. Exposed so policy comparisons can difference sample by sample.
struct SimSamples {
  std::vector<double> utility;
  SimReport report;
};

SimSamples simulate_samples(const MarketModel& model, const PolicyField& policy,
                            const UtilitySpec& utility, const SimConfig& config);

SimReport simulate_paths(const MarketModel& model, const PolicyField& policy,
                         const UtilitySpec& utility, const SimConfig& config);

inline constexpr long kMaxDumpRows = 10'000'000;

// Writes `path,step,t,X,Y,pi` rows for every path and step. Throws
// PreconditionError when paths * steps exceeds kMaxDumpRows.
void dump_paths(const MarketModel& model, const PolicyField& policy, const UtilitySpec& utility,
                const SimConfig& config, std::ostream& out);

struct PairDifference {
  int first = 0;
  int second = 0;
  double difference = 0.0;  // estimate(first) - estimate(second)
  double std_error = 0.0;
};

struct ComparisonReport {
  std::vector<SimReport> reports;
  std::vector<PairDifference> differences;
  std::vector<int> ranking;  // indices into reports, best first
};

ComparisonReport compare_policies(const MarketModel& model, const UtilitySpec& utility,
                                  std::span<const PolicyField> policies, const SimConfig& config);

struct ValuePoint {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
};

struct ValueCheckRow {
  ValuePoint point;
  double v_fd = 0.0;
  double v_mc = 0.0;
  double std_error = 0.0;
  double z = 0.0;
  bool boundary_affected = false;
};

// Simulates from each point under the solver's own policy and compares with
// the interpolated surface. Points within 10% of the x or y range of an edge
// are flagged as boundary-affected.
std::vector<ValueCheckRow> value_check(const MarketModel& model, const UtilitySpec& utility,
                                       const HjbSolution& solution, const SimConfig& config,
                                       std::span<const ValuePoint> points);

// Deterministic fixed-order pairwise summation.
double pairwise_sum(std::span<const double> v);

}  // namespace shiftlab
