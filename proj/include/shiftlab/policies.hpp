#pragma once

// Named policies for simulation and comparison.

#include <string>
#include <string_view>

#include "shiftlab/hjb_solver.hpp"
#include "shiftlab/model.hpp"

namespace shiftlab {

enum class PolicyName { Zero, MertonPower, MertonExponential, Fd, Paper };

std::string to_string(PolicyName p);
// Throws ValidationError for unknown names.
PolicyName policy_from_string(std::string_view name);

// Fd and Paper are read off an HJB solution.
bool needs_solution(PolicyName p);

PolicyField zero_policy();

// (mu - r) x / (sigma^2 (1 - gamma)) with coefficients at the current factor
// level. Log utility is the gamma = 0 case. Throws ValidationError for
// exponential utility.
PolicyField merton_power_policy(const MarketModel& model, const UtilitySpec& utility);

// (mu - r) exp(-r (T - t)) / (alpha sigma^2). Throws ValidationError unless
// the utility is exponential.
PolicyField merton_exponential_policy(const MarketModel& model, const UtilitySpec& utility,
                                      double T);

struct PaperPolicyStats {
  long degenerate = 0;  // nodes with |V_bb| under the floor, set to 0
  long singular = 0;    // y = 0 nodes with rho != 0, set to 0
  long clipped = 0;     // nodes clipped to the solver's pi bounds
};

// The printed closed form evaluated at every node of the solution with
// V_beta = x V_x and V_betabeta = x^2 V_xx (wealth dilation at beta = 1),
// clipped to the solver's bounds.
PolicyField paper_policy(const HjbSolution& solution, const MarketModel& model,
                         const SolverConfig& config, PaperPolicyStats* stats = nullptr);

}  // namespace shiftlab
