#include "shiftlab/policies.hpp"

#include <algorithm>
#include <cmath>

#include "shiftlab/errors.hpp"
#include "shiftlab/ode_reduction.hpp"

namespace shiftlab {

std::string to_string(PolicyName p) {
  switch (p) {
    case PolicyName::Zero: return "zero";
    case PolicyName::MertonPower: return "merton_power";
    case PolicyName::MertonExponential: return "merton_exponential";
    case PolicyName::Fd: return "fd";
    case PolicyName::Paper: return "paper";
  }
  return "?";
}

PolicyName policy_from_string(std::string_view name) {
  for (auto p : {PolicyName::Zero, PolicyName::MertonPower, PolicyName::MertonExponential,
                 PolicyName::Fd, PolicyName::Paper})
    if (name == to_string(p)) return p;
  throw ValidationError("unknown policy '" + std::string(name) + "'");
}

bool needs_solution(PolicyName p) { return p == PolicyName::Fd || p == PolicyName::Paper; }

PolicyField zero_policy() {
  return PolicyField::closed_form("zero", [](double, double, double) { return 0.0; });
}

PolicyField merton_power_policy(const MarketModel& model, const UtilitySpec& utility) {
  double gamma = 0.0;
  if (utility.family() == UtilityFamily::Power)
    gamma = utility.parameter();
  else if (utility.family() != UtilityFamily::Log)
    throw ValidationError("merton_power needs power or log utility");
  return PolicyField::closed_form("merton_power", [model, gamma](double, double x, double y) {
    bool clamped = false;
    Coefficients c = model.at_clamped(y, clamped);
    return (c.mu - c.r) * x / (c.sigma * c.sigma * (1.0 - gamma));
  });
}

PolicyField merton_exponential_policy(const MarketModel& model, const UtilitySpec& utility,
                                      double T) {
  if (utility.family() != UtilityFamily::Exponential)
    throw ValidationError("merton_exponential needs exponential utility");
  double alpha = utility.parameter();
  return PolicyField::closed_form(
      "merton_exponential", [model, alpha, T](double t, double, double y) {
        bool clamped = false;
        Coefficients c = model.at_clamped(y, clamped);
        return (c.mu - c.r) * std::exp(-c.r * (T - t)) / (alpha * c.sigma * c.sigma);
      });
}

PolicyField paper_policy(const HjbSolution& solution, const MarketModel& model,
                         const SolverConfig& config, PaperPolicyStats* stats) {
  const GridField& v = solution.value.field;
  const GridSpec& g = v.grid();
  const PiBounds bounds = config.resolved_bounds(g);
  const double dx = g.dx();
  PaperPolicyStats local;
  GridField pi(g);
  for (int k = 0; k <= g.nt; ++k) {
    double t = g.t_at(k);
    for (int i = 0; i < g.nx; ++i) {
      double x = g.x_at(i);
      for (int j = 0; j < g.ny; ++j) {
        double vx, vxx;
        if (i == 0) {
          vx = (-3 * v.at(k, 0, j) + 4 * v.at(k, 1, j) - v.at(k, 2, j)) / (2 * dx);
          vxx = (v.at(k, 0, j) - 2 * v.at(k, 1, j) + v.at(k, 2, j)) / (dx * dx);
        } else if (i == g.nx - 1) {
          vx = (3 * v.at(k, i, j) - 4 * v.at(k, i - 1, j) + v.at(k, i - 2, j)) / (2 * dx);
          vxx = (v.at(k, i, j) - 2 * v.at(k, i - 1, j) + v.at(k, i - 2, j)) / (dx * dx);
        } else {
          vx = (v.at(k, i + 1, j) - v.at(k, i - 1, j)) / (2 * dx);
          vxx = (v.at(k, i + 1, j) - 2 * v.at(k, i, j) + v.at(k, i - 1, j)) / (dx * dx);
        }
        double y = g.y_at(j);
        double v_b = x * vx;
        double v_bb = x * x * vxx;
        double value = 0.0;
        if (!(std::abs(v_bb) >= config.curvature_floor)) {
          ++local.degenerate;
        } else if (y != 0.0) {
          value = optimal_pi_paper(v_b, v_bb, t, x, y, model, config.curvature_floor);
        } else if (model.rho() == 0.0) {
          // The hedging term carries rho / y; with rho = 0 only the first term is left.
          Coefficients c = model.at(y);
          value = -(c.mu - c.r) * v_b / (c.sigma * c.sigma * x * x * x * v_bb);
        } else {
          ++local.singular;
        }
        if (value < bounds.lo || value > bounds.hi) {
          value = std::clamp(value, bounds.lo, bounds.hi);
          ++local.clipped;
        }
        pi.at(k, i, j) = value;
      }
    }
  }
  if (stats) *stats = local;
  return PolicyField::grid("paper", std::move(pi));
}

}  // namespace shiftlab
