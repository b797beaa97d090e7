#include "shiftlab/hjb_solver.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "shiftlab/errors.hpp"
#include "shiftlab/parallel.hpp"

namespace shiftlab {

namespace {

struct Derivatives {
  Slice vx, vxx, vy, vyy, vxy;
};

// First derivative along one axis of a strided line: central inside,
// second-order one-sided at both ends.
template <class Get>
double first_diff(const Get& v, int k, int n, double h) {
  if (k == 0) return (-3 * v(0) + 4 * v(1) - v(2)) / (2 * h);
  if (k == n - 1) return (3 * v(n - 1) - 4 * v(n - 2) + v(n - 3)) / (2 * h);
  return (v(k + 1) - v(k - 1)) / (2 * h);
}

Derivatives derivatives(const Slice& v, const GridSpec& g) {
  const int nx = g.nx;
  const int ny = g.ny;
  const double dx = g.dx();
  const double dy = g.dy();
  const std::size_t n = v.size();
  Derivatives d{Slice(n), Slice(n), Slice(n), Slice(n), Slice(n)};
  auto id = [ny](int i, int j) { return static_cast<std::size_t>(i) * ny + j; };

  for (int j = 0; j < ny; ++j) {
    auto line = [&](int i) { return v[id(i, j)]; };
    for (int i = 0; i < nx; ++i) d.vx[id(i, j)] = first_diff(line, i, nx, dx);
    for (int i = 1; i < nx - 1; ++i)
      d.vxx[id(i, j)] = (v[id(i + 1, j)] - 2 * v[id(i, j)] + v[id(i - 1, j)]) / (dx * dx);
    d.vxx[id(0, j)] = (v[id(2, j)] - 2 * v[id(1, j)] + v[id(0, j)]) / (dx * dx);
    d.vxx[id(nx - 1, j)] =
        (v[id(nx - 1, j)] - 2 * v[id(nx - 2, j)] + v[id(nx - 3, j)]) / (dx * dx);
  }
  for (int i = 0; i < nx; ++i) {
    auto line = [&](int j) { return v[id(i, j)]; };
    for (int j = 0; j < ny; ++j) d.vy[id(i, j)] = first_diff(line, j, ny, dy);
    for (int j = 1; j < ny - 1; ++j)
      d.vyy[id(i, j)] = (v[id(i, j + 1)] - 2 * v[id(i, j)] + v[id(i, j - 1)]) / (dy * dy);
    // Zero second derivative at the factor edges.
    d.vyy[id(i, 0)] = 0.0;
    d.vyy[id(i, ny - 1)] = 0.0;
  }
  // x-derivative of V_y; in the interior this is the four-corner stencil.
  for (int j = 0; j < ny; ++j) {
    auto line = [&](int i) { return d.vy[id(i, j)]; };
    for (int i = 0; i < nx; ++i) d.vxy[id(i, j)] = first_diff(line, i, nx, dx);
  }
  return d;
}

std::vector<Coefficients> row_coefficients(const MarketModel& model, const GridSpec& g) {
  std::vector<Coefficients> out(g.ny);
  for (int j = 0; j < g.ny; ++j) out[j] = model.at(g.y_at(j));
  return out;
}

bool zero_policy_edge(const SolverConfig& cfg, const GridSpec& g, int i) {
  return (i == 0 && cfg.x_lo_boundary == XBoundary::ZeroPolicy) ||
         (i == g.nx - 1 && cfg.x_hi_boundary == XBoundary::ZeroPolicy);
}

PolicySlice policy_from(const Derivatives& d, const SolverConfig& cfg, const MarketModel& model,
                        const GridSpec& g) {
  const PiBounds bounds = cfg.resolved_bounds(g);
  const auto coeffs = row_coefficients(model, g);
  const int nx = g.nx;
  const int ny = g.ny;
  PolicySlice out{Slice(d.vx.size()), 0};
  auto id = [ny](int i, int j) { return static_cast<std::size_t>(i) * ny + j; };
  for (int i = 1; i < nx - 1; ++i) {
    for (int j = 0; j < ny; ++j) {
      std::size_t k = id(i, j);
      auto hc = hamiltonian_coeffs(coeffs[j], model.rho());
      auto res = argmax_pi_closed(d.vx[k], d.vxx[k], d.vxy[k], hc, bounds, cfg.curvature_floor);
      out.pi[k] = res.pi;
      if (res.clipped) ++out.clipped;
    }
  }
  // Edge policy: zero, or linear extrapolation of the interior policy.
  for (int j = 0; j < ny; ++j) {
    for (int edge : {0, nx - 1}) {
      int in1 = edge == 0 ? 1 : nx - 2;
      int in2 = edge == 0 ? 2 : nx - 3;
      std::size_t k = id(edge, j);
      if (zero_policy_edge(cfg, g, edge)) {
        out.pi[k] = 0.0;
        ++out.clipped;
        continue;
      }
      double pi = 2 * out.pi[id(in1, j)] - out.pi[id(in2, j)];
      out.pi[k] = std::clamp(pi, bounds.lo, bounds.hi);
      if (out.pi[k] != pi) ++out.clipped;
    }
  }
  return out;
}

// Thomas algorithm; sub[0] and sup[n-1] are ignored.
void solve_tridiagonal(std::vector<double>& sub, std::vector<double>& diag,
                       std::vector<double>& sup, std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    double m = sub[i] / diag[i - 1];
    diag[i] -= m * sup[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
}

// Interior x-stencil weights (minus, centre, plus) for c V_x + a V_xx,
// central where monotone and upwind otherwise.
struct Stencil {
  double m, c, p;
};

Stencil x_stencil(double a, double drift, double dx) {
  double diff = a / (dx * dx);
  double adv = drift / (2 * dx);
  if (diff - std::abs(adv) >= 0.0) return {diff - adv, -2 * diff, diff + adv};
  if (drift > 0) return {diff, -2 * diff - drift / dx, diff + drift / dx};
  return {diff - drift / dx, -2 * diff + drift / dx, diff};
}

}  // namespace

HamiltonianCoeffs hamiltonian_coeffs(const Coefficients& c, double rho) {
  return {c.mu - c.r, c.sigma, rho};
}

double hamiltonian_term(double pi, double vx, double vxx, double vxy, const HamiltonianCoeffs& c) {
  return 0.5 * pi * pi * c.sigma * c.sigma * vxx + pi * c.excess * vx + c.rho * c.sigma * pi * vxy;
}

ArgmaxResult argmax_pi_closed(double vx, double vxx, double vxy, const HamiltonianCoeffs& c,
                              const PiBounds& bounds, double curvature_floor) {
  double linear = c.excess * vx + c.rho * c.sigma * vxy;
  if (vxx < -curvature_floor) {
    double vertex = -linear / (c.sigma * c.sigma * vxx);
    double pi = std::clamp(vertex, bounds.lo, bounds.hi);
    return {pi, pi != vertex};
  }
  double q_lo = hamiltonian_term(bounds.lo, vx, vxx, vxy, c);
  double q_hi = hamiltonian_term(bounds.hi, vx, vxx, vxy, c);
  double best = q_hi > q_lo ? bounds.hi : bounds.lo;
  double q_best = std::max(q_lo, q_hi);
  if (bounds.lo <= 0.0 && bounds.hi >= 0.0 && q_best <= 0.0) best = 0.0;
  return {best, true};
}

double argmax_pi_brute(double vx, double vxx, double vxy, const HamiltonianCoeffs& c,
                       const PiBounds& bounds, double width) {
  // q(pi) = pi (a pi + lin), scanned on lo + k width and then at hi.
  const double a = 0.5 * c.sigma * c.sigma * vxx;
  const double lin = c.excess * vx + c.rho * c.sigma * vxy;
  const long n = static_cast<long>(std::ceil((bounds.hi - bounds.lo) / width));
  long best_k = 0;
  double best_q = bounds.lo * (a * bounds.lo + lin);
  for (long k = 1; k < n; ++k) {
    double pi = bounds.lo + k * width;
    double q = pi * (a * pi + lin);
    if (q > best_q) {
      best_q = q;
      best_k = k;
    }
  }
  double q_hi = bounds.hi * (a * bounds.hi + lin);
  if (q_hi > best_q) return bounds.hi;
  return bounds.lo + best_k * width;
}

std::string to_string(Scheme s) { return s == Scheme::Explicit ? "explicit" : "implicit_x"; }

std::string to_string(XBoundary b) {
  return b == XBoundary::OneSided ? "one_sided" : "zero_policy";
}

PiBounds SolverConfig::resolved_bounds(const GridSpec& grid) const {
  if (pi_bounds.lo < pi_bounds.hi) return pi_bounds;
  return {-10.0 * grid.x_max, 10.0 * grid.x_max};
}

double HjbDiagnostics::max_residual() const {
  double m = 0.0;
  for (const auto& s : steps) m = std::max(m, s.max_residual);
  return m;
}

double HjbDiagnostics::max_cfl() const {
  double m = 0.0;
  for (const auto& s : steps) m = std::max(m, s.cfl);
  return m;
}

PolicySlice optimal_policy(const Slice& v, const SolverConfig& config, const MarketModel& model,
                           const GridSpec& grid) {
  return policy_from(derivatives(v, grid), config, model, grid);
}

StepResult step_backward(const Slice& v_next, const Slice& pi_lagged, double t_next,
                         const SolverConfig& config, const MarketModel& model,
                         const GridSpec& grid) {
  const int nx = grid.nx;
  const int ny = grid.ny;
  const double dt = grid.dt();
  const double dx = grid.dx();
  const double dy = grid.dy();
  if (v_next.size() != static_cast<std::size_t>(nx) * ny || pi_lagged.size() != v_next.size())
    throw PreconditionError("slice size does not match the grid");
  for (double v : v_next)
    if (!std::isfinite(v)) throw PreconditionError("input slice is not finite");
  (void)t_next;

  const Derivatives d = derivatives(v_next, grid);
  const auto coeffs = row_coefficients(model, grid);
  const double rho = model.rho();
  const bool is_explicit = config.scheme == Scheme::Explicit;

  // Stability of the explicitly treated terms.
  double cfl = 0.0;
  for (int i = 0; i < nx; ++i) {
    double x = grid.x_at(i);
    for (int j = 0; j < ny; ++j) {
      const auto& c = coeffs[j];
      double pi = pi_lagged[static_cast<std::size_t>(i) * ny + j];
      double rate = 1.0 / (dy * dy) + std::abs(c.b) / dy + std::abs(rho * c.sigma * pi) / (dx * dy);
      if (is_explicit) {
        double a = 0.5 * c.sigma * c.sigma * pi * pi;
        double drift = c.r * x + (c.mu - c.r) * pi;
        rate += 2 * a / (dx * dx) + std::abs(drift) / dx;
      }
      cfl = std::max(cfl, dt * rate);
    }
  }
  if (cfl > 1.0) {
    std::ostringstream os;
    os << "CFL number " << cfl << " exceeds 1 for the " << to_string(config.scheme)
       << " scheme; reduce the time step";
    throw StabilityError(os.str(), cfl);
  }

  Slice out(v_next.size());
  parallel_for(ny, config.threads, [&](int j_begin, int j_end) {
    std::vector<double> sub(nx), diag(nx), sup(nx), rhs(nx);
    for (int j = j_begin; j < j_end; ++j) {
      const auto& c = coeffs[j];
      auto id = [ny, j](int i) { return static_cast<std::size_t>(i) * ny + j; };
      // Explicit part: factor terms, cross term, and the edge curvature.
      std::vector<double> drift(nx), diffusion(nx), explicit_part(nx);
      for (int i = 0; i < nx; ++i) {
        std::size_t k = id(i);
        double pi = pi_lagged[k];
        drift[i] = c.r * grid.x_at(i) + (c.mu - c.r) * pi;
        diffusion[i] = 0.5 * c.sigma * c.sigma * pi * pi;
        explicit_part[i] = c.b * d.vy[k] + 0.5 * d.vyy[k] + rho * c.sigma * pi * d.vxy[k];
      }
      // At the edges the maximised Hamiltonian is written as
      // pi* [(mu - r) V_x + rho sigma V_xy] / 2, which needs no V_xx.
      for (int i : {0, nx - 1}) {
        std::size_t k = id(i);
        double pi = pi_lagged[k];
        drift[i] = c.r * grid.x_at(i) + 0.5 * (c.mu - c.r) * pi;
        diffusion[i] = 0.0;
        explicit_part[i] = c.b * d.vy[k] + 0.5 * d.vyy[k] + 0.5 * rho * c.sigma * pi * d.vxy[k];
      }

      if (is_explicit) {
        for (int i = 0; i < nx; ++i) {
          double lx;
          if (i == 0 || i == nx - 1) {
            lx = drift[i] * d.vx[id(i)];
          } else {
            Stencil s = x_stencil(diffusion[i], drift[i], dx);
            lx = s.m * v_next[id(i - 1)] + s.c * v_next[id(i)] + s.p * v_next[id(i + 1)];
          }
          out[id(i)] = v_next[id(i)] + dt * (lx + explicit_part[i]);
        }
        continue;
      }

      for (int i = 1; i < nx - 1; ++i) {
        Stencil s = x_stencil(diffusion[i], drift[i], dx);
        sub[i] = -dt * s.m;
        diag[i] = 1.0 - dt * s.c;
        sup[i] = -dt * s.p;
        rhs[i] = v_next[id(i)] + dt * explicit_part[i];
      }
      // Edge rows: second-order one-sided V_x, then fold the third unknown
      // into the neighbouring interior row to keep the system tridiagonal.
      {
        double w = dt * drift[0] / (2 * dx);
        double r0 = v_next[id(0)] + dt * explicit_part[0];
        if (sup[1] != 0.0) {
          double f = w / sup[1];
          diag[0] = 1.0 + 3 * w - f * sub[1];
          sup[0] = -4 * w - f * diag[1];
          rhs[0] = r0 - f * rhs[1];
        } else {
          // Row 1 does not see node 2; first-order difference instead.
          diag[0] = 1.0 + 2 * w;
          sup[0] = -2 * w;
          rhs[0] = r0;
        }
      }
      {
        int n = nx - 1;
        double w = dt * drift[n] / (2 * dx);
        double rn = v_next[id(n)] + dt * explicit_part[n];
        if (sub[n - 1] != 0.0) {
          double f = -w / sub[n - 1];
          sub[n] = 4 * w - f * diag[n - 1];
          diag[n] = 1.0 - 3 * w - f * sup[n - 1];
          rhs[n] = rn - f * rhs[n - 1];
        } else {
          sub[n] = 2 * w;
          diag[n] = 1.0 - 2 * w;
          rhs[n] = rn;
        }
      }
      solve_tridiagonal(sub, diag, sup, rhs);
      for (int i = 0; i < nx; ++i) out[id(i)] = rhs[i];
    }
  });
  return {std::move(out), cfl};
}

double hjb_residual(const Slice& v, const Slice& v_next, const SolverConfig& config,
                    const MarketModel& model, const GridSpec& grid) {
  const Derivatives d = derivatives(v, grid);
  const PolicySlice pol = policy_from(d, config, model, grid);
  const auto coeffs = row_coefficients(model, grid);
  const double dt = grid.dt();
  double worst = 0.0;
  for (int i = 1; i < grid.nx - 1; ++i) {
    double x = grid.x_at(i);
    for (int j = 1; j < grid.ny - 1; ++j) {
      std::size_t k = static_cast<std::size_t>(i) * grid.ny + j;
      const auto& c = coeffs[j];
      auto hc = hamiltonian_coeffs(c, model.rho());
      double r = (v_next[k] - v[k]) / dt + c.r * x * d.vx[k] + c.b * d.vy[k] + 0.5 * d.vyy[k] +
                 hamiltonian_term(pol.pi[k], d.vx[k], d.vxx[k], d.vxy[k], hc);
      worst = std::max(worst, std::abs(r));
    }
  }
  return worst;
}

HjbSolution solve(const MarketModel& model, const UtilitySpec& utility, const GridSpec& grid,
                  const SolverConfig& config) {
  grid.validate();
  if (!utility.in_domain(grid.x_min))
    throw PreconditionError("grid x_min lies outside the utility domain");
  const int nx = grid.nx;
  const int ny = grid.ny;
  const std::size_t slice_size = static_cast<std::size_t>(nx) * ny;
  const PiBounds bounds = config.resolved_bounds(grid);
  const auto coeffs = row_coefficients(model, grid);

  HjbSolution sol;
  sol.value.field = GridField(grid);
  sol.value.producer = "hjb_fd_solver/" + to_string(config.scheme);
  sol.policy = GridField(grid);

  std::mt19937_64 spot_rng(config.spot_check_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto store = [&](int k, const Slice& v, const Slice& pi) {
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < ny; ++j) {
        std::size_t s = static_cast<std::size_t>(i) * ny + j;
        sol.value.field.at(k, i, j) = v[s];
        sol.policy.at(k, i, j) = pi[s];
      }
  };
  auto audit = [&](const Slice& v, const Derivatives& d, const Slice& pi) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        std::size_t s = static_cast<std::size_t>(i) * ny + j;
        if (v[s + ny] < v[s]) ++sol.diagnostics.monotonicity_violations;
        if (i > 0 && d.vxx[s] > 1e-9 * (1.0 + std::abs(v[s]))) ++sol.diagnostics.concavity_violations;
      }
    }
    if (config.spot_check_fraction <= 0.0) return;
    // Edge policies are extrapolated or zero, not maximised, so only interior
    // wealth nodes are audited.
    for (int i = 1; i + 1 < nx; ++i)
      for (int j = 0; j < ny; ++j) {
        if (unit(spot_rng) >= config.spot_check_fraction) continue;
        std::size_t s = static_cast<std::size_t>(i) * ny + j;
        auto hc = hamiltonian_coeffs(coeffs[j], model.rho());
        double brute = argmax_pi_brute(d.vx[s], d.vxx[s], d.vxy[s], hc, bounds,
                                       config.spot_check_width);
        ++sol.diagnostics.spot_checks;
        double q_closed = hamiltonian_term(pi[s], d.vx[s], d.vxx[s], d.vxy[s], hc);
        double q_brute = hamiltonian_term(brute, d.vx[s], d.vxx[s], d.vxy[s], hc);
        bool close = std::abs(brute - pi[s]) <= config.spot_check_width * (1 + 1e-9);
        if (!close && q_closed < q_brute - 1e-12 * (1.0 + std::abs(q_brute)))
          ++sol.diagnostics.spot_check_failures;
      }
  };

  // Terminal condition imposed exactly.
  Slice v(slice_size);
  for (int i = 0; i < nx; ++i) {
    double u = utility.value(grid.x_at(i));
    for (int j = 0; j < ny; ++j) v[static_cast<std::size_t>(i) * ny + j] = u;
  }
  Derivatives d = derivatives(v, grid);
  PolicySlice pol = policy_from(d, config, model, grid);
  store(grid.nt, v, pol.pi);
  audit(v, d, pol.pi);

  for (int k = grid.nt - 1; k >= 0; --k) {
    StepResult step = step_backward(v, pol.pi, grid.t_at(k + 1), config, model, grid);
    Derivatives dn = derivatives(step.value, grid);
    PolicySlice next_pol = policy_from(dn, config, model, grid);
    StepDiagnostics diag;
    diag.step = k;
    diag.t = grid.t_at(k);
    diag.max_residual = hjb_residual(step.value, v, config, model, grid);
    diag.clipped_nodes = next_pol.clipped;
    diag.cfl = step.cfl;
    sol.diagnostics.steps.push_back(diag);
    store(k, step.value, next_pol.pi);
    audit(step.value, dn, next_pol.pi);
    v = std::move(step.value);
    pol = std::move(next_pol);
  }
  return sol;
}

PolicyField extract_policy(const HjbSolution& solution, std::string label) {
  return PolicyField::grid(std::move(label), solution.policy);
}

}  // namespace shiftlab
