#include "shiftlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shiftlab/errors.hpp"

namespace shiftlab {

namespace {

bool finite_all(const Coefficients& c) {
  return std::isfinite(c.r) && std::isfinite(c.mu) && std::isfinite(c.sigma) &&
         std::isfinite(c.b);
}

void check_rho(double rho) {
  if (!(std::abs(rho) < 1.0)) {
    std::ostringstream os;
    os << "correlation must satisfy |rho| < 1, got " << rho;
    throw PreconditionError(os.str());
  }
}

Coefficients lerp(const Coefficients& a, const Coefficients& b, double w) {
  return {a.r + w * (b.r - a.r), a.mu + w * (b.mu - a.mu), a.sigma + w * (b.sigma - a.sigma),
          a.b + w * (b.b - a.b)};
}

// Index of the cell [nodes[i], nodes[i+1]] containing v and the weight of
// nodes[i+1]. v must lie inside [nodes.front(), nodes.back()].
std::pair<int, double> locate(double v, double lo, double step, int n) {
  double s = (v - lo) / step;
  // Snap queries that sit on a node up to rounding.
  double nearest = std::round(s);
  if (std::abs(s - nearest) < 1e-9) s = nearest;
  int i = static_cast<int>(std::floor(s));
  i = std::clamp(i, 0, n - 2);
  double w = s - i;
  return {i, std::clamp(w, 0.0, 1.0)};
}

}  // namespace

std::string to_string(CoefficientFamily family) {
  switch (family) {
    case CoefficientFamily::Constant: return "constant";
    case CoefficientFamily::Affine: return "affine";
    case CoefficientFamily::Table: return "table";
  }
  return "unknown";
}

MarketModel MarketModel::constant(const Coefficients& c, double rho, double sigma_min) {
  check_rho(rho);
  if (!finite_all(c)) throw PreconditionError("constant coefficients must be finite");
  MarketModel m;
  m.family_ = CoefficientFamily::Constant;
  m.rho_ = rho;
  m.sigma_min_ = sigma_min;
  m.constant_ = c;
  m.y_lo_ = -HUGE_VAL;
  m.y_hi_ = HUGE_VAL;
  m.check_sigma(c, 0.0);
  return m;
}

MarketModel MarketModel::affine(const AffineCoefficients& coeffs, double y_lo, double y_hi,
                                double rho, double sigma_min) {
  check_rho(rho);
  if (!(y_lo < y_hi) || !std::isfinite(y_lo) || !std::isfinite(y_hi))
    throw PreconditionError("affine clamp range must be finite with y_lo < y_hi");
  if (!finite_all(coeffs.intercept) || !finite_all(coeffs.slope))
    throw PreconditionError("affine coefficients must be finite");
  MarketModel m;
  m.family_ = CoefficientFamily::Affine;
  m.rho_ = rho;
  m.sigma_min_ = sigma_min;
  m.affine_ = coeffs;
  m.y_lo_ = y_lo;
  m.y_hi_ = y_hi;
  // sigma is affine in the clamped y, so its minimum sits at an endpoint.
  m.check_sigma(m.evaluate(y_lo), y_lo);
  m.check_sigma(m.evaluate(y_hi), y_hi);
  // Affine models are defined for every y; y_lo/y_hi only clamp.
  return m;
}

MarketModel MarketModel::table(std::vector<double> y_nodes, std::vector<Coefficients> values,
                               double rho, double sigma_min) {
  check_rho(rho);
  if (y_nodes.size() < 2 || y_nodes.size() != values.size())
    throw PreconditionError("table needs at least two nodes and one value row per node");
  for (std::size_t i = 1; i < y_nodes.size(); ++i)
    if (!(y_nodes[i] > y_nodes[i - 1]))
      throw PreconditionError("table y nodes must be strictly increasing");
  MarketModel m;
  m.family_ = CoefficientFamily::Table;
  m.rho_ = rho;
  m.sigma_min_ = sigma_min;
  m.y_lo_ = y_nodes.front();
  m.y_hi_ = y_nodes.back();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!finite_all(values[i])) throw PreconditionError("table coefficients must be finite");
    m.check_sigma(values[i], y_nodes[i]);
  }
  m.table_y_ = std::move(y_nodes);
  m.table_values_ = std::move(values);
  return m;
}

void MarketModel::check_sigma(const Coefficients& c, double y) const {
  if (!(c.sigma >= sigma_min_) || !(sigma_min_ > 0.0)) {
    std::ostringstream os;
    os << "sigma(" << y << ") = " << c.sigma << " is below sigma_min = " << sigma_min_;
    throw PreconditionError(os.str());
  }
}

Coefficients MarketModel::evaluate(double y) const {
  switch (family_) {
    case CoefficientFamily::Constant:
      return constant_;
    case CoefficientFamily::Affine: {
      double yc = std::clamp(y, y_lo_, y_hi_);
      const auto& a = affine_.intercept;
      const auto& s = affine_.slope;
      return {a.r + s.r * yc, a.mu + s.mu * yc, a.sigma + s.sigma * yc, a.b + s.b * yc};
    }
    case CoefficientFamily::Table: {
      auto it = std::upper_bound(table_y_.begin(), table_y_.end(), y);
      std::size_t hi = std::clamp<std::size_t>(it - table_y_.begin(), 1, table_y_.size() - 1);
      std::size_t lo = hi - 1;
      double w = (y - table_y_[lo]) / (table_y_[hi] - table_y_[lo]);
      return lerp(table_values_[lo], table_values_[hi], std::clamp(w, 0.0, 1.0));
    }
  }
  return constant_;
}

Coefficients MarketModel::at(double y) const {
  if (!std::isfinite(y)) throw DomainError("factor level must be finite");
  if (family_ == CoefficientFamily::Table && (y < y_lo_ || y > y_hi_)) {
    std::ostringstream os;
    os << "factor level " << y << " outside tabulated range [" << y_lo_ << ", " << y_hi_ << "]";
    throw DomainError(os.str());
  }
  return evaluate(y);
}

Coefficients MarketModel::at_clamped(double y, bool& clamped) const {
  clamped = false;
  if (family_ == CoefficientFamily::Table && (y < y_lo_ || y > y_hi_)) {
    clamped = true;
    y = std::clamp(y, y_lo_, y_hi_);
  }
  return evaluate(y);
}

Coefficients eval_coefficients(const MarketModel& model, double y) { return model.at(y); }

std::string to_string(UtilityFamily family) {
  switch (family) {
    case UtilityFamily::Exponential: return "exponential";
    case UtilityFamily::Power: return "power";
    case UtilityFamily::Log: return "log";
  }
  return "unknown";
}

UtilitySpec UtilitySpec::exponential(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw PreconditionError("exponential utility needs alpha > 0");
  return {UtilityFamily::Exponential, alpha};
}

UtilitySpec UtilitySpec::power(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw PreconditionError("power utility needs gamma in (0, 1)");
  return {UtilityFamily::Power, gamma};
}

UtilitySpec UtilitySpec::log() { return {UtilityFamily::Log, 0.0}; }

bool UtilitySpec::in_domain(double x) const noexcept {
  if (!std::isfinite(x)) return false;
  return family_ == UtilityFamily::Exponential || x > 0.0;
}

UtilityValue UtilitySpec::eval(double x) const {
  if (!in_domain(x)) {
    std::ostringstream os;
    os << to_string(family_) << " utility is undefined at x = " << x;
    throw DomainError(os.str());
  }
  switch (family_) {
    case UtilityFamily::Exponential: {
      double e = std::exp(-param_ * x);
      return {-e, param_ * e, -param_ * param_ * e};
    }
    case UtilityFamily::Power: {
      double g = param_;
      double xg = std::pow(x, g);
      return {xg / g, xg / x, (g - 1.0) * xg / (x * x)};
    }
    case UtilityFamily::Log:
      return {std::log(x), 1.0 / x, -1.0 / (x * x)};
  }
  return {};
}

UtilityValue utility_eval(const UtilitySpec& u, double x) { return u.eval(x); }

void GridSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("grid: " + msg); };
  if (nt < 4 || nx < 4 || ny < 4) fail("nt, nx and ny must all be >= 4");
  if (!(t0 > 0.0)) fail("t0 must be strictly positive");
  if (!(T > t0)) fail("T must exceed t0");
  if (!(x_max > x_min)) fail("x_max must exceed x_min");
  if (!(x_min > 0.0)) fail("x_min must be strictly positive");
  if (!(y_max > y_min)) fail("y_max must exceed y_min");
  for (double v : {t0, T, x_min, x_max, y_min, y_max})
    if (!std::isfinite(v)) fail("bounds must be finite");
}

bool GridSpec::contains(double t, double x, double y) const noexcept {
  auto inside = [](double v, double lo, double hi) {
    double slack = 1e-12 * std::max({1.0, std::abs(lo), std::abs(hi)});
    return v >= lo - slack && v <= hi + slack;
  };
  return inside(t, t0, T) && inside(x, x_min, x_max) && inside(y, y_min, y_max);
}

std::pair<double, double> factor_domain(double y0, double horizon) {
  double half = 5.0 * std::sqrt(horizon);
  return {y0 - half, y0 + half};
}

GridField::GridField(GridSpec grid) : grid_(grid), values_(grid.size(), 0.0) {}

double GridField::trilinear(double t, double x, double y) const {
  const auto& g = grid_;
  auto [k, wt] = locate(t, g.t0, g.dt(), g.t_nodes());
  auto [i, wx] = locate(x, g.x_min, g.dx(), g.nx);
  auto [j, wy] = locate(y, g.y_min, g.dy(), g.ny);
  // Exact node hits return the stored value without blending.
  auto blend = [](double a, double b, double w) {
    if (w == 0.0) return a;
    if (w == 1.0) return b;
    return a + w * (b - a);
  };
  auto plane = [&](int kk) {
    double lo = blend(at(kk, i, j), at(kk, i, j + 1), wy);
    double hi = blend(at(kk, i + 1, j), at(kk, i + 1, j + 1), wy);
    return blend(lo, hi, wx);
  };
  return blend(plane(k), plane(k + 1), wt);
}

double GridField::interpolate(double t, double x, double y) const {
  if (!grid_.contains(t, x, y)) {
    std::ostringstream os;
    os << "query (" << t << ", " << x << ", " << y << ") outside grid box";
    throw OutOfBoundsError(os.str());
  }
  return trilinear(t, x, y);
}

double GridField::interpolate_clamped(double t, double x, double y, bool& clamped) const {
  const auto& g = grid_;
  double tc = std::clamp(t, g.t0, g.T);
  double xc = std::clamp(x, g.x_min, g.x_max);
  double yc = std::clamp(y, g.y_min, g.y_max);
  clamped = !g.contains(t, x, y);
  return trilinear(tc, xc, yc);
}

double surface_interpolate(const ValueSurface& v, double t, double x, double y) {
  return v.field.interpolate(t, x, y);
}

PolicyField PolicyField::closed_form(std::string label, Rule rule) {
  PolicyField p;
  p.kind_ = Kind::ClosedForm;
  p.label_ = std::move(label);
  p.rule_ = std::move(rule);
  return p;
}

PolicyField PolicyField::grid(std::string label, GridField values) {
  PolicyField p;
  p.kind_ = Kind::Grid;
  p.label_ = std::move(label);
  p.grid_ = std::make_shared<const GridField>(std::move(values));
  return p;
}

PolicySample PolicyField::sample(double t, double x, double y) const {
  if (kind_ == Kind::ClosedForm) return {rule_(t, x, y), false};
  PolicySample s;
  s.pi = grid_->interpolate_clamped(t, x, y, s.clamped);
  return s;
}

const GridField& PolicyField::field() const {
  if (kind_ != Kind::Grid) throw PreconditionError("closed-form policy has no grid");
  return *grid_;
}

}  // namespace shiftlab
