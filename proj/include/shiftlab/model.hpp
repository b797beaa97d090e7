#pragma once

// Market, utility, grid and surface types shared by the solvers.

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace shiftlab {

// Coefficient values at one factor level.
struct Coefficients {
  double r = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  double b = 0.0;
};

enum class CoefficientFamily { Constant, Affine, Table };

std::string to_string(CoefficientFamily family);

// intercept + slope * y for each coefficient.
struct AffineCoefficients {
  Coefficients intercept;
  Coefficients slope;
};

// r(y), mu(y), sigma(y), b(y) and the correlation rho between the asset and
// factor Brownian motions. Immutable after construction.
//
// The affine family clamps y into [y_lo, y_hi] before evaluating so that
// every coefficient stays bounded. The table family interpolates linearly
// between nodes and rejects y outside the tabulated range.
class MarketModel {
 public:
  static MarketModel constant(const Coefficients& c, double rho, double sigma_min = 1e-6);
  static MarketModel affine(const AffineCoefficients& coeffs, double y_lo, double y_hi,
                            double rho, double sigma_min = 1e-6);
  static MarketModel table(std::vector<double> y_nodes, std::vector<Coefficients> values,
                           double rho, double sigma_min = 1e-6);

  Coefficients at(double y) const;

  // Same as at() but clamps y into the tabulated range instead of throwing.
  // Returns true through `clamped` when clamping happened.
  Coefficients at_clamped(double y, bool& clamped) const;

  CoefficientFamily family() const noexcept { return family_; }
  double rho() const noexcept { return rho_; }
  double sigma_min() const noexcept { return sigma_min_; }

  // Range over which the model is defined; infinite for constant and affine.
  double y_lo() const noexcept { return y_lo_; }
  double y_hi() const noexcept { return y_hi_; }

 private:
  MarketModel() = default;
  Coefficients evaluate(double y) const;
  void check_sigma(const Coefficients& c, double y) const;

  CoefficientFamily family_ = CoefficientFamily::Constant;
  double rho_ = 0.0;
  double sigma_min_ = 1e-6;
  Coefficients constant_;
  AffineCoefficients affine_;
  double y_lo_ = 0.0;
  double y_hi_ = 0.0;
  std::vector<double> table_y_;
  std::vector<Coefficients> table_values_;
};

Coefficients eval_coefficients(const MarketModel& model, double y);

enum class UtilityFamily { Exponential, Power, Log };

std::string to_string(UtilityFamily family);

struct UtilityValue {
  double u = 0.0;
  double du = 0.0;
  double d2u = 0.0;
};

// Terminal utility. Exponential: -exp(-alpha x). Power: x^gamma / gamma with
// gamma in (0, 1). Log: ln x.
class UtilitySpec {
 public:
  static UtilitySpec exponential(double alpha);
  static UtilitySpec power(double gamma);
  static UtilitySpec log();

  UtilityFamily family() const noexcept { return family_; }
  double parameter() const noexcept { return param_; }

  // False for x <= 0 under power and log.
  bool in_domain(double x) const noexcept;

  UtilityValue eval(double x) const;
  double value(double x) const { return eval(x).u; }

 private:
  UtilitySpec(UtilityFamily f, double p) : family_(f), param_(p) {}
  UtilityFamily family_;
  double param_;
};

UtilityValue utility_eval(const UtilitySpec& u, double x);

// Uniform (t, x, y) grid. The t axis has nt steps, so nt + 1 time nodes.
struct GridSpec {
  double t0 = 0.0;
  double T = 1.0;
  int nt = 4;
  double x_min = 0.0;
  double x_max = 1.0;
  int nx = 4;
  double y_min = 0.0;
  double y_max = 1.0;
  int ny = 4;

  // Throws ValidationError when an invariant fails.
  void validate() const;

  int t_nodes() const noexcept { return nt + 1; }
  double dt() const noexcept { return (T - t0) / nt; }
  double dx() const noexcept { return (x_max - x_min) / (nx - 1); }
  double dy() const noexcept { return (y_max - y_min) / (ny - 1); }
  double t_at(int k) const noexcept { return k == nt ? T : t0 + k * dt(); }
  double x_at(int i) const noexcept { return i == nx - 1 ? x_max : x_min + i * dx(); }
  double y_at(int j) const noexcept { return j == ny - 1 ? y_max : y_min + j * dy(); }
  std::size_t size() const noexcept {
    return static_cast<std::size_t>(t_nodes()) * nx * ny;
  }

  bool contains(double t, double x, double y) const noexcept;
};

// Factor band y0 +- 5 sqrt(T - t0) for unit factor volatility.
std::pair<double, double> factor_domain(double y0, double horizon);

// Real values on every node of a GridSpec, stored row-major in (t, x, y).
class GridField {
 public:
  GridField() = default;
  explicit GridField(GridSpec grid);

  const GridSpec& grid() const noexcept { return grid_; }

  double& at(int k, int i, int j) { return values_[index(k, i, j)]; }
  double at(int k, int i, int j) const { return values_[index(k, i, j)]; }

  std::size_t index(int k, int i, int j) const noexcept {
    return (static_cast<std::size_t>(k) * grid_.nx + i) * grid_.ny + j;
  }

  const std::vector<double>& values() const noexcept { return values_; }

  // Trilinear interpolation; throws OutOfBoundsError outside the box.
  double interpolate(double t, double x, double y) const;

  // Trilinear interpolation after clamping the query into the box.
  double interpolate_clamped(double t, double x, double y, bool& clamped) const;

 private:
  double trilinear(double t, double x, double y) const;

  GridSpec grid_;
  std::vector<double> values_;
};

// Sampled value function with the name of the solver that produced it.
struct ValueSurface {
  GridField field;
  std::string producer;

  const GridSpec& grid() const noexcept { return field.grid(); }
};

double surface_interpolate(const ValueSurface& v, double t, double x, double y);

struct PolicySample {
  double pi = 0.0;
  bool clamped = false;
};

// Amount invested in the risky asset as a function of (t, x, y): either a
// closed-form rule or a grid with clamped trilinear interpolation.
class PolicyField {
 public:
  using Rule = std::function<double(double t, double x, double y)>;

  enum class Kind { ClosedForm, Grid };

  static PolicyField closed_form(std::string label, Rule rule);
  static PolicyField grid(std::string label, GridField values);

  Kind kind() const noexcept { return kind_; }
  const std::string& label() const noexcept { return label_; }

  PolicySample sample(double t, double x, double y) const;
  double operator()(double t, double x, double y) const { return sample(t, x, y).pi; }

  // Only valid for Kind::Grid.
  const GridField& field() const;

 private:
  PolicyField() = default;
  Kind kind_ = Kind::ClosedForm;
  std::string label_;
  Rule rule_;
  std::shared_ptr<const GridField> grid_;
};

}  // namespace shiftlab
