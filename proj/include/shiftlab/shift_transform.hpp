#pragma once

// Shift-parameter derivative identities.
//
// A function V(t, x, y) is re-read as a function of a dilation parameter
// beta acting on one argument: V(t, beta x, y), V(t, x, beta y) or
// V(beta t, x, y). Derivatives in (x, y, t) are then expressed through the
// first and second beta-derivatives. Each beta-derivative record carries the
// scope it was taken in; identities refuse records from the wrong scope.

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace shiftlab {

using TestFunction = std::function<double(double t, double x, double y)>;

enum class ScalingScope { X, Y, T, Joint };

std::string to_string(ScalingScope scope);

struct ShiftPoint {
  double beta = 1.0;
  double t = 1.0;
  double x = 1.0;
  double y = 1.0;

  double g() const noexcept { return beta * x; }
  double f() const noexcept { return beta * y; }
};

struct BetaDerivatives {
  double v_beta = 0.0;
  double v_betabeta = 0.0;
  ScalingScope scope = ScalingScope::X;
};

inline constexpr double kDefaultStep = 1e-4;
inline constexpr double kDefaultTolerance = 1e-6;

// Central differences of beta -> V with the scoped argument dilated.
// Joint records hold the y-dilation derivatives, which are the ones the
// combined cross-derivative identity consumes.
BetaDerivatives beta_derivative_fd(const TestFunction& fn, const ShiftPoint& p,
                                   ScalingScope scope, double h = kDefaultStep);

// V_x = beta V_beta / x
double vx_from_beta(const BetaDerivatives& d, const ShiftPoint& p);
// V_xx = beta^2 V_betabeta / x^2
double vxx_from_beta(const BetaDerivatives& d, const ShiftPoint& p);
// V_y = beta V_beta / y
double vy_from_beta(const BetaDerivatives& d, const ShiftPoint& p);
// V_yy = beta^2 V_betabeta / y^2
double vyy_from_beta(const BetaDerivatives& d, const ShiftPoint& p);
// V_beta,y = x V_xy / beta
double vbetay_from_vxy(double v_xy, const ShiftPoint& p);
// V_yy = beta (beta y V_beta,y - V_beta) / y^2, with y-dilation V_beta.
double vyy_from_beta_mixed(const BetaDerivatives& d, double v_betay, const ShiftPoint& p);
// V_xy = beta (V_betabeta + V_beta) / (x y). Only exact for functions of x*y.
double vxy_from_beta(const BetaDerivatives& d, const ShiftPoint& p);
// V_t = beta V_beta / t
double vt_from_beta(const BetaDerivatives& d, const ShiftPoint& p);

enum class IdentityId { EQ1, EQ2, EQ3, EQ4, EQ5, EQ6, EQ9, VT };

std::string to_string(IdentityId id);
IdentityId identity_from_string(std::string_view name);
const std::vector<IdentityId>& all_identities();

struct IdentityReport {
  IdentityId identity = IdentityId::EQ1;
  ShiftPoint point;
  ScalingScope scope = ScalingScope::X;
  double h = kDefaultStep;
  double tolerance = kDefaultTolerance;
  double transform_side = 0.0;  // from beta finite differences
  double direct_side = 0.0;     // from (t, x, y) finite differences
  double residual = 0.0;        // |transform - direct| / (1 + |direct|)
  // Ratio-form identities (EQ1, EQ2, EQ3) are also evaluated with the ratio
  // inverted; for EQ2 that inverted form is x^2 V_bb / beta^2. NaN otherwise.
  double alt_residual = 0.0;
  // EQ9 only: |V_beta(x-dilation) - V_beta(y-dilation)|. NaN otherwise.
  double scope_disagreement = 0.0;
  bool pass = false;
};

IdentityReport check_identity(const TestFunction& fn, const ShiftPoint& p, IdentityId id,
                              double tolerance = kDefaultTolerance, double h = kDefaultStep);

// residual(h) / residual(h / 2) for one identity.
double convergence_ratio(const TestFunction& fn, const ShiftPoint& p, IdentityId id, double h);

struct NamedFunction {
  std::string name;
  TestFunction fn;
  bool product_form = false;  // depends on (x, y) only through x*y
};

// x2, xy, exp_xy, x_plus_y2, sin_x_cos_y, sin_xy, xy_squared, log1p_xy,
// t2_exp_xy, exp_t_x2. Throws ValidationError for unknown names.
NamedFunction named_function(std::string_view name);
std::vector<std::string> named_function_names();

}  // namespace shiftlab
