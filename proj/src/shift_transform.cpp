#include "shiftlab/shift_transform.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "shiftlab/errors.hpp"

namespace shiftlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double checked(const TestFunction& fn, double t, double x, double y) {
  double v = fn(t, x, y);
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "test function is not finite at (t=" << t << ", x=" << x << ", y=" << y << ")";
    throw EvaluationError(os.str());
  }
  return v;
}

void require_scope(const BetaDerivatives& d, ScalingScope want, const char* op) {
  if (d.scope != want) {
    throw ScopeMismatchError(std::string(op) + " needs " + to_string(want) + " derivatives, got " +
                             to_string(d.scope));
  }
}

void require_nonzero(double v, const char* name, const char* op) {
  if (v == 0.0 || !std::isfinite(v))
    throw PreconditionError(std::string(op) + ": " + name + " must be finite and nonzero");
}

void require_point(const ShiftPoint& p) {
  if (!(p.beta > 0.0)) throw PreconditionError("shift parameter beta must be positive");
  if (!(p.t > 0.0)) throw PreconditionError("time t must be positive");
}

// V evaluated with the scoped argument dilated by b.
double scaled(const TestFunction& fn, const ShiftPoint& p, ScalingScope scope, double b) {
  switch (scope) {
    case ScalingScope::X: return checked(fn, p.t, b * p.x, p.y);
    case ScalingScope::Y:
    case ScalingScope::Joint: return checked(fn, p.t, p.x, b * p.y);
    case ScalingScope::T: return checked(fn, b * p.t, p.x, p.y);
  }
  return kNaN;
}

// Direct partial derivatives of the dilated function in (t, x, y). `scope`
// selects which argument carries the dilation (x -> beta x etc.).
struct Direct {
  const TestFunction& fn;
  ShiftPoint p;
  ScalingScope scope;
  double h;

  double eval(double t, double x, double y) const {
    switch (scope) {
      case ScalingScope::X: return checked(fn, t, p.beta * x, y);
      case ScalingScope::Y:
      case ScalingScope::Joint: return checked(fn, t, x, p.beta * y);
      case ScalingScope::T: return checked(fn, p.beta * t, x, y);
    }
    return kNaN;
  }
  double dx() const { return (eval(p.t, p.x + h, p.y) - eval(p.t, p.x - h, p.y)) / (2 * h); }
  double dy() const { return (eval(p.t, p.x, p.y + h) - eval(p.t, p.x, p.y - h)) / (2 * h); }
  double dt() const { return (eval(p.t + h, p.x, p.y) - eval(p.t - h, p.x, p.y)) / (2 * h); }
  double dxx() const {
    return (eval(p.t, p.x + h, p.y) - 2 * eval(p.t, p.x, p.y) + eval(p.t, p.x - h, p.y)) / (h * h);
  }
  double dyy() const {
    return (eval(p.t, p.x, p.y + h) - 2 * eval(p.t, p.x, p.y) + eval(p.t, p.x, p.y - h)) / (h * h);
  }
  double dxy() const {
    return (eval(p.t, p.x + h, p.y + h) - eval(p.t, p.x + h, p.y - h) -
            eval(p.t, p.x - h, p.y + h) + eval(p.t, p.x - h, p.y - h)) /
           (4 * h * h);
  }
};

// d^2/(d beta dy) of (b, y') -> V with the scoped argument dilated by b and
// y replaced by y'.
double mixed_beta_y(const TestFunction& fn, const ShiftPoint& p, ScalingScope scope, double h) {
  auto v = [&](double b, double y) {
    ShiftPoint q = p;
    q.y = y;
    return scaled(fn, q, scope, b);
  };
  return (v(p.beta + h, p.y + h) - v(p.beta + h, p.y - h) - v(p.beta - h, p.y + h) +
          v(p.beta - h, p.y - h)) /
         (4 * h * h);
}

double relative(double transform, double direct) {
  return std::abs(transform - direct) / (1.0 + std::abs(direct));
}

}  // namespace

std::string to_string(ScalingScope scope) {
  switch (scope) {
    case ScalingScope::X: return "X_SCALING";
    case ScalingScope::Y: return "Y_SCALING";
    case ScalingScope::T: return "T_SCALING";
    case ScalingScope::Joint: return "JOINT";
  }
  return "UNKNOWN";
}

BetaDerivatives beta_derivative_fd(const TestFunction& fn, const ShiftPoint& p,
                                   ScalingScope scope, double h) {
  if (!(h > 0.0 && h <= 0.1)) throw PreconditionError("beta step h must lie in (0, 0.1]");
  require_point(p);
  double up = scaled(fn, p, scope, p.beta + h);
  double mid = scaled(fn, p, scope, p.beta);
  double down = scaled(fn, p, scope, p.beta - h);
  return {(up - down) / (2 * h), (up - 2 * mid + down) / (h * h), scope};
}

double vx_from_beta(const BetaDerivatives& d, const ShiftPoint& p) {
  require_scope(d, ScalingScope::X, "vx_from_beta");
  require_nonzero(p.x, "x", "vx_from_beta");
  return p.beta * d.v_beta / p.x;
}

double vxx_from_beta(const BetaDerivatives& d, const ShiftPoint& p) {
  require_scope(d, ScalingScope::X, "vxx_from_beta");
  require_nonzero(p.x, "x", "vxx_from_beta");
  return p.beta * p.beta * d.v_betabeta / (p.x * p.x);
}

double vy_from_beta(const BetaDerivatives& d, const ShiftPoint& p) {
  require_scope(d, ScalingScope::Y, "vy_from_beta");
  require_nonzero(p.y, "y", "vy_from_beta");
  return p.beta * d.v_beta / p.y;
}

double vyy_from_beta(const BetaDerivatives& d, const ShiftPoint& p) {
  require_scope(d, ScalingScope::Y, "vyy_from_beta");
  require_nonzero(p.y, "y", "vyy_from_beta");
  return p.beta * p.beta * d.v_betabeta / (p.y * p.y);
}

double vbetay_from_vxy(double v_xy, const ShiftPoint& p) {
  if (!(p.beta > 0.0)) throw PreconditionError("vbetay_from_vxy: beta must be positive");
  return p.x * v_xy / p.beta;
}

double vyy_from_beta_mixed(const BetaDerivatives& d, double v_betay, const ShiftPoint& p) {
  require_scope(d, ScalingScope::Y, "vyy_from_beta_mixed");
  require_nonzero(p.y, "y", "vyy_from_beta_mixed");
  return p.beta * (p.beta * p.y * v_betay - d.v_beta) / (p.y * p.y);
}

double vxy_from_beta(const BetaDerivatives& d, const ShiftPoint& p) {
  require_scope(d, ScalingScope::Joint, "vxy_from_beta");
  require_nonzero(p.x, "x", "vxy_from_beta");
  require_nonzero(p.y, "y", "vxy_from_beta");
  return p.beta * (d.v_betabeta + d.v_beta) / (p.x * p.y);
}

double vt_from_beta(const BetaDerivatives& d, const ShiftPoint& p) {
  if (!(p.t > 0.0)) throw PreconditionError("vt_from_beta: t must be positive");
  require_scope(d, ScalingScope::T, "vt_from_beta");
  return p.beta * d.v_beta / p.t;
}

std::string to_string(IdentityId id) {
  switch (id) {
    case IdentityId::EQ1: return "EQ1";
    case IdentityId::EQ2: return "EQ2";
    case IdentityId::EQ3: return "EQ3";
    case IdentityId::EQ4: return "EQ4";
    case IdentityId::EQ5: return "EQ5";
    case IdentityId::EQ6: return "EQ6";
    case IdentityId::EQ9: return "EQ9";
    case IdentityId::VT: return "VT";
  }
  return "UNKNOWN";
}

const std::vector<IdentityId>& all_identities() {
  static const std::vector<IdentityId> ids{IdentityId::EQ1, IdentityId::EQ2, IdentityId::EQ3,
                                           IdentityId::EQ4, IdentityId::EQ5, IdentityId::EQ6,
                                           IdentityId::EQ9, IdentityId::VT};
  return ids;
}

IdentityId identity_from_string(std::string_view name) {
  for (IdentityId id : all_identities())
    if (to_string(id) == name) return id;
  throw ValidationError("unknown identity id: " + std::string(name));
}

IdentityReport check_identity(const TestFunction& fn, const ShiftPoint& p, IdentityId id,
                              double tolerance, double h) {
  if (!(tolerance > 0.0)) throw PreconditionError("tolerance must be positive");
  IdentityReport rep;
  rep.identity = id;
  rep.point = p;
  rep.h = h;
  rep.tolerance = tolerance;
  rep.alt_residual = kNaN;
  rep.scope_disagreement = kNaN;

  switch (id) {
    case IdentityId::EQ1: {
      rep.scope = ScalingScope::X;
      auto d = beta_derivative_fd(fn, p, rep.scope, h);
      rep.transform_side = vx_from_beta(d, p);
      rep.direct_side = Direct{fn, p, rep.scope, h}.dx();
      rep.alt_residual = relative(d.v_beta * p.x / p.beta, rep.direct_side);
      break;
    }
    case IdentityId::EQ2: {
      rep.scope = ScalingScope::X;
      auto d = beta_derivative_fd(fn, p, rep.scope, h);
      rep.transform_side = vxx_from_beta(d, p);
      rep.direct_side = Direct{fn, p, rep.scope, h}.dxx();
      rep.alt_residual = relative(p.x * p.x * d.v_betabeta / (p.beta * p.beta), rep.direct_side);
      break;
    }
    case IdentityId::EQ3: {
      rep.scope = ScalingScope::Y;
      auto d = beta_derivative_fd(fn, p, rep.scope, h);
      rep.transform_side = vyy_from_beta(d, p);
      rep.direct_side = Direct{fn, p, rep.scope, h}.dyy();
      rep.alt_residual = relative(p.y * p.y * d.v_betabeta / (p.beta * p.beta), rep.direct_side);
      break;
    }
    case IdentityId::EQ4: {
      rep.scope = ScalingScope::Y;
      auto d = beta_derivative_fd(fn, p, rep.scope, h);
      rep.transform_side = vy_from_beta(d, p);
      rep.direct_side = Direct{fn, p, rep.scope, h}.dy();
      break;
    }
    case IdentityId::EQ5: {
      // Here the beta side is the left-hand side V_beta,y itself.
      rep.scope = ScalingScope::X;
      require_point(p);
      rep.transform_side = mixed_beta_y(fn, p, rep.scope, h);
      rep.direct_side = vbetay_from_vxy(Direct{fn, p, rep.scope, h}.dxy(), p);
      break;
    }
    case IdentityId::EQ6: {
      rep.scope = ScalingScope::Y;
      auto d = beta_derivative_fd(fn, p, rep.scope, h);
      double v_betay = mixed_beta_y(fn, p, rep.scope, h);
      rep.transform_side = vyy_from_beta_mixed(d, v_betay, p);
      rep.direct_side = Direct{fn, p, rep.scope, h}.dyy();
      break;
    }
    case IdentityId::EQ9: {
      rep.scope = ScalingScope::Joint;
      auto d = beta_derivative_fd(fn, p, rep.scope, h);
      auto dx_scope = beta_derivative_fd(fn, p, ScalingScope::X, h);
      rep.transform_side = vxy_from_beta(d, p);
      rep.direct_side = Direct{fn, p, rep.scope, h}.dxy();
      rep.scope_disagreement = std::abs(dx_scope.v_beta - d.v_beta);
      break;
    }
    case IdentityId::VT: {
      rep.scope = ScalingScope::T;
      auto d = beta_derivative_fd(fn, p, rep.scope, h);
      rep.transform_side = vt_from_beta(d, p);
      rep.direct_side = Direct{fn, p, rep.scope, h}.dt();
      break;
    }
  }
  rep.residual = relative(rep.transform_side, rep.direct_side);
  rep.pass = rep.residual < tolerance;
  return rep;
}

double convergence_ratio(const TestFunction& fn, const ShiftPoint& p, IdentityId id, double h) {
  double coarse = check_identity(fn, p, id, 1.0, h).residual;
  double fine = check_identity(fn, p, id, 1.0, h / 2).residual;
  return coarse / fine;
}

NamedFunction named_function(std::string_view name) {
  using std::cos;
  using std::exp;
  using std::sin;
  if (name == "x2") return {"x2", [](double, double x, double) { return x * x; }, false};
  if (name == "xy") return {"xy", [](double, double x, double y) { return x * y; }, true};
  if (name == "exp_xy")
    return {"exp_xy", [](double, double x, double y) { return exp(x * y); }, true};
  if (name == "x_plus_y2")
    return {"x_plus_y2", [](double, double x, double y) { return x + y * y; }, false};
  if (name == "sin_x_cos_y")
    return {"sin_x_cos_y", [](double, double x, double y) { return sin(x) * cos(y); }, false};
  if (name == "sin_xy")
    return {"sin_xy", [](double, double x, double y) { return sin(x * y); }, true};
  if (name == "xy_squared")
    return {"xy_squared", [](double, double x, double y) { return x * y * x * y; }, true};
  if (name == "log1p_xy")
    return {"log1p_xy", [](double, double x, double y) { return std::log1p(x * y); }, true};
  if (name == "t2_exp_xy")
    return {"t2_exp_xy", [](double t, double x, double y) { return t * t * exp(x * y); }, true};
  if (name == "exp_t_x2")
    return {"exp_t_x2", [](double t, double x, double) { return exp(-t) * x * x; }, false};
  throw ValidationError("unknown test function: " + std::string(name));
}

std::vector<std::string> named_function_names() {
  return {"x2",     "xy",         "exp_xy",   "x_plus_y2", "sin_x_cos_y",
          "sin_xy", "xy_squared", "log1p_xy", "t2_exp_xy", "exp_t_x2"};
}

}  // namespace shiftlab
