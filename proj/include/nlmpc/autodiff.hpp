#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "nlmpc/errors.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc {

/// First-order forward-mode scalar: value + one directional derivative.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit promotion of constants
  Dual(double value, double deriv) : v(value), d(deriv) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  const double inv = 1.0 / b.v;
  return {a.v * inv, (a.d - a.v * b.d * inv) * inv};
}
inline Dual& operator+=(Dual& a, Dual b) { return a = a + b; }
inline Dual& operator-=(Dual& a, Dual b) { return a = a - b; }
inline Dual& operator*=(Dual& a, Dual b) { return a = a * b; }

inline Dual tanh(Dual a) {
  const double t = std::tanh(a.v);
  return {t, a.d * (1.0 - t * t)};
}
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, a.d * e};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual sqrt(Dual a) {
  const double s = std::sqrt(a.v);
  return {s, a.d * 0.5 / s};
}
inline Dual sin(Dual a) { return {std::sin(a.v), a.d * std::cos(a.v)}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -a.d * std::sin(a.v)}; }
inline Dual softplus(Dual a) {
  if (a.v > 30.0) return {a.v, a.d};
  return {std::log1p(std::exp(a.v)), a.d * sigmoid(a.v)};
}

/// Second-order forward-mode scalar carrying two directions and the cross term;
/// one evaluation yields an exact Hessian entry without a tape.
struct HyperDual {
  double v = 0.0, d1 = 0.0, d2 = 0.0, d12 = 0.0;

  HyperDual() = default;
  HyperDual(double value) : v(value) {}  // NOLINT
  HyperDual(double value, double g1, double g2, double cross)
      : v(value), d1(g1), d2(g2), d12(cross) {}
};

inline HyperDual operator+(HyperDual a, HyperDual b) {
  return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2, a.d12 + b.d12};
}
inline HyperDual operator-(HyperDual a, HyperDual b) {
  return {a.v - b.v, a.d1 - b.d1, a.d2 - b.d2, a.d12 - b.d12};
}
inline HyperDual operator-(HyperDual a) { return {-a.v, -a.d1, -a.d2, -a.d12}; }
inline HyperDual operator*(HyperDual a, HyperDual b) {
  return {a.v * b.v, a.d1 * b.v + a.v * b.d1, a.d2 * b.v + a.v * b.d2,
          a.d12 * b.v + a.d1 * b.d2 + a.d2 * b.d1 + a.v * b.d12};
}
inline HyperDual& operator+=(HyperDual& a, HyperDual b) { return a = a + b; }
inline HyperDual& operator-=(HyperDual& a, HyperDual b) { return a = a - b; }
inline HyperDual& operator*=(HyperDual& a, HyperDual b) { return a = a * b; }

/// chain rule for a univariate f with derivatives fp, fpp at a.v
inline HyperDual hd_chain(HyperDual a, double f, double fp, double fpp) {
  return {f, fp * a.d1, fp * a.d2, fp * a.d12 + fpp * a.d1 * a.d2};
}

inline HyperDual operator/(HyperDual a, HyperDual b) {
  const double iv = 1.0 / b.v;
  return a * hd_chain(b, iv, -iv * iv, 2.0 * iv * iv * iv);
}
inline HyperDual tanh(HyperDual a) {
  const double t = std::tanh(a.v);
  const double dp = 1.0 - t * t;
  return hd_chain(a, t, dp, -2.0 * t * dp);
}
inline HyperDual exp(HyperDual a) {
  const double e = std::exp(a.v);
  return hd_chain(a, e, e, e);
}
inline HyperDual log(HyperDual a) {
  const double iv = 1.0 / a.v;
  return hd_chain(a, std::log(a.v), iv, -iv * iv);
}
inline HyperDual sqrt(HyperDual a) {
  const double s = std::sqrt(a.v);
  return hd_chain(a, s, 0.5 / s, -0.25 / (s * a.v));
}
inline HyperDual sin(HyperDual a) {
  return hd_chain(a, std::sin(a.v), std::cos(a.v), -std::sin(a.v));
}
inline HyperDual cos(HyperDual a) {
  return hd_chain(a, std::cos(a.v), -std::sin(a.v), -std::cos(a.v));
}
inline HyperDual softplus(HyperDual a) {
  if (a.v > 30.0) return {a.v, a.d1, a.d2, a.d12};
  const double s = sigmoid(a.v);
  return hd_chain(a, std::log1p(std::exp(a.v)), s, s * (1.0 - s));
}

/// Exact gradient and Hessian of a scalar field via hyper-dual evaluations.
///
/// `f` must be callable as f(const std::vector<T>&) -> T for T = HyperDual.
/// The returned Hessian is symmetric by construction and symmetrized once more
/// so that H == H^T holds bitwise.
template <class F>
std::pair<Vec, Mat> scalar_hessian(F&& f, const Vec& x) {
  const int n = static_cast<int>(x.size());
  Vec grad = Vec::Zero(n);
  Mat hess = Mat::Zero(n, n);
  std::vector<HyperDual> xs(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      for (int k = 0; k < n; ++k) xs[k] = HyperDual(x[k], k == i ? 1.0 : 0.0, k == j ? 1.0 : 0.0, 0.0);
      const HyperDual out = f(xs);
      if (!std::isfinite(out.v) || !std::isfinite(out.d12))
        throw NumericError("scalar_hessian: non-finite value at entry (" + std::to_string(i) +
                           "," + std::to_string(j) + ")");
      if (j == i) grad[i] = out.d1;
      hess(i, j) = out.d12;
      hess(j, i) = out.d12;
    }
  }
  hess = 0.5 * (hess + hess.transpose()).eval();
  return {grad, hess};
}

}  // namespace nlmpc
