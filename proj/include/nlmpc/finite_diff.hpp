#pragma once

#include <functional>

#include "nlmpc/errors.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc {

/// Central-difference Jacobian of a vector field; testing oracle for the
/// analytic derivatives throughout the repo.
inline Mat finite_difference_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                                      double step) {
  require(step > 0.0, "finite_difference_jacobian: step must be positive");
  const Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  Vec xp = x, xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp[j] += step;
    xm[j] -= step;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * step);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return J;
}

inline Vec finite_difference_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                                      double step) {
  require(step > 0.0, "finite_difference_gradient: step must be positive");
  Vec g(x.size());
  Vec xp = x, xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp[j] += step;
    xm[j] -= step;
    g[j] = (f(xp) - f(xm)) / (2.0 * step);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return g;
}

/// Second-order central differences on the function values.
inline Mat finite_difference_hessian(const std::function<double(const Vec&)>& f, const Vec& x,
                                     double step) {
  require(step > 0.0, "finite_difference_hessian: step must be positive");
  const Eigen::Index n = x.size();
  Mat H(n, n);
  const double f0 = f(x);
  Vec xt = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xt[i] = x[i] + step;
    const double fp = f(xt);
    xt[i] = x[i] - step;
    const double fm = f(xt);
    xt[i] = x[i];
    H(i, i) = (fp - 2.0 * f0 + fm) / (step * step);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      xt[i] = x[i] + step;
      xt[j] = x[j] + step;
      const double fpp = f(xt);
      xt[j] = x[j] - step;
      const double fpm = f(xt);
      xt[i] = x[i] - step;
      const double fmm = f(xt);
      xt[j] = x[j] + step;
      const double fmp = f(xt);
      xt[i] = x[i];
      xt[j] = x[j];
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
    }
  }
  return H;
}

}  // namespace nlmpc
