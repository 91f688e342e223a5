// Test-only reference solvers for box-constrained QPs. These stay independent
// of the production solver so oracle agreement is meaningful.
#pragma once

#include <optional>

#include "nlmpc/rng.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc::test_oracles {

/// Exact active-set enumeration for  min 1/2 z'Hz + g'z  s.t. l <= z <= u
/// (H strictly convex, n small). Returns the unique KKT point.
inline std::optional<Vec> box_qp_enumerate(const Mat& H, const Vec& g, const Vec& l, const Vec& u) {
  const int n = static_cast<int>(H.rows());
  int patterns = 1;
  for (int i = 0; i < n; ++i) patterns *= 3;
  for (int code = 0; code < patterns; ++code) {
    int rem = code;
    std::vector<int> state(n);  // 0 free, 1 at lower, 2 at upper
    for (int i = 0; i < n; ++i) {
      state[i] = rem % 3;
      rem /= 3;
    }
    std::vector<int> free;
    Vec z(n);
    for (int i = 0; i < n; ++i) {
      if (state[i] == 0) free.push_back(i);
      else z[i] = state[i] == 1 ? l[i] : u[i];
    }
    const int nf = static_cast<int>(free.size());
    if (nf > 0) {
      Mat Hff(nf, nf);
      Vec rhs(nf);
      for (int a = 0; a < nf; ++a) {
        rhs[a] = -g[free[a]];
        for (int b = 0; b < nf; ++b) Hff(a, b) = H(free[a], free[b]);
        for (int i = 0; i < n; ++i)
          if (state[i] != 0) rhs[a] -= H(free[a], i) * z[i];
      }
      const Vec zf = Hff.ldlt().solve(rhs);
      for (int a = 0; a < nf; ++a) z[free[a]] = zf[a];
    }
    // primal feasibility of free vars
    bool ok = true;
    for (int i : free)
      if (z[i] < l[i] - 1e-10 || z[i] > u[i] + 1e-10) ok = false;
    if (!ok) continue;
    // dual feasibility at the bounds
    const Vec grad = H * z + g;
    for (int i = 0; i < n; ++i) {
      if (state[i] == 1 && grad[i] < -1e-9) ok = false;
      if (state[i] == 2 && grad[i] > 1e-9) ok = false;
    }
    if (ok) return z;
  }
  return std::nullopt;
}

/// Projected-Newton reference (Bertsekas-style) for larger box QPs; run with a
/// high iteration budget until the projected gradient vanishes.
inline Vec box_qp_projected_newton(const Mat& H, const Vec& g, const Vec& l, const Vec& u,
                                   int max_iter = 2000, double tol = 1e-12) {
  const int n = static_cast<int>(H.rows());
  Vec z = Vec::Zero(n).cwiseMax(l).cwiseMin(u);
  for (int it = 0; it < max_iter; ++it) {
    const Vec grad = H * z + g;
    std::vector<int> free;
    double pg = 0.0;  // projected gradient norm
    for (int i = 0; i < n; ++i) {
      const bool at_low = z[i] <= l[i] + 1e-12 && grad[i] > 0;
      const bool at_up = z[i] >= u[i] - 1e-12 && grad[i] < 0;
      if (!at_low && !at_up) {
        free.push_back(i);
        pg = std::max(pg, std::abs(grad[i]));
      }
    }
    if (pg < tol) break;
    const int nf = static_cast<int>(free.size());
    Mat Hff(nf, nf);
    Vec gf(nf);
    for (int a = 0; a < nf; ++a) {
      gf[a] = grad[free[a]];
      for (int b = 0; b < nf; ++b) Hff(a, b) = H(free[a], free[b]);
    }
    const Vec df = Hff.ldlt().solve(-gf);
    // backtracking on the projected objective
    auto obj = [&](const Vec& q) { return 0.5 * q.dot(H * q) + g.dot(q); };
    const double f0 = obj(z);
    double t = 1.0;
    Vec z_new = z;
    for (int ls = 0; ls < 60; ++ls) {
      z_new = z;
      for (int a = 0; a < nf; ++a) z_new[free[a]] += t * df[a];
      z_new = z_new.cwiseMax(l).cwiseMin(u);
      if (obj(z_new) <= f0 - 1e-12 * t) break;
      t *= 0.5;
    }
    if ((z_new - z).cwiseAbs().maxCoeff() < 1e-15) break;
    z = z_new;
  }
  return z;
}

/// strictly convex Hessian with eigenvalues in roughly [mu, mu + span]
inline Mat random_spd(int n, double mu, double span, Rng& rng) {
  Mat M(n, n);
  for (int i = 0; i < M.size(); ++i) M.data()[i] = rng.normal();
  Mat H = M.transpose() * M;
  const double top = H.selfadjointView<Eigen::Lower>().eigenvalues().maxCoeff();
  H *= span / std::max(top, 1e-12);
  H += mu * Mat::Identity(n, n);
  return 0.5 * (H + H.transpose());
}

}  // namespace nlmpc::test_oracles
