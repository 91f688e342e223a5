#pragma once

#include "nlmpc/errors.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc {

/// Fixed-point solution of the discrete algebraic Riccati equation
///   P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA,
/// iterated until successive iterates differ by < tol in max norm.
inline Mat dlqr_riccati(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                        double tol = 1e-10, int max_iter = 200000) {
  const Eigen::Index n = A.rows();
  require(A.cols() == n, "dlqr_riccati: A must be square");
  require(B.rows() == n, "dlqr_riccati: B row count must match A");
  require(Q.rows() == n && Q.cols() == n, "dlqr_riccati: Q shape mismatch");
  require(R.rows() == B.cols() && R.cols() == B.cols(), "dlqr_riccati: R shape mismatch");
  Mat P = Q;
  for (int it = 0; it < max_iter; ++it) {
    const Mat BtP = B.transpose() * P;
    const Mat S = R + BtP * B;
    const Mat K = S.ldlt().solve(BtP * A);  // (R + B'PB)^-1 B'PA
    Mat Pn = Q + A.transpose() * P * A - A.transpose() * P * B * K;
    Pn = 0.5 * (Pn + Pn.transpose()).eval();
    const double diff = max_abs_diff(Pn, P);
    P = std::move(Pn);
    if (!all_finite(P)) throw DivergenceError("dlqr_riccati: iterate became non-finite");
    if (diff < tol) return P;
  }
  throw DivergenceError("dlqr_riccati: no convergence within iteration cap");
}

/// Max-norm residual of the Riccati fixed point at P.
inline double riccati_residual(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                               const Mat& P) {
  const Mat BtP = B.transpose() * P;
  const Mat S = R + BtP * B;
  const Mat K = S.ldlt().solve(BtP * A);
  const Mat rhs = Q + A.transpose() * P * A - A.transpose() * P * B * K;
  return max_abs_diff(P, rhs);
}

/// LQR state-feedback gain for the converged P.
inline Mat dlqr_gain(const Mat& A, const Mat& B, const Mat& R, const Mat& P) {
  const Mat BtP = B.transpose() * P;
  return (R + BtP * B).ldlt().solve(BtP * A);
}

}  // namespace nlmpc
