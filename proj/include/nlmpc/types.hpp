#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "nlmpc/errors.hpp"

namespace nlmpc {

// Row-major dense matrices; serialized artifacts store entries in the same order.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline bool all_finite(const Mat& m) { return m.allFinite(); }
inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void check_finite(const Mat& m, const char* where) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + where);
}
inline void check_finite(const Vec& v, const char* where) {
  if (!v.allFinite()) throw NumericError(std::string("non-finite values in ") + where);
}

inline double softplus(double x) {
  // log(1+exp(x)) without overflow for large |x|
  return x > 30.0 ? x : std::log1p(std::exp(x));
}
inline double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// max over symmetric difference, 0 for equal shapes/values
inline double max_abs_diff(const Mat& a, const Mat& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

/// rows of x^T M x for a batch of row vectors
inline Vec quad_form_batch(const Mat& X, const Mat& M) {
  return (X * M).cwiseProduct(X).rowwise().sum();
}

}  // namespace nlmpc
