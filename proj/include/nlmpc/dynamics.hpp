#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nlmpc/errors.hpp"
#include "nlmpc/rng.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc {

/// Axis-aligned box; houses the state and input constraint sets.
struct BoxSet {
  Vec lower, upper;

  BoxSet() = default;
  BoxSet(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) { validate(); }

  void validate() const {
    require(lower.size() == upper.size(), "BoxSet: bound length mismatch");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
      require(lower[i] <= upper[i], "BoxSet: lower > upper at index " + std::to_string(i));
  }

  int dim() const { return static_cast<int>(lower.size()); }

  bool contains(const Vec& x, double tol = 0.0) const {
    for (Eigen::Index i = 0; i < lower.size(); ++i)
      if (x[i] < lower[i] - tol || x[i] > upper[i] + tol) return false;
    return true;
  }

  /// elementwise constraint violation max(0, lower-x, x-upper)
  Vec violation(const Vec& x) const {
    return (x - upper).cwiseMax(lower - x).cwiseMax(0.0);
  }

  /// per-row elementwise violation for a batch of row vectors
  Mat violation_batch(const Mat& X) const {
    Mat V = (X.rowwise() - upper.transpose()).cwiseMax((-X).rowwise() + lower.transpose());
    return V.cwiseMax(0.0);
  }

  Vec sample(Rng& rng) const {
    Vec x(lower.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(lower[i], upper[i]);
    return x;
  }

  BoxSet scaled(double factor) const { return BoxSet(factor * lower, factor * upper); }
};

struct PendulumParams {
  double m = 0.2;        // kg
  double l = 0.5;        // m
  double lambda_f = 0.1;  // N m s / rad
  double g = 9.81;       // m / s^2
  double dt = 0.01;      // s

  void validate() const {
    require(m > 0 && l > 0 && lambda_f > 0 && g > 0 && dt > 0,
            "PendulumParams: all parameters must be strictly positive");
  }
};

struct CarParams {
  double dt = 0.2;  // s
  void validate() const { require(dt > 0, "CarParams: dt must be positive"); }
};

/// continuous-time field (theta_dot, theta_ddot)
inline Vec pendulum_ode(const PendulumParams& p, const Vec& x, double u) {
  Vec f(2);
  f[0] = x[1];
  f[1] = (p.m * p.g * p.l * std::sin(x[0]) + u - p.lambda_f * x[1]) / (p.m * p.l * p.l);
  return f;
}

/// explicit Euler step
inline Vec pendulum_step(const PendulumParams& p, const Vec& x, double u) {
  return x + p.dt * pendulum_ode(p, x, u);
}

inline void pendulum_linearize(const PendulumParams& p, const Vec& x, Mat& A, Mat& B) {
  const double ml2 = p.m * p.l * p.l;
  A = Mat::Identity(2, 2);
  A(0, 1) += p.dt;
  A(1, 0) += p.dt * p.m * p.g * p.l * std::cos(x[0]) / ml2;
  A(1, 1) += p.dt * (-p.lambda_f / ml2);
  B = Mat::Zero(2, 1);
  B(1, 0) = p.dt / ml2;
}

/// continuous-time field (x_dot, y_dot, phi_dot) for inputs (v, omega)
inline Vec car_ode(const Vec& x, const Vec& u) {
  Vec f(3);
  f[0] = u[0] * std::cos(x[2]);
  f[1] = u[0] * std::sin(x[2]);
  f[2] = u[1];
  return f;
}

inline Vec car_step(const CarParams& p, const Vec& x, const Vec& u) {
  return x + p.dt * car_ode(x, u);
}

inline void car_linearize(const CarParams& p, const Vec& x, const Vec& u, Mat& A, Mat& B) {
  A = Mat::Identity(3, 3);
  A(0, 2) += p.dt * (-u[0] * std::sin(x[2]));
  A(1, 2) += p.dt * (u[0] * std::cos(x[2]));
  B = Mat::Zero(3, 2);
  B(0, 0) = p.dt * std::cos(x[2]);
  B(1, 0) = p.dt * std::sin(x[2]);
  B(2, 1) = p.dt;
}

/// One-step prediction model used by the MPC and for data generation.
/// Implementations are immutable after construction; all methods are pure.
struct DynamicsModel {
  virtual ~DynamicsModel() = default;
  virtual int nx() const = 0;
  virtual int nu() const = 0;
  virtual std::string name() const = 0;
  virtual Vec step(const Vec& x, const Vec& u) const = 0;
  virtual void linearize(const Vec& x, const Vec& u, Mat& A, Mat& B) const = 0;

  virtual void step_batch(const Mat& X, const Mat& U, Mat& out) const {
    out.resize(X.rows(), nx());
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      out.row(r) = step(X.row(r).transpose(), U.row(r).transpose()).transpose();
  }

  virtual void linearize_batch(const Mat& X, const Mat& U, std::vector<Mat>& A,
                               std::vector<Mat>& B) const {
    A.resize(X.rows());
    B.resize(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      linearize(X.row(r).transpose(), U.row(r).transpose(), A[r], B[r]);
  }
};

struct PendulumModel final : DynamicsModel {
  PendulumParams params;

  explicit PendulumModel(PendulumParams p = {}) : params(p) { params.validate(); }
  int nx() const override { return 2; }
  int nu() const override { return 1; }
  std::string name() const override { return "pendulum"; }
  Vec step(const Vec& x, const Vec& u) const override { return pendulum_step(params, x, u[0]); }
  void linearize(const Vec& x, const Vec&, Mat& A, Mat& B) const override {
    pendulum_linearize(params, x, A, B);
  }
};

struct CarModel final : DynamicsModel {
  CarParams params;

  explicit CarModel(CarParams p = {}) : params(p) { params.validate(); }
  int nx() const override { return 3; }
  int nu() const override { return 2; }
  std::string name() const override { return "car"; }
  Vec step(const Vec& x, const Vec& u) const override { return car_step(params, x, u); }
  void linearize(const Vec& x, const Vec& u, Mat& A, Mat& B) const override {
    car_linearize(params, x, u, A, B);
  }
};

/// spec-level entry point: (A, B) of any model at a reference point
inline std::pair<Mat, Mat> linearize_model(const DynamicsModel& model, const Vec& x, const Vec& u) {
  Mat A, B;
  model.linearize(x, u, A, B);
  return {A, B};
}

/// x+ = A x + B u; exact under its own linearization (testing and baselines)
struct LinearModel final : DynamicsModel {
  Mat A, B;

  LinearModel(Mat A_, Mat B_) : A(std::move(A_)), B(std::move(B_)) {
    require(A.rows() == A.cols() && B.rows() == A.rows(), "LinearModel: shape mismatch");
  }
  int nx() const override { return static_cast<int>(A.rows()); }
  int nu() const override { return static_cast<int>(B.cols()); }
  std::string name() const override { return "linear"; }
  Vec step(const Vec& x, const Vec& u) const override { return A * x + B * u; }
  void linearize(const Vec&, const Vec&, Mat& Aout, Mat& Bout) const override {
    Aout = A;
    Bout = B;
  }
};

}  // namespace nlmpc
