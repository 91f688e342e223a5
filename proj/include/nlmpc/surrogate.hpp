#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "nlmpc/adam.hpp"
#include "nlmpc/datasets.hpp"
#include "nlmpc/dynamics.hpp"
#include "nlmpc/mlp.hpp"

namespace nlmpc {

enum class SurrogateKind { pendulum_greybox, car_greybox };

inline const char* to_string(SurrogateKind k) {
  return k == SurrogateKind::pendulum_greybox ? "pendulum_greybox" : "car_greybox";
}
inline SurrogateKind surrogate_kind_from_string(const std::string& s) {
  if (s == "pendulum_greybox") return SurrogateKind::pendulum_greybox;
  if (s == "car_greybox") return SurrogateKind::car_greybox;
  throw ContractViolation("unknown surrogate kind: " + s);
}

/// Grey-box one-step models.
///
/// pendulum: the net maps (theta, theta_dot, u) to an angular-acceleration
/// estimate; x+ = x + dt (theta_dot, net(x,u)).
/// car: the net maps (sin phi, cos phi) to the six entries of the 3x2 body
/// Jacobian J; x+ = x + dt J u, affine in u for fixed x.
struct SurrogateModel final : DynamicsModel {
  SurrogateKind kind = SurrogateKind::pendulum_greybox;
  Mlp net;
  double dt = 0.01;

  int nx() const override { return kind == SurrogateKind::pendulum_greybox ? 2 : 3; }
  int nu() const override { return kind == SurrogateKind::pendulum_greybox ? 1 : 2; }
  std::string name() const override { return to_string(kind); }

  Vec step(const Vec& x, const Vec& u) const override {
    Mat X(1, nx()), U(1, nu());
    X.row(0) = x.transpose();
    U.row(0) = u.transpose();
    Mat out;
    step_batch(X, U, out);
    return out.row(0).transpose();
  }

  void step_batch(const Mat& X, const Mat& U, Mat& out) const override {
    require(X.cols() == nx() && U.cols() == nu(), "surrogate_step: dimension mismatch");
    MlpBatchCache cache;
    if (kind == SurrogateKind::pendulum_greybox) {
      Mat in(X.rows(), 3);
      in.col(0) = X.col(0);
      in.col(1) = X.col(1);
      in.col(2) = U.col(0);
      const Mat& acc = mlp_forward_batch(net, in, cache);
      out.resize(X.rows(), 2);
      out.col(0) = X.col(0) + dt * X.col(1);
      out.col(1) = X.col(1) + dt * acc.col(0);
    } else {
      Mat feat(X.rows(), 2);
      feat.col(0) = X.col(2).array().sin();
      feat.col(1) = X.col(2).array().cos();
      const Mat& J = mlp_forward_batch(net, feat, cache);  // rows: (J00 J01 J10 J11 J20 J21)
      out.resize(X.rows(), 3);
      for (int a = 0; a < 3; ++a)
        out.col(a) = X.col(a) +
                     dt * (J.col(2 * a).cwiseProduct(U.col(0)) + J.col(2 * a + 1).cwiseProduct(U.col(1)));
    }
  }

  void linearize(const Vec& x, const Vec& u, Mat& A, Mat& B) const override {
    Mat X(1, nx()), U(1, nu());
    X.row(0) = x.transpose();
    U.row(0) = u.transpose();
    std::vector<Mat> As, Bs;
    linearize_batch(X, U, As, Bs);
    A = As[0];
    B = Bs[0];
  }

  void linearize_batch(const Mat& X, const Mat& U, std::vector<Mat>& A,
                       std::vector<Mat>& B) const override {
    const Eigen::Index n = X.rows();
    A.resize(n);
    B.resize(n);
    MlpBatchCache cache;
    if (kind == SurrogateKind::pendulum_greybox) {
      Mat in(n, 3);
      in.col(0) = X.col(0);
      in.col(1) = X.col(1);
      in.col(2) = U.col(0);
      mlp_forward_batch(net, in, cache);
      // scalar output: one backward pass yields every row's jacobian
      Mat J = mlp_vjp_batch(net, cache, Mat::Ones(n, 1));
      for (Eigen::Index r = 0; r < n; ++r) {
        A[r] = Mat::Identity(2, 2);
        A[r](0, 1) += dt;
        A[r](1, 0) += dt * J(r, 0);
        A[r](1, 1) += dt * J(r, 1);
        B[r] = Mat::Zero(2, 1);
        B[r](1, 0) = dt * J(r, 2);
      }
    } else {
      Mat feat(n, 2);
      feat.col(0) = X.col(2).array().sin();
      feat.col(1) = X.col(2).array().cos();
      const Mat J = mlp_forward_batch(net, feat, cache);
      // d(features)/d(phi) = (cos phi, -sin phi): one forward dual pass
      Mat featdot(n, 2);
      featdot.col(0) = feat.col(1);
      featdot.col(1) = -feat.col(0);
      MlpDualCache dc;
      const Mat Jdot = mlp_jvp_batch(net, cache, featdot, dc);
      for (Eigen::Index r = 0; r < n; ++r) {
        A[r] = Mat::Identity(3, 3);
        B[r] = Mat::Zero(3, 2);
        for (int a = 0; a < 3; ++a) {
          A[r](a, 2) += dt * (Jdot(r, 2 * a) * U(r, 0) + Jdot(r, 2 * a + 1) * U(r, 1));
          B[r](a, 0) = dt * J(r, 2 * a);
          B[r](a, 1) = dt * J(r, 2 * a + 1);
        }
      }
    }
  }
};

/// spec-level alias
inline Vec surrogate_step(const SurrogateModel& m, const Vec& x, const Vec& u) {
  return m.step(x, u);
}

/// pendulum: 3 tanh hidden layers, no biases; car: one tanh hidden layer,
/// biases drawn standard normal. Weights Xavier-uniform in both cases.
inline SurrogateModel make_surrogate(SurrogateKind kind, const std::vector<int>& hidden, double dt,
                                     Rng& rng) {
  SurrogateModel m;
  m.kind = kind;
  m.dt = dt;
  if (kind == SurrogateKind::pendulum_greybox)
    m.net = make_mlp(3, hidden, 1, Activation::tanh, BiasInit::none, rng);
  else
    m.net = make_mlp(2, hidden, 6, Activation::tanh, BiasInit::standard_normal, rng);
  return m;
}

struct SurrogateTrainConfig {
  int epochs = 300;
  double lr = 0.01;
  int batch = 700;
  double train_frac = 0.7;
};

struct TrainCurves {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
  double final_val_mse = 0.0;
};

namespace detail {

/// MSE over predicted next states and its gradient cotangent w.r.t. the net
/// output, for the rows listed in `idx`.
inline double surrogate_batch_loss(const SurrogateModel& m, const Mat& X, const Mat& U,
                                   const Mat& XP, MlpBatchCache& cache, Mat& net_in,
                                   Mat& d_net_out, Mat* U_out = nullptr) {
  const Eigen::Index bsz = X.rows();
  const int nx = static_cast<int>(X.cols());
  Mat pred;
  if (m.kind == SurrogateKind::pendulum_greybox) {
    net_in.resize(bsz, 3);
    net_in.col(0) = X.col(0);
    net_in.col(1) = X.col(1);
    net_in.col(2) = U.col(0);
    const Mat& acc = mlp_forward_batch(m.net, net_in, cache);
    pred.resize(bsz, 2);
    pred.col(0) = X.col(0) + m.dt * X.col(1);
    pred.col(1) = X.col(1) + m.dt * acc.col(0);
    const Mat err = pred - XP;
    d_net_out.resize(bsz, 1);
    d_net_out.col(0) = (2.0 * m.dt / static_cast<double>(bsz * nx)) * err.col(1);
    return err.squaredNorm() / static_cast<double>(bsz * nx);
  }
  net_in.resize(bsz, 2);
  net_in.col(0) = X.col(2).array().sin();
  net_in.col(1) = X.col(2).array().cos();
  const Mat& J = mlp_forward_batch(m.net, net_in, cache);
  pred.resize(bsz, 3);
  for (int a = 0; a < 3; ++a)
    pred.col(a) = X.col(a) +
                  m.dt * (J.col(2 * a).cwiseProduct(U.col(0)) + J.col(2 * a + 1).cwiseProduct(U.col(1)));
  const Mat err = pred - XP;
  d_net_out.resize(bsz, 6);
  const double scale = 2.0 * m.dt / static_cast<double>(bsz * 3);
  for (int a = 0; a < 3; ++a) {
    d_net_out.col(2 * a) = scale * err.col(a).cwiseProduct(U.col(0));
    d_net_out.col(2 * a + 1) = scale * err.col(a).cwiseProduct(U.col(1));
  }
  if (U_out) *U_out = U;
  return err.squaredNorm() / static_cast<double>(bsz * 3);
}

}  // namespace detail

/// Adam on the one-step MSE; per-epoch shuffling with the supplied generator,
/// last partial batch dropped, 7:3 train/validation split by default.
inline TrainCurves train_surrogate(SurrogateModel& m, const Dataset& data,
                                   const SurrogateTrainConfig& cfg, Rng& rng) {
  require(!data.empty(), "train_surrogate: empty dataset");
  require(data.provenance == Provenance::random, "train_surrogate: expects random transitions");
  require(static_cast<int>(data.size()) >= cfg.batch, "train_surrogate: dataset smaller than batch");

  const Mat X = data.states(), U = data.inputs(), XP = data.next_states();
  const Eigen::Index n = X.rows();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  // one split shuffle, fixed for all epochs
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
  const Eigen::Index n_train = static_cast<Eigen::Index>(cfg.train_frac * static_cast<double>(n));
  std::vector<Eigen::Index> train_idx(order.begin(), order.begin() + n_train);
  std::vector<Eigen::Index> val_idx(order.begin() + n_train, order.end());

  auto gather = [&](const Mat& src, const std::vector<Eigen::Index>& idx, Eigen::Index lo,
                    Eigen::Index hi) {
    Mat out(hi - lo, src.cols());
    for (Eigen::Index r = lo; r < hi; ++r) out.row(r - lo) = src.row(idx[r]);
    return out;
  };

  Vec params;
  mlp_get_params(m.net, params);
  AdamState adam = AdamState::init(params.size(), cfg.lr);
  TrainCurves curves;
  MlpBatchCache cache;
  Mat net_in, d_out;

  const Eigen::Index batches = std::max<Eigen::Index>(1, n_train / cfg.batch);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (Eigen::Index i = n_train - 1; i > 0; --i)
      std::swap(train_idx[i], train_idx[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
    double epoch_loss = 0.0;
    for (Eigen::Index b = 0; b < batches; ++b) {
      const Eigen::Index lo = b * cfg.batch;
      const Eigen::Index hi = std::min(lo + cfg.batch, n_train);
      const Mat Xb = gather(X, train_idx, lo, hi);
      const Mat Ub = gather(U, train_idx, lo, hi);
      const Mat XPb = gather(XP, train_idx, lo, hi);
      const double loss = detail::surrogate_batch_loss(m, Xb, Ub, XPb, cache, net_in, d_out);
      if (!std::isfinite(loss)) throw NumericError("train_surrogate: loss became non-finite");
      MlpGrads grads;
      grads.set_zero(m.net);
      mlp_vjp_batch(m.net, cache, d_out, &grads);
      Vec g;
      mlp_grads_to_vec(m.net, grads, g);
      adam_step(params, g, adam);
      mlp_set_params(m.net, params);
      epoch_loss += loss;
    }
    curves.train_mse.push_back(epoch_loss / static_cast<double>(batches));
    if (!val_idx.empty()) {
      const Mat Xv = gather(X, val_idx, 0, static_cast<Eigen::Index>(val_idx.size()));
      const Mat Uv = gather(U, val_idx, 0, static_cast<Eigen::Index>(val_idx.size()));
      const Mat XPv = gather(XP, val_idx, 0, static_cast<Eigen::Index>(val_idx.size()));
      curves.val_mse.push_back(detail::surrogate_batch_loss(m, Xv, Uv, XPv, cache, net_in, d_out));
    }
  }
  curves.final_val_mse = curves.val_mse.empty() ? curves.train_mse.back() : curves.val_mse.back();
  return curves;
}

}  // namespace nlmpc
