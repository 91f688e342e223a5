#pragma once

#include <memory>
#include <vector>

#include "nlmpc/dynamics.hpp"
#include "nlmpc/lyapunov.hpp"
#include "nlmpc/qp.hpp"

namespace nlmpc {

/// Symmetric eigenvalue clip; keeps the terminal Hessian convex for the QP.
inline Mat psd_project(const Mat& H, double floor = 1e-9) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.transpose()));
  Vec ev = es.eigenvalues().cwiseMax(floor);
  const Mat Vc = es.eigenvectors();
  return Vc * ev.asDiagonal() * Vc.transpose();
}

struct TerminalCost {
  enum class Kind { quadratic, lyapunov };
  Kind kind = Kind::quadratic;
  Mat P;               // quadratic: cost = scale * x'Px
  double scale = 1.0;  // quadratic scale or Lyapunov alpha
  std::shared_ptr<const LyapunovFunction> V;

  static TerminalCost quadratic(Mat P, double scale) {
    TerminalCost t;
    t.kind = Kind::quadratic;
    t.P = std::move(P);
    t.scale = scale;
    return t;
  }
  static TerminalCost lyapunov(std::shared_ptr<const LyapunovFunction> V, double alpha) {
    TerminalCost t;
    t.kind = Kind::lyapunov;
    t.V = std::move(V);
    t.scale = alpha;
    return t;
  }

  double eval(const Vec& x) const {
    if (kind == Kind::quadratic) return scale * (x.transpose() * P * x)(0, 0);
    return scale * v_eval(*V, x);
  }

  Vec eval_batch(const Mat& X) const {
    if (kind == Kind::quadratic) return scale * quad_form_batch(X, P);
    VBatchEval ws;
    return scale * v_eval_batch(*V, X, ws);
  }
};

/// Soft-constrained discounted MPC over a one-step prediction model:
/// hard input box, state box relaxed through nonnegative slacks with
/// eta1 s's + eta2 ||s||_1 penalties.
struct MpcProblemSpec {
  int N = 1;
  double gamma = 1.0;
  Mat Q, R;
  BoxSet X, U;
  double eta1 = 100.0;
  double eta2 = 1000.0;
  bool discount_slack = false;  // printed form keeps the slack term undiscounted
  TerminalCost terminal;
  std::shared_ptr<const DynamicsModel> model;

  void validate() const {
    require(N >= 1, "MpcProblemSpec: N >= 1");
    require(gamma > 0 && gamma <= 1.0, "MpcProblemSpec: gamma in (0,1]");
    require(eta1 > 0 && eta2 >= 0, "MpcProblemSpec: eta1 > 0, eta2 >= 0");
    require(model != nullptr, "MpcProblemSpec: prediction model missing");
    require(Q.rows() == model->nx() && R.rows() == model->nu(), "MpcProblemSpec: weight shapes");
    require(X.dim() == model->nx() && U.dim() == model->nu(), "MpcProblemSpec: box shapes");
  }
};

struct SqpConfig {
  int n_steps = 18;
  double r_trust = kQpInf;
  double lr = 0.9;
  double eps_lr = 0.02;
  QpSettings qp;

  void validate() const {
    require(n_steps >= 1, "SqpConfig: n_steps >= 1");
    require(r_trust > 0, "SqpConfig: r_trust > 0");
    require(lr > 0 && lr <= 1.0, "SqpConfig: lr in (0,1]");
    require(eps_lr >= 0 && eps_lr < 1.0, "SqpConfig: eps_lr in [0,1)");
  }
};

enum class MpcStatus { ok, failed };

struct MpcSolution {
  Mat u_seq;   // N x n_u
  Mat x_pred;  // (N+1) x n_x, prediction model unrolled on u_seq
  double cost = 0.0;
  std::vector<double> iter_costs;  // objective before any update, then after each iteration
  MpcStatus status = MpcStatus::ok;
};

namespace detail {

inline void rollout_prediction_batch(const DynamicsModel& model, const Mat& X0,
                                     const std::vector<Mat>& U, std::vector<Mat>& Xs) {
  Xs.resize(U.size() + 1);
  Xs[0] = X0;
  for (size_t i = 0; i < U.size(); ++i) model.step_batch(Xs[i], U[i], Xs[i + 1]);
}

inline Vec mpc_objective_batch(const MpcProblemSpec& spec, const std::vector<Mat>& Xs,
                               const std::vector<Mat>& Us) {
  const Eigen::Index B = Xs[0].rows();
  Vec cost = Vec::Zero(B);
  double gpow = 1.0;
  for (int i = 0; i < spec.N; ++i) {
    cost += gpow * (quad_form_batch(Xs[i], spec.Q) + quad_form_batch(Us[i], spec.R));
    gpow *= spec.gamma;
  }
  cost += gpow * spec.terminal.eval_batch(Xs[spec.N]);
  double w = 1.0;
  for (int i = 0; i <= spec.N; ++i) {
    const Mat S = spec.X.violation_batch(Xs[i]);
    cost += (spec.discount_slack ? w : 1.0) *
            (spec.eta1 * S.cwiseProduct(S).rowwise().sum() + spec.eta2 * S.rowwise().sum());
    w *= spec.gamma;
  }
  return cost;
}

}  // namespace detail

/// Exact objective of (12) for a candidate input sequence: simulates the
/// prediction model and uses the closed-form optimal slack (the elementwise
/// box violation).
inline double mpc_objective_eval(const MpcProblemSpec& spec, const Vec& x0, const Mat& u_seq) {
  spec.validate();
  require(u_seq.rows() == spec.N && u_seq.cols() == spec.model->nu(),
          "mpc_objective_eval: u_seq shape mismatch");
  std::vector<Mat> Us(spec.N), Xs;
  Mat X0(1, x0.size());
  X0.row(0) = x0.transpose();
  for (int i = 0; i < spec.N; ++i) Us[i] = u_seq.row(i);
  detail::rollout_prediction_batch(*spec.model, X0, Us, Xs);
  return detail::mpc_objective_batch(spec, Xs, Us)[0];
}

/// gradient and half-Hessian of the (already scaled) terminal cost at x
struct TerminalTaylor {
  Vec grad;  // d(terminal)/dx
  Mat hess;  // 1/2 d^2(terminal)/dx^2, PSD-projected
};

inline TerminalTaylor terminal_taylor(const TerminalCost& term, const Vec& x) {
  TerminalTaylor t;
  if (term.kind == TerminalCost::Kind::quadratic) {
    t.grad = 2.0 * term.scale * (term.P * x);
    t.hess = term.scale * term.P;
    return t;
  }
  Mat X(1, x.size());
  X.row(0) = x.transpose();
  VTaylorBatch vt = v_taylor_batch(*term.V, X);
  t.grad = term.scale * vt.grads.row(0).transpose();
  t.hess = psd_project(0.5 * term.scale * vt.hess[0]);
  return t;
}

/// Condensed convex subproblem around a reference trajectory. Decision vector
/// z = (du(0..N-1), s(0..N)); dynamics are eliminated through the linearized
/// rollout dx(i) = M[i] du, which is exact because the reference states are
/// the model rollout of the reference inputs.
struct SqpSubproblem {
  QpProblem qp;
  std::vector<Mat> M;  // N+1 affine maps, each n_x x (N n_u)
  int n_du = 0;
  int n_slack = 0;
};

inline SqpSubproblem build_sqp_subproblem(const MpcProblemSpec& spec, double r_trust,
                                          const std::vector<Mat>& A, const std::vector<Mat>& B,
                                          const std::vector<Vec>& xref,
                                          const std::vector<Vec>& uref,
                                          const TerminalTaylor& term) {
  const int N = spec.N, nx = spec.model->nx(), nu = spec.model->nu();
  SqpSubproblem sp;
  sp.n_du = N * nu;
  sp.n_slack = (N + 1) * nx;
  const int nz = sp.n_du + sp.n_slack;

  sp.M.assign(N + 1, Mat::Zero(nx, sp.n_du));
  for (int i = 0; i < N; ++i) {
    sp.M[i + 1] = A[i] * sp.M[i];
    sp.M[i + 1].block(0, i * nu, nx, nu) += B[i];
  }

  Mat H = Mat::Zero(nz, nz);
  Vec g = Vec::Zero(nz);
  double gpow = 1.0;
  for (int i = 0; i < N; ++i) {
    H.block(i * nu, i * nu, nu, nu) += 2.0 * gpow * spec.R;
    g.segment(i * nu, nu) += 2.0 * gpow * (spec.R * uref[i]);
    if (i >= 1) {
      H.topLeftCorner(sp.n_du, sp.n_du) += 2.0 * gpow * sp.M[i].transpose() * spec.Q * sp.M[i];
      g.head(sp.n_du) += 2.0 * gpow * sp.M[i].transpose() * (spec.Q * xref[i]);
    }
    gpow *= spec.gamma;
  }
  H.topLeftCorner(sp.n_du, sp.n_du) += 2.0 * gpow * sp.M[N].transpose() * term.hess * sp.M[N];
  g.head(sp.n_du) += gpow * sp.M[N].transpose() * term.grad;

  double w = 1.0;
  for (int i = 0; i <= N; ++i) {
    const double wi = spec.discount_slack ? w : 1.0;
    for (int j = 0; j < nx; ++j) {
      H(sp.n_du + i * nx + j, sp.n_du + i * nx + j) += 2.0 * wi * spec.eta1;
      g[sp.n_du + i * nx + j] += wi * spec.eta2;
    }
    w *= spec.gamma;
  }

  const int m_in = N * nu;
  const int m_couple = 2 * (N + 1) * nx;
  const int m_pos = (N + 1) * nx;
  Mat Acon = Mat::Zero(m_in + m_couple + m_pos, nz);
  Vec lb(m_in + m_couple + m_pos), ub(m_in + m_couple + m_pos);

  int row = 0;
  for (int i = 0; i < N; ++i) {
    for (int k = 0; k < nu; ++k) {
      Acon(row, i * nu + k) = 1.0;
      lb[row] = std::max(spec.U.lower[k] - uref[i][k], -r_trust);
      ub[row] = std::min(spec.U.upper[k] - uref[i][k], r_trust);
      ++row;
    }
  }
  for (int i = 0; i <= N; ++i) {
    for (int j = 0; j < nx; ++j) {
      // x(i)_j - s(i)_j <= ub_j
      Acon.block(row, 0, 1, sp.n_du) = sp.M[i].row(j);
      Acon(row, sp.n_du + i * nx + j) = -1.0;
      lb[row] = -kQpInf;
      ub[row] = spec.X.upper[j] - xref[i][j];
      ++row;
      // x(i)_j + s(i)_j >= lb_j
      Acon.block(row, 0, 1, sp.n_du) = sp.M[i].row(j);
      Acon(row, sp.n_du + i * nx + j) = 1.0;
      lb[row] = spec.X.lower[j] - xref[i][j];
      ub[row] = kQpInf;
      ++row;
    }
  }
  for (int i = 0; i < m_pos; ++i) {
    Acon(row, sp.n_du + i) = 1.0;
    lb[row] = 0.0;
    ub[row] = kQpInf;
    ++row;
  }

  sp.qp.H = 0.5 * (H + H.transpose());
  sp.qp.g = std::move(g);
  sp.qp.A = std::move(Acon);
  sp.qp.lb = std::move(lb);
  sp.qp.ub = std::move(ub);
  return sp;
}

/// Convenience overload with model linearization and terminal expansion done
/// here (single-point use; the batch driver precomputes them).
inline SqpSubproblem build_sqp_subproblem(const MpcProblemSpec& spec, const SqpConfig& cfg,
                                          const Vec& x0, const std::vector<Vec>& xref,
                                          const std::vector<Vec>& uref) {
  spec.validate();
  require(static_cast<int>(xref.size()) == spec.N + 1 &&
              static_cast<int>(uref.size()) == spec.N,
          "build_sqp_subproblem: reference lengths");
  require((xref[0] - x0).norm() < 1e-12, "build_sqp_subproblem: xref[0] must equal x0");
  std::vector<Mat> A(spec.N), B(spec.N);
  for (int i = 0; i < spec.N; ++i) spec.model->linearize(xref[i], uref[i], A[i], B[i]);
  return build_sqp_subproblem(spec, cfg.r_trust, A, B, xref, uref,
                              terminal_taylor(spec.terminal, xref[spec.N]));
}

/// Trust-region SQP, run in lockstep over a batch of initial states so that
/// network evaluations amortize into dense batched passes. A state whose
/// inner QP fails is finalized with the zero input sequence and flagged.
inline std::vector<MpcSolution> sqp_solve_batch(const MpcProblemSpec& spec, const SqpConfig& cfg,
                                                const Mat& X0) {
  spec.validate();
  cfg.validate();
  const int B = static_cast<int>(X0.rows());
  const int N = spec.N, nx = spec.model->nx(), nu = spec.model->nu();
  require(X0.cols() == nx, "sqp_solve_batch: state dimension mismatch");

  std::vector<Mat> U(N, Mat::Zero(B, nu));
  std::vector<Mat> Xs;
  detail::rollout_prediction_batch(*spec.model, X0, U, Xs);
  std::vector<char> failed(B, 0);
  std::vector<Vec> warm_z(B), warm_y(B);
  std::vector<std::vector<double>> iter_costs(B);
  {
    const Vec c0 = detail::mpc_objective_batch(spec, Xs, U);
    for (int r = 0; r < B; ++r) iter_costs[r].push_back(c0[r]);
  }

  double lr = cfg.lr;
  std::vector<std::vector<Mat>> A(N), Bm(N);
  std::vector<Vec> xref(N + 1), uref(N);
  for (int it = 0; it < cfg.n_steps; ++it) {
    for (int i = 0; i < N; ++i) spec.model->linearize_batch(Xs[i], U[i], A[i], Bm[i]);

    std::vector<TerminalTaylor> taylor(B);
    if (spec.terminal.kind == TerminalCost::Kind::lyapunov) {
      const VTaylorBatch vt = v_taylor_batch(*spec.terminal.V, Xs[N]);
      for (int r = 0; r < B; ++r) {
        taylor[r].grad = spec.terminal.scale * vt.grads.row(r).transpose();
        taylor[r].hess = psd_project(0.5 * spec.terminal.scale * vt.hess[r]);
      }
    } else {
      for (int r = 0; r < B; ++r) {
        taylor[r].grad = 2.0 * spec.terminal.scale * (spec.terminal.P * Xs[N].row(r).transpose());
        taylor[r].hess = spec.terminal.scale * spec.terminal.P;
      }
    }

    std::vector<Mat> Ar(N), Br(N);
    for (int r = 0; r < B; ++r) {
      if (failed[r]) continue;
      for (int i = 0; i < N; ++i) {
        Ar[i] = A[i][r];
        Br[i] = Bm[i][r];
        xref[i] = Xs[i].row(r).transpose();
        uref[i] = U[i].row(r).transpose();
      }
      xref[N] = Xs[N].row(r).transpose();
      SqpSubproblem sp = build_sqp_subproblem(spec, cfg.r_trust, Ar, Br, xref, uref, taylor[r]);
      const QpSolution qs =
          qp_solve(sp.qp, cfg.qp, warm_z[r].size() ? &warm_z[r] : nullptr,
                   warm_y[r].size() ? &warm_y[r] : nullptr);
      if (qs.status != QpStatus::solved) {
        failed[r] = 1;
        for (int i = 0; i < N; ++i) U[i].row(r).setZero();
        continue;
      }
      warm_z[r] = qs.z;
      warm_y[r] = qs.y;
      for (int i = 0; i < N; ++i)
        U[i].row(r) += lr * qs.z.segment(i * nu, nu).transpose();
    }
    detail::rollout_prediction_batch(*spec.model, X0, U, Xs);
    lr *= (1.0 - cfg.eps_lr);
    const Vec c = detail::mpc_objective_batch(spec, Xs, U);
    for (int r = 0; r < B; ++r) iter_costs[r].push_back(c[r]);
  }

  const Vec final_cost = detail::mpc_objective_batch(spec, Xs, U);
  std::vector<MpcSolution> out(B);
  for (int r = 0; r < B; ++r) {
    MpcSolution& s = out[r];
    s.u_seq = Mat::Zero(N, nu);
    s.x_pred = Mat::Zero(N + 1, nx);
    for (int i = 0; i < N; ++i) s.u_seq.row(i) = U[i].row(r);
    for (int i = 0; i <= N; ++i) s.x_pred.row(i) = Xs[i].row(r);
    s.cost = final_cost[r];
    s.iter_costs = std::move(iter_costs[r]);
    s.status = failed[r] ? MpcStatus::failed : MpcStatus::ok;
  }
  return out;
}

inline MpcSolution sqp_solve(const MpcProblemSpec& spec, const SqpConfig& cfg, const Vec& x0) {
  Mat X0(1, x0.size());
  X0.row(0) = x0.transpose();
  return sqp_solve_batch(spec, cfg, X0)[0];
}

/// the receding-horizon action: first element of the optimal sequence,
/// zero vector when the solver fails
inline Vec mpc_policy(const MpcProblemSpec& spec, const SqpConfig& cfg, const Vec& x) {
  const MpcSolution s = sqp_solve(spec, cfg, x);
  if (s.status == MpcStatus::failed) return Vec::Zero(spec.model->nu());
  return s.u_seq.row(0).transpose();
}

struct Trajectory {
  Mat states;  // (T+1) x n_x
  Mat inputs;  // T x n_u
  Vec v_vals;  // (T+1), zero when no V is attached
  Vec dv_vals; // T, V(x_{t+1}) - V(x_t)
  Vec violation_norm;  // (T+1)
  std::vector<MpcStatus> solver_status;  // T
};

/// Closed loop on the true plant (which may differ from the prediction
/// model). Lockstep over a batch of starts. `record_V` overrides the V used
/// for the trajectory diagnostics; defaults to the terminal cost's V.
inline std::vector<Trajectory> rollout_closed_loop_batch(
    const DynamicsModel& plant, const MpcProblemSpec& spec, const SqpConfig& cfg, const Mat& X0,
    int T, const LyapunovFunction* record_V = nullptr) {
  require(T >= 1, "rollout_closed_loop: T >= 1");
  const int B = static_cast<int>(X0.rows());
  const LyapunovFunction* V = record_V;
  if (!V && spec.terminal.kind == TerminalCost::Kind::lyapunov) V = spec.terminal.V.get();

  std::vector<Trajectory> trajs(B);
  for (auto& t : trajs) {
    t.states = Mat::Zero(T + 1, plant.nx());
    t.inputs = Mat::Zero(T, plant.nu());
    t.v_vals = Vec::Zero(T + 1);
    t.dv_vals = Vec::Zero(T);
    t.violation_norm = Vec::Zero(T + 1);
    t.solver_status.resize(T, MpcStatus::ok);
  }
  Mat X = X0;
  for (int step = 0; step <= T; ++step) {
    Vec v;
    if (V) {
      VBatchEval ws;
      v = v_eval_batch(*V, X, ws);
    }
    for (int r = 0; r < B; ++r) {
      trajs[r].states.row(step) = X.row(r);
      trajs[r].violation_norm[step] = spec.X.violation(X.row(r).transpose()).norm();
      if (V) trajs[r].v_vals[step] = v[r];
    }
    if (step == T) break;
    const std::vector<MpcSolution> sols = sqp_solve_batch(spec, cfg, X);
    Mat Ustep(B, plant.nu());
    for (int r = 0; r < B; ++r) {
      Ustep.row(r) = sols[r].status == MpcStatus::failed ? Mat::Zero(1, plant.nu())
                                                         : Mat(sols[r].u_seq.row(0));
      trajs[r].inputs.row(step) = Ustep.row(r);
      trajs[r].solver_status[step] = sols[r].status;
    }
    Mat Xn;
    plant.step_batch(X, Ustep, Xn);
    X = std::move(Xn);
  }
  for (int r = 0; r < B; ++r)
    for (int step = 0; step < T; ++step)
      trajs[r].dv_vals[step] = trajs[r].v_vals[step + 1] - trajs[r].v_vals[step];
  return trajs;
}

inline Trajectory rollout_closed_loop(const DynamicsModel& plant, const MpcProblemSpec& spec,
                                      const SqpConfig& cfg, const Vec& x0, int T,
                                      const LyapunovFunction* record_V = nullptr) {
  Mat X0(1, x0.size());
  X0.row(0) = x0.transpose();
  return rollout_closed_loop_batch(plant, spec, cfg, X0, T, record_V)[0];
}

}  // namespace nlmpc
