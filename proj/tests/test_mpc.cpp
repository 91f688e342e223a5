#include <catch2/catch_amalgamated.hpp>

#include "nlmpc/mpc.hpp"
#include "nlmpc/riccati.hpp"

using namespace nlmpc;

namespace {

/// Independent oracle: finite-horizon discounted LQR via backward dynamic
/// programming. Returns the optimal input sequence from x0 (unconstrained).
Mat finite_horizon_lqr(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P_term,
                       double gamma, int N, const Vec& x0) {
  std::vector<Mat> K(N);
  Mat P = P_term;
  for (int i = N - 1; i >= 0; --i) {
    const Mat BtP = B.transpose() * P;
    K[i] = gamma * ((R + gamma * BtP * B).ldlt().solve(BtP * A));
    P = Q + gamma * A.transpose() * P * A -
        gamma * A.transpose() * P * B * K[i];
    P = 0.5 * (P + P.transpose()).eval();
  }
  Mat useq(N, B.cols());
  Vec x = x0;
  for (int i = 0; i < N; ++i) {
    const Vec u = -K[i] * x;
    useq.row(i) = u.transpose();
    x = A * x + B * u;
  }
  return useq;
}

MpcProblemSpec lti_spec(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P,
                        double scale, int N, double gamma, double box = 1e6) {
  MpcProblemSpec spec;
  spec.N = N;
  spec.gamma = gamma;
  spec.Q = Q;
  spec.R = R;
  const int nx = static_cast<int>(A.rows()), nu = static_cast<int>(B.cols());
  spec.X = BoxSet(Vec::Constant(nx, -box), Vec::Constant(nx, box));
  spec.U = BoxSet(Vec::Constant(nu, -box), Vec::Constant(nu, box));
  spec.eta1 = 1.0;
  spec.eta2 = 10.0;
  spec.terminal = TerminalCost::quadratic(P, scale);
  spec.model = std::make_shared<LinearModel>(A, B);
  return spec;
}

SqpConfig one_pass_cfg() {
  SqpConfig cfg;
  cfg.n_steps = 1;
  cfg.lr = 1.0;
  cfg.eps_lr = 0.0;
  cfg.r_trust = kQpInf;
  return cfg;
}

MpcProblemSpec pendulum_demonstrator_spec(std::shared_ptr<const DynamicsModel> model) {
  MpcProblemSpec spec;
  spec.N = 5;
  spec.gamma = 1.0;
  spec.Q = 0.1 * Mat::Identity(2, 2);
  spec.R = 0.1 * Mat::Identity(1, 1);
  Vec xl(2), xu(2);
  xl << -M_PI, -2 * M_PI;
  xu << M_PI, 2 * M_PI;
  spec.X = BoxSet(xl, xu);
  spec.U = BoxSet(Vec::Constant(1, -0.64), Vec::Constant(1, 0.64));
  spec.eta1 = 100.0;
  spec.eta2 = 1000.0;
  PendulumModel nominal;
  Mat A, B;
  nominal.linearize(Vec::Zero(2), Vec::Zero(1), A, B);
  spec.terminal = TerminalCost::quadratic(dlqr_riccati(A, B, spec.Q, spec.R), 500.0);
  spec.model = std::move(model);
  return spec;
}

SqpConfig pendulum_demonstrator_cfg() {
  SqpConfig cfg;
  cfg.n_steps = 10;
  cfg.r_trust = 2.5;
  cfg.lr = 0.9;
  cfg.eps_lr = 0.2;
  return cfg;
}

}  // namespace

TEST_CASE("mpc_objective_eval examples") {
  const Mat one = Mat::Constant(1, 1, 1.0);
  MpcProblemSpec spec = lti_spec(one, one, one, one, one, 1.0, 1, 1.0);

  SECTION("equilibrium start with zero inputs costs nothing") {
    CHECK(mpc_objective_eval(spec, Vec::Zero(1), Mat::Zero(1, 1)) == 0.0);
  }
  SECTION("hand-evaluated stage plus terminal") {
    Mat u = Mat::Constant(1, 1, -0.5);
    CHECK(mpc_objective_eval(spec, Vec::Ones(1), u) == Catch::Approx(1.5));
  }
  SECTION("state-box violation enters through the closed-form slack") {
    MpcProblemSpec tight = spec;
    tight.X = BoxSet(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
    Mat u = Mat::Constant(1, 1, 1.0);  // drives x(1) = 2, violation 1
    const double with_box = mpc_objective_eval(tight, Vec::Ones(1), u);
    const double without = mpc_objective_eval(spec, Vec::Ones(1), u);
    CHECK(with_box - without == Catch::Approx(1.0 * 1.0 + 10.0 * 1.0));
  }
}

TEST_CASE("build_sqp_subproblem structure on LTI") {
  Mat A(2, 2), B(2, 1);
  A << 1.0, 0.1, 0.0, 1.0;
  B << 0.0, 0.1;
  Mat Q = Mat::Identity(2, 2), R = Mat::Constant(1, 1, 0.5), P = 2.0 * Mat::Identity(2, 2);
  MpcProblemSpec spec = lti_spec(A, B, Q, R, P, 3.0, 1, 0.9);

  std::vector<Vec> xref = {Vec::Zero(2), Vec::Zero(2)};
  std::vector<Vec> uref = {Vec::Zero(1)};
  SqpSubproblem sp = build_sqp_subproblem(spec, one_pass_cfg(), Vec::Zero(2), xref, uref);

  // exact condensed Hessian for N=1: 2(R + gamma*scale*B'PB) on the input block
  const Mat expect = 2.0 * (R + 0.9 * 3.0 * B.transpose() * P * B);
  CHECK(max_abs_diff(sp.qp.H.topLeftCorner(1, 1), expect) < 1e-12);
  // stationary at the origin: zero gradient on inputs, eta2 on slacks
  CHECK(sp.qp.g.head(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(sp.qp.g.tail(4).minCoeff() == Catch::Approx(10.0));
  QpSolution qs = qp_solve(sp.qp);
  REQUIRE(qs.status == QpStatus::solved);
  CHECK(qs.z.cwiseAbs().maxCoeff() < 1e-9);  // optimal du = 0, slacks 0

  SECTION("infinite trust radius leaves plain input bounds") {
    CHECK(sp.qp.lb[0] <= -1e5);
    CHECK(sp.qp.ub[0] >= 1e5);
  }
  SECTION("finite trust radius caps the input rows") {
    SqpConfig cfg = one_pass_cfg();
    cfg.r_trust = 0.25;
    SqpSubproblem tight = build_sqp_subproblem(spec, cfg, Vec::Zero(2), xref, uref);
    CHECK(tight.qp.lb[0] == -0.25);
    CHECK(tight.qp.ub[0] == 0.25);
  }
}

TEST_CASE("sqp matches the hand-derived one-step optimum") {
  const Mat one = Mat::Constant(1, 1, 1.0);
  MpcProblemSpec spec = lti_spec(one, one, one, one, one, 1.0, 1, 1.0);
  MpcSolution sol = sqp_solve(spec, one_pass_cfg(), Vec::Ones(1));
  REQUIRE(sol.status == MpcStatus::ok);
  CHECK(sol.u_seq(0, 0) == Catch::Approx(-0.5).margin(1e-8));
  CHECK(sol.cost == Catch::Approx(1.5).margin(1e-7));
}

TEST_CASE("sqp is exact on LTI systems after one linearization") {
  SECTION("scalar system, N=1 and N=5") {
    const Mat A = Mat::Constant(1, 1, 1.0), B = Mat::Constant(1, 1, 1.0);
    const Mat Q = Mat::Constant(1, 1, 1.0), R = Mat::Constant(1, 1, 1.0);
    const Mat P = Mat::Constant(1, 1, 1.0);
    for (int N : {1, 5}) {
      for (double gamma : {1.0, 0.9}) {
        MpcProblemSpec spec = lti_spec(A, B, Q, R, P, 1.0, N, gamma);
        const Vec x0 = Vec::Ones(1);
        MpcSolution sol = sqp_solve(spec, one_pass_cfg(), x0);
        REQUIRE(sol.status == MpcStatus::ok);
        const Mat u_ref = finite_horizon_lqr(A, B, Q, R, P, gamma, N, x0);
        CHECK((sol.u_seq - u_ref).cwiseAbs().maxCoeff() < 1e-6);
      }
    }
  }
  SECTION("two-state system, N=1 and N=5") {
    Mat A(2, 2), B(2, 1);
    A << 1.0, 0.1, -0.05, 0.95;
    B << 0.0, 0.1;
    Mat Q = Mat::Identity(2, 2);
    Mat R = Mat::Constant(1, 1, 0.2);
    Mat P(2, 2);
    P << 3.0, 0.5, 0.5, 2.0;
    Vec x0(2);
    x0 << 1.0, -0.5;
    for (int N : {1, 5}) {
      MpcProblemSpec spec = lti_spec(A, B, Q, R, P, 2.0, N, 1.0);
      MpcSolution sol = sqp_solve(spec, one_pass_cfg(), x0);
      REQUIRE(sol.status == MpcStatus::ok);
      const Mat u_ref = finite_horizon_lqr(A, B, Q, R, 2.0 * P, 1.0, N, x0);
      CHECK((sol.u_seq - u_ref).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("origin start yields zero sequence and zero cost") {
  const Mat one = Mat::Constant(1, 1, 1.0);
  MpcProblemSpec spec = lti_spec(one, one, one, one, one, 1.0, 3, 1.0);
  MpcSolution sol = sqp_solve(spec, one_pass_cfg(), Vec::Zero(1));
  CHECK(sol.u_seq.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(sol.cost < 1e-18);
}

TEST_CASE("input box feasibility and re-simulation consistency") {
  Rng rng(15);
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec spec = pendulum_demonstrator_spec(model);
  SqpConfig cfg = pendulum_demonstrator_cfg();
  for (int trial = 0; trial < 20; ++trial) {
    Vec x0(2);
    // include starts outside the state box
    x0 << rng.uniform(-4.0, 4.0), rng.uniform(-7.0, 7.0);
    MpcSolution sol = sqp_solve(spec, cfg, x0);
    for (int i = 0; i < spec.N; ++i) {
      CHECK(sol.u_seq(i, 0) >= spec.U.lower[0] - 1e-8);
      CHECK(sol.u_seq(i, 0) <= spec.U.upper[0] + 1e-8);
    }
    Vec x = x0;
    for (int i = 0; i <= spec.N; ++i) {
      CHECK((sol.x_pred.row(i).transpose() - x).cwiseAbs().maxCoeff() < 1e-10);
      if (i < spec.N) x = model->step(x, sol.u_seq.row(i).transpose());
    }
  }
}

TEST_CASE("trust region bounds each update") {
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec spec = pendulum_demonstrator_spec(model);
  SqpConfig cfg = pendulum_demonstrator_cfg();
  cfg.n_steps = 1;
  cfg.lr = 1.0;
  cfg.r_trust = 0.05;
  Vec x0(2);
  x0 << 0.5, 0.0;
  MpcSolution sol = sqp_solve(spec, cfg, x0);
  REQUIRE(sol.status == MpcStatus::ok);
  CHECK(sol.u_seq.cwiseAbs().maxCoeff() <= 0.05 + 1e-10);
}

TEST_CASE("mpc_policy basics") {
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec spec = pendulum_demonstrator_spec(model);
  SqpConfig cfg = pendulum_demonstrator_cfg();
  CHECK(mpc_policy(spec, cfg, Vec::Zero(2)).cwiseAbs().maxCoeff() < 1e-9);
  Vec x(2);
  x << 0.1, 0.0;
  const Vec u1 = mpc_policy(spec, cfg, x);
  const Vec u2 = mpc_policy(spec, cfg, x);
  CHECK(u1[0] == u2[0]);  // deterministic
  CHECK(u1[0] >= -0.64);
  CHECK(u1[0] <= 0.64);
}

TEST_CASE("pendulum demonstrator stabilizes from a small angle") {
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec spec = pendulum_demonstrator_spec(model);
  SqpConfig cfg = pendulum_demonstrator_cfg();
  Vec x0(2);
  x0 << 0.3, 0.0;
  Trajectory traj = rollout_closed_loop(*model, spec, cfg, x0, 80);
  CHECK(traj.states.row(80).norm() < 0.2);
  // equilibrium stays put
  Trajectory still = rollout_closed_loop(*model, spec, cfg, Vec::Zero(2), 10);
  CHECK(still.states.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(still.inputs.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sqp objective does not exceed the zero-input initialization (sampled)") {
  Rng rng(99);
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec spec = pendulum_demonstrator_spec(model);
  SqpConfig cfg = pendulum_demonstrator_cfg();
  Mat X0(40, 2);
  for (int r = 0; r < 40; ++r) {
    X0(r, 0) = rng.uniform(-M_PI, M_PI);
    X0(r, 1) = rng.uniform(-2 * M_PI, 2 * M_PI);
  }
  auto sols = sqp_solve_batch(spec, cfg, X0);
  int improved = 0;
  for (const auto& s : sols)
    if (s.cost <= s.iter_costs.front() + 1e-9) ++improved;
  CHECK(improved >= 38);  // 95% of 40
}

TEST_CASE("batch sqp equals single-state sqp") {
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec spec = pendulum_demonstrator_spec(model);
  SqpConfig cfg = pendulum_demonstrator_cfg();
  Mat X0(3, 2);
  X0 << 0.2, 0.0, -0.4, 0.5, 1.0, -1.0;
  auto batch = sqp_solve_batch(spec, cfg, X0);
  for (int r = 0; r < 3; ++r) {
    MpcSolution single = sqp_solve(spec, cfg, X0.row(r).transpose());
    CHECK((batch[r].u_seq - single.u_seq).cwiseAbs().maxCoeff() == 0.0);
    CHECK(batch[r].cost == single.cost);
  }
}

TEST_CASE("lyapunov terminal cost drives the sqp and respects taylor exactness") {
  // with V(x)=||x||^2 (zero net), the Taylor expansion is exact, so the MPC
  // equals the quadratic-terminal MPC with P=I and scale=alpha
  Rng rng(5);
  auto model = std::make_shared<PendulumModel>();
  auto V = std::make_shared<LyapunovFunction>();
  MlpLayer l;
  l.W = Mat::Zero(2 * 2, 2);
  l.b = Vec::Zero(4);
  l.act = Activation::linear;
  V->v_net.layers.push_back(l);
  V->l_ell = 1.0;
  V->beta_raw = softplus_inv(1.0);
  V->n_V = 2;

  MpcProblemSpec spec_l = pendulum_demonstrator_spec(model);
  spec_l.N = 1;
  spec_l.terminal = TerminalCost::lyapunov(V, 7.0);
  MpcProblemSpec spec_q = spec_l;
  spec_q.terminal = TerminalCost::quadratic(Mat::Identity(2, 2), 7.0);

  SqpConfig cfg = one_pass_cfg();
  Vec x0(2);
  x0 << 0.3, -0.2;
  MpcSolution a = sqp_solve(spec_l, cfg, x0);
  MpcSolution b = sqp_solve(spec_q, cfg, x0);
  REQUIRE(a.status == MpcStatus::ok);
  CHECK((a.u_seq - b.u_seq).cwiseAbs().maxCoeff() < 1e-7);
}
