#include <catch2/catch_amalgamated.hpp>

#include "nlmpc/verify.hpp"

using namespace nlmpc;

namespace {

LyapunovFunction norm_squared_V(int nx) {
  LyapunovFunction V;
  MlpLayer l;
  l.W = Mat::Zero(nx, nx);
  l.b = Vec::Zero(nx);
  l.act = Activation::linear;
  V.v_net.layers.push_back(l);
  V.l_ell = 1.0;
  V.beta_raw = softplus_inv(1.0);
  V.n_V = 1;
  return V;
}

}  // namespace

TEST_CASE("verify_dataset classification") {
  LyapunovFunction V = norm_squared_V(2);
  SafeLevel ls = SafeLevel::from_value(1.0);

  SECTION("decreasing tuples inside are all verified") {
    Dataset ds;
    ds.plant = "test";
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
      TransitionTuple t;
      t.x = Vec(2);
      t.x << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
      t.x_plus = Vec::Zero(2);
      t.u = Vec::Zero(1);
      ds.tuples.push_back(t);
    }
    VerificationReport rep = verify_dataset(V, ls, ds, 0.99);
    CHECK(rep.n_inside == 50);
    CHECK(rep.n_verified == 50);
    CHECK(rep.n_not_verified == 0);
    CHECK(rep.pct_verified == 100.0);
  }
  SECTION("boundary dV = 0 counts as verified") {
    Dataset ds;
    ds.plant = "test";
    TransitionTuple t;
    t.x = Vec(2);
    t.x << 0.5, 0.0;  // V = 0.25
    t.x_plus = Vec(2);
    t.x_plus << 0.5 * std::sqrt(0.99), 0.0;  // V(x+) = lambda V(x) exactly up to fp
    t.u = Vec::Zero(1);
    ds.tuples.push_back(t);
    VerificationReport rep = verify_dataset(V, ls, ds, 0.99);
    CHECK(rep.n_verified + rep.n_not_verified == rep.n_inside);
    // construct an exact tie through lambda = 1 and x+ = x
    TransitionTuple tie;
    tie.x = t.x;
    tie.x_plus = t.x;
    tie.u = Vec::Zero(1);
    Dataset ds2;
    ds2.plant = "test";
    ds2.tuples.push_back(tie);
    VerificationReport rep2 = verify_dataset(V, ls, ds2, 1.0);
    CHECK(rep2.n_verified == 1);
  }
  SECTION("internal consistency and the inside-denominator flag") {
    Dataset ds;
    ds.plant = "test";
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      TransitionTuple t;
      t.x = Vec(2);
      t.x << rng.uniform(-2, 2), rng.uniform(-2, 2);
      t.x_plus = 1.05 * t.x;
      t.u = Vec::Zero(1);
      ds.tuples.push_back(t);
    }
    VerificationReport rep = verify_dataset(V, ls, ds, 0.99);
    CHECK(rep.n_verified + rep.n_not_verified == rep.n_inside);
    long inside = 0;
    for (const auto& t : ds.tuples)
      if (v_eval(V, t.x) <= ls.value()) ++inside;
    CHECK(rep.n_inside == inside);
    CHECK(rep.pct_verified == Catch::Approx(100.0 * rep.n_verified / 200.0));

    VerificationReport rel = verify_dataset(V, ls, ds, 0.99, false, Mat(), Mat(), true);
    CHECK(rel.pct_not_verified ==
          Catch::Approx(100.0 * rel.n_not_verified / static_cast<double>(rel.n_inside)));
  }
}

TEST_CASE("rejection_sample_safe_states") {
  LyapunovFunction V = norm_squared_V(2);
  BoxSet X(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  SECTION("huge level set degenerates to plain box sampling") {
    Rng rng(5);
    Mat S = rejection_sample_safe_states(V, SafeLevel::from_value(1e9), X, 200, rng, 500);
    CHECK(S.rows() == 200);
    for (int r = 0; r < 200; ++r) CHECK(X.contains(S.row(r).transpose()));
  }
  SECTION("members satisfy both membership tests exactly") {
    Rng rng(6);
    SafeLevel ls = SafeLevel::from_value(0.4);
    Mat S = rejection_sample_safe_states(V, ls, X, 300, rng, 100000);
    for (int r = 0; r < 300; ++r) {
      CHECK(X.contains(S.row(r).transpose()));
      CHECK(v_eval(V, S.row(r).transpose()) <= ls.value());
    }
  }
  SECTION("tiny level set exceeds the proposal cap") {
    Rng rng(7);
    CHECK_THROWS_AS(
        rejection_sample_safe_states(V, SafeLevel::from_value(1e-12), X, 10, rng, 200),
        DivergenceError);
  }
  SECTION("n must be positive and cap at least n") {
    Rng rng(8);
    CHECK_THROWS_AS(rejection_sample_safe_states(V, SafeLevel::from_value(1.0), X, 0, rng, 10),
                    ContractViolation);
    CHECK_THROWS_AS(rejection_sample_safe_states(V, SafeLevel::from_value(1.0), X, 10, rng, 5),
                    ContractViolation);
  }
}

TEST_CASE("stability_safety_metrics") {
  BoxSet X(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  auto make_traj = [](const Mat& states) {
    Trajectory t;
    t.states = states;
    t.inputs = Mat::Zero(states.rows() - 1, 1);
    t.v_vals = Vec::Zero(states.rows());
    t.dv_vals = Vec::Zero(states.rows() - 1);
    t.violation_norm = Vec::Zero(states.rows());
    t.solver_status.assign(states.rows() - 1, MpcStatus::ok);
    return t;
  };

  SECTION("identically zero trajectories are stable and safe") {
    std::vector<Trajectory> trajs(3, make_traj(Mat::Zero(10, 2)));
    TaskMetrics m = stability_safety_metrics(trajs, X);
    CHECK(m.stability_rate == 1.0);
    CHECK(m.safety_rate == 1.0);
  }
  SECTION("terminal norm at 0.3 fails the threshold") {
    Mat s = Mat::Zero(5, 2);
    s(4, 0) = 0.3;
    std::vector<Trajectory> trajs{make_traj(s)};
    TaskMetrics m = stability_safety_metrics(trajs, X);
    CHECK(m.stability_rate == 0.0);
    CHECK(m.safety_rate == 0.0);
  }
  SECTION("excluded dimensions are dropped from the terminal norm") {
    Mat s = Mat::Zero(5, 2);
    s(4, 1) = 0.9;  // large but excluded
    std::vector<Trajectory> trajs{make_traj(s)};
    TaskMetrics m = stability_safety_metrics(trajs, X, 0.2, {1});
    CHECK(m.stability_rate == 1.0);
  }
  SECTION("constraint violation along the way spoils safety only") {
    Mat s = Mat::Zero(6, 2);
    s(2, 0) = 1.5;  // leaves the box mid-trajectory
    std::vector<Trajectory> trajs{make_traj(s)};
    TaskMetrics m = stability_safety_metrics(trajs, X);
    CHECK(m.stability_rate == 1.0);
    CHECK(m.safety_rate == 0.0);
    CHECK(m.safety_rate <= m.stability_rate);
  }
}

TEST_CASE("alpha_bar_lower_bound examples") {
  // exact up to the round-off of (1 - lambda) itself
  CHECK(alpha_bar_lower_bound(1.0, 0.1, 0.99) == Catch::Approx(1000.0).margin(1e-9));
  CHECK(alpha_bar_lower_bound(0.7, 0.7, 0.0) == 1.0);
  CHECK(alpha_bar_lower_bound(2.0, 1.0, 0.5) == 4.0);
  CHECK_THROWS_AS(alpha_bar_lower_bound(1.0, 0.1, 1.0), NumericError);
}

TEST_CASE("model_error_bound examples and monotonicity") {
  CHECK(model_error_bound(0.99, 1.0, 1.0, 1, 1.0) == Catch::Approx(0.1).margin(1e-15));
  CHECK(model_error_bound(0.5, 2.0, 1.5, 2, 0.0) == 0.0);
  // doubling L_fx with N=1 halves mu_bar
  const double a = model_error_bound(0.9, 1.0, 1.0, 1, 1.0);
  const double b = model_error_bound(0.9, 1.0, 2.0, 1, 1.0);
  CHECK(b == Catch::Approx(a / 2.0));
  // strictly decreasing in N, L_V, L_fx (>1); increasing in l_s
  CHECK(model_error_bound(0.9, 1.0, 1.5, 2, 1.0) < model_error_bound(0.9, 1.0, 1.5, 1, 1.0));
  CHECK(model_error_bound(0.9, 2.0, 1.5, 1, 1.0) < model_error_bound(0.9, 1.0, 1.5, 1, 1.0));
  CHECK(model_error_bound(0.9, 1.0, 2.5, 1, 1.0) < model_error_bound(0.9, 1.0, 1.5, 1, 1.0));
  CHECK(model_error_bound(0.9, 1.0, 1.5, 1, 2.0) > model_error_bound(0.9, 1.0, 1.5, 1, 1.0));
}

TEST_CASE("performance_bound examples and monotonicity") {
  SECTION("perfect model and value function collapse to delta J") {
    CHECK(performance_bound(0.0, 0.9, 3, 1.0, 5.0, 2.0, 1.1, 0.0, 0.5, 7.0, 0.0) ==
          Catch::Approx(0.5 * 7.0));
  }
  SECTION("N=1 decomposition: no stage mismatch, terminal term only") {
    const double gamma = 0.8, alpha = 3.0, L_V = 2.0, mu = 0.1, delta = 1.0;
    const double expected = (1.0 + 1.0 / delta) * gamma * alpha * L_V * mu * mu;
    CHECK(performance_bound(0.0, gamma, 1, 7.0, alpha, L_V, 1.5, mu, delta, 0.0, 0.0) ==
          Catch::Approx(expected));
  }
  SECTION("value-error term") {
    // gamma=0.5, N=1, eps=1 -> 2*0.5/(1-0.5) = 2
    CHECK(performance_bound(1.0, 0.5, 1, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0) ==
          Catch::Approx(2.0));
  }
  SECTION("gamma = 1 with eps > 0 is flagged infinite") {
    CHECK(std::isinf(performance_bound(0.1, 1.0, 2, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0)));
    CHECK(performance_bound(0.0, 1.0, 2, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 3.0, 0.0) ==
          Catch::Approx(3.0));
  }
  SECTION("nondecreasing in mu and eps on a grid") {
    double prev = -1.0;
    for (double mu : {0.0, 0.05, 0.1, 0.2, 0.5}) {
      const double v = performance_bound(0.2, 0.9, 3, 1.5, 4.0, 2.0, 1.2, mu, 0.7, 1.0, 0.0);
      CHECK(v >= prev);
      prev = v;
    }
    prev = -1.0;
    for (double eps : {0.0, 0.1, 0.5, 1.0, 2.0}) {
      const double v = performance_bound(eps, 0.9, 3, 1.5, 4.0, 2.0, 1.2, 0.1, 0.7, 1.0, 0.0);
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("lipschitz estimators record their method") {
  Rng rng(2);
  PendulumModel pm;
  Mat X(20, 2), U(20, 1);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1, 1);
  for (int i = 0; i < U.size(); ++i) U.data()[i] = rng.uniform(-0.5, 0.5);
  LipschitzEstimate e = estimate_state_lipschitz(pm, X, U);
  CHECK(e.value >= 1.0);  // discrete-time Jacobian is near identity
  CHECK_FALSE(e.method.empty());

  LyapunovFunction V = norm_squared_V(2);
  LipschitzEstimate lv = estimate_v_upper_bound(V, X);
  CHECK(lv.value == Catch::Approx(1.0));  // V = ||x||^2 exactly
}
