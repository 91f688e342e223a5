#include <catch2/catch_amalgamated.hpp>

#include "nlmpc/learning.hpp"
#include "nlmpc/riccati.hpp"
#include "nlmpc/surrogate.hpp"

using namespace nlmpc;

namespace {

MpcProblemSpec pendulum_spec(std::shared_ptr<const DynamicsModel> model, int N) {
  MpcProblemSpec spec;
  spec.N = N;
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
  spec.model = std::move(model);
  return spec;
}

LyapunovFunction norm_squared_V() {
  LyapunovFunction V;
  MlpLayer l;
  l.W = Mat::Zero(2, 2);
  l.b = Vec::Zero(2);
  l.act = Activation::linear;
  V.v_net.layers.push_back(l);
  V.l_ell = 1.0;
  V.beta_raw = softplus_inv(1.0);
  V.n_V = 1;
  return V;  // V(x) = ||x||^2
}

}  // namespace

TEST_CASE("demonstration_initial_states") {
  Vec lo(2), hi(2);
  lo << -M_PI, -2 * M_PI;
  hi << M_PI, 2 * M_PI;
  BoxSet X(lo, hi);
  Rng rng(1);
  SECTION("single grid point is the box center") {
    Mat pts = demonstration_initial_states(X, InitScheme::grid, 1, rng);
    CHECK(pts.rows() == 1);
    CHECK(pts.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("perfect-square grid covers the box corners") {
    Mat pts = demonstration_initial_states(X, InitScheme::grid, 2500, rng);
    REQUIRE(pts.rows() == 2500);
    CHECK(pts.col(0).minCoeff() == Catch::Approx(-M_PI));
    CHECK(pts.col(0).maxCoeff() == Catch::Approx(M_PI));
    CHECK(pts.col(1).minCoeff() == Catch::Approx(-2 * M_PI));
    CHECK(pts.col(1).maxCoeff() == Catch::Approx(2 * M_PI));
    // equally spaced along each axis
    CHECK(pts(1, 0) - pts(0, 0) == Catch::Approx(2 * M_PI / 49.0));
  }
  SECTION("non-square grid request is rejected") {
    CHECK_THROWS_AS(demonstration_initial_states(X, InitScheme::grid, 2000, rng),
                    ContractViolation);
  }
  SECTION("random scheme reproduces under the same seed") {
    Rng a(9), b(9);
    Mat p1 = demonstration_initial_states(X, InitScheme::random, 50, a);
    Mat p2 = demonstration_initial_states(X, InitScheme::random, 50, b);
    CHECK(max_abs_diff(p1, p2) == 0.0);
  }
}

TEST_CASE("generate_demonstrations on the origin grid point") {
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec spec = pendulum_spec(model, 5);
  Mat A, B;
  model->linearize(Vec::Zero(2), Vec::Zero(1), A, B);
  spec.terminal = TerminalCost::quadratic(dlqr_riccati(A, B, spec.Q, spec.R), 500.0);
  SqpConfig cfg;
  cfg.n_steps = 10;
  cfg.r_trust = 2.5;
  cfg.lr = 0.9;
  cfg.eps_lr = 0.2;
  Rng rng(4);
  Dataset ds = generate_demonstrations(spec, cfg, *model, InitScheme::grid, 1, rng);
  REQUIRE(ds.size() == 1);
  CHECK(ds.provenance == Provenance::demo);
  CHECK(ds.tuples[0].x.cwiseAbs().maxCoeff() == 0.0);
  CHECK(ds.tuples[0].u.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(ds.tuples[0].x_plus.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(ds.flagged_rows.empty());
}

TEST_CASE("one_step_sim") {
  PendulumModel pm;
  SECTION("empty input gives an empty dataset") {
    Dataset ds = one_step_sim(pm, Mat(0, 2), Mat(0, 1));
    CHECK(ds.empty());
  }
  SECTION("origin with zero input stays at the origin") {
    Dataset ds = one_step_sim(pm, Mat::Zero(1, 2), Mat::Zero(1, 1));
    REQUIRE(ds.size() == 1);
    CHECK(ds.tuples[0].x_plus.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("car surrogate outputs equal surrogate_step elementwise") {
    Rng rng(3);
    SurrogateModel m = make_surrogate(SurrogateKind::car_greybox, {20}, 0.2, rng);
    Mat X(4, 3), U(4, 2);
    for (int i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1, 1);
    for (int i = 0; i < U.size(); ++i) U.data()[i] = rng.uniform(-3, 3);
    Dataset ds = one_step_sim(m, X, U);
    for (int r = 0; r < 4; ++r)
      CHECK((ds.tuples[r].x_plus - surrogate_step(m, X.row(r).transpose(), U.row(r).transpose()))
                .cwiseAbs()
                .maxCoeff() < 1e-14);
  }
  SECTION("count mismatch throws") {
    CHECK_THROWS_AS(one_step_sim(pm, Mat::Zero(2, 2), Mat::Zero(3, 1)), ContractViolation);
  }
}

TEST_CASE("enlarge_and_filter_dataset") {
  LyapunovFunction V = norm_squared_V();
  SafeLevel ls = SafeLevel::from_value(1.0);
  Dataset demo;
  demo.plant = "test";
  for (double n2 : {0.5, 1.05, 1.2}) {
    TransitionTuple t;
    t.x = Vec(2);
    t.x << std::sqrt(n2), 0.0;
    t.x_plus = t.x;
    t.u = Vec::Zero(1);
    demo.tuples.push_back(t);
  }
  SECTION("threshold (1+eps) l_s keeps the documented subset") {
    Dataset out = enlarge_and_filter_dataset(demo, V, ls, 0.1);
    CHECK(out.size() == 2);  // 0.5 and 1.05 pass the 1.1 threshold
  }
  SECTION("eps 0 keeps exactly the in-set points") {
    Dataset out = enlarge_and_filter_dataset(demo, V, ls, 0.0);
    CHECK(out.size() == 1);
  }
  SECTION("huge level keeps everything") {
    Dataset out = enlarge_and_filter_dataset(demo, V, SafeLevel::from_value(1e6), 0.0);
    CHECK(out.size() == demo.size());
  }
  SECTION("monotone in eps") {
    const size_t a = enlarge_and_filter_dataset(demo, V, ls, 0.05).size();
    const size_t b = enlarge_and_filter_dataset(demo, V, ls, 0.3).size();
    CHECK(a <= b);
  }
  SECTION("empty result raises an advisory error") {
    CHECK_THROWS_WITH(enlarge_and_filter_dataset(demo, V, SafeLevel::from_value(1e-9), 0.0),
                      Catch::Matchers::ContainsSubstring("eps_ext"));
  }
}

TEST_CASE("tune_alpha singleton list is the identity") {
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec spec = pendulum_spec(model, 1);
  SqpConfig cfg;
  cfg.n_steps = 4;
  cfg.r_trust = 0.5;
  auto V = norm_squared_V();
  SafeLevel ls = SafeLevel::from_value(1.0);
  Dataset data;
  data.plant = "pendulum";
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    TransitionTuple t;
    t.x = Vec(2);
    t.x << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
    t.x_plus = t.x;
    t.u = Vec::Zero(1);
    data.tuples.push_back(t);
  }
  LyapunovLossConfig lcfg;
  Rng tr(8);
  AlphaSearchResult res = tune_alpha(V, ls, spec, cfg, data, {0.7}, 0.2, lcfg, tr);
  CHECK(res.alpha_star == 0.7);
  CHECK(res.alphas.size() == 1);
  CHECK(res.failure_rates[0] < 1.0);
}

TEST_CASE("alternate_learn structure and determinism at toy scale") {
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec demo_spec = pendulum_spec(model, 5);
  Mat A, B;
  model->linearize(Vec::Zero(2), Vec::Zero(1), A, B);
  demo_spec.terminal = TerminalCost::quadratic(dlqr_riccati(A, B, demo_spec.Q, demo_spec.R), 500.0);
  SqpConfig demo_cfg;
  demo_cfg.n_steps = 10;
  demo_cfg.r_trust = 2.5;
  demo_cfg.lr = 0.9;
  demo_cfg.eps_lr = 0.2;
  Rng demo_rng(11);
  Dataset demos = generate_demonstrations(demo_spec, demo_cfg, *model, InitScheme::grid, 100,
                                          demo_rng);

  MpcProblemSpec nlmpc = pendulum_spec(model, 1);
  SqpConfig nlmpc_cfg;
  nlmpc_cfg.n_steps = 6;
  nlmpc_cfg.r_trust = 0.5;
  nlmpc_cfg.lr = 0.9;
  nlmpc_cfg.eps_lr = 0.02;

  AlternateConfig cfg;
  cfg.N_ext = 2;
  cfg.eps_ext = 0.1;
  cfg.alpha_list = {0.5, 1.0};
  cfg.N_V = 25;
  cfg.subsample_frac = 0.2;
  cfg.reinit_V = false;
  cfg.shrink_samples = 400;
  cfg.loss.lambda = 0.99;
  cfg.loss.rho = 1e-3;
  cfg.loss.use_stage_cost = true;
  cfg.loss.j_vol_sign = JVolSign::negated;
  cfg.train.lr = 1e-3;
  cfg.train.weight_decay = 0.002;

  Rng init_rng(21);
  LyapunovFunction V0 = make_lyapunov(2, {16, 16}, 8, 0.1, 1.0, init_rng);
  SafeLevel ls0 = SafeLevel::from_value(1.0);

  Rng run_rng(31);
  AlternateResult res = alternate_learn(cfg, demos, nlmpc, nlmpc_cfg, V0, ls0, run_rng);
  REQUIRE(res.reports.size() == 2);
  CHECK(res.searches.size() == 2);
  CHECK(res.checkpoints.size() == 2);
  CHECK(res.best_iteration >= 1);
  CHECK(res.best_iteration <= 2);
  CHECK(std::isfinite(res.alpha_star));
  for (const auto& r : res.reports) {
    CHECK(r.verified_pct >= 0.0);
    CHECK(r.verified_pct + r.not_verified_pct <= 100.0 + 1e-9);
  }
  // selection-rule consistency: no other iteration strictly dominates the pick
  const auto& best = res.reports[res.best_iteration - 1];
  for (const auto& r : res.reports) {
    const bool dominates =
        r.not_verified_pct < best.not_verified_pct && r.verified_pct > best.verified_pct;
    CHECK_FALSE(dominates);
  }

  Rng run_rng2(31);
  AlternateResult res2 = alternate_learn(cfg, demos, nlmpc, nlmpc_cfg, V0, ls0, run_rng2);
  CHECK(res.reports.back().loss == res2.reports.back().loss);
  CHECK(res.alpha_star == res2.alpha_star);
  CHECK(res.checkpoints.back().dump() == res2.checkpoints.back().dump());
}

TEST_CASE("alternate_learn with N_ext=0 returns the initial training only") {
  auto model = std::make_shared<PendulumModel>();
  MpcProblemSpec nlmpc = pendulum_spec(model, 1);
  SqpConfig nlmpc_cfg;
  nlmpc_cfg.n_steps = 3;

  Dataset demos;
  demos.plant = "pendulum";
  Rng rng(2);
  for (int i = 0; i < 60; ++i) {
    TransitionTuple t;
    t.x = Vec(2);
    t.x << rng.uniform(-1, 1), rng.uniform(-1, 1);
    t.x_plus = 0.95 * t.x;
    t.u = Vec::Zero(1);
    demos.tuples.push_back(t);
  }
  AlternateConfig cfg;
  cfg.N_ext = 0;
  cfg.alpha_list = {1.0};
  cfg.N_V = 10;
  cfg.loss.j_vol_sign = JVolSign::negated;
  Rng init_rng(3);
  LyapunovFunction V0 = make_lyapunov(2, {8}, 4, 0.1, 1.0, init_rng);
  Rng run_rng(5);
  AlternateResult res =
      alternate_learn(cfg, demos, nlmpc, nlmpc_cfg, V0, SafeLevel::from_value(1.0), run_rng);
  CHECK(res.reports.size() == 1);
  CHECK(res.searches.empty());
  CHECK(std::isnan(res.alpha_star));
  CHECK(res.best_iteration == 1);
}
