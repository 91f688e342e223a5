#pragma once

#include <filesystem>

#include "nlmpc/checkpoint.hpp"
#include "nlmpc/config.hpp"
#include "nlmpc/learning.hpp"
#include "nlmpc/riccati.hpp"
#include "nlmpc/verify.hpp"

namespace nlmpc::pipeline {

namespace fs = std::filesystem;

inline const char* kCodeVersion = "nlmpc 1.0.0";

inline fs::path run_dir(const RunConfig& cfg) { return fs::path(cfg.output_dir); }

inline void write_stage_manifest(const RunConfig& cfg, const std::string& stage) {
  json doc;
  doc["stage"] = stage;
  doc["config_hash"] = config_hash(cfg);
  doc["seed"] = cfg.seed;
  doc["code_version"] = kCodeVersion;
  save_json(run_dir(cfg) / (stage + ".stage.json"), doc);
}

inline Rng stage_rng(const RunConfig& cfg, const std::string& stage) {
  return Rng(cfg.seed).child(stage);
}

inline std::shared_ptr<DynamicsModel> make_nominal_model(const RunConfig& cfg) {
  if (cfg.plant == "pendulum") return std::make_shared<PendulumModel>(cfg.pendulum);
  return std::make_shared<CarModel>(cfg.car);
}

inline fs::path surrogate_path(const RunConfig& cfg) { return run_dir(cfg) / "surrogate.json"; }

inline std::shared_ptr<DynamicsModel> make_prediction_model(const RunConfig& cfg,
                                                            const std::string& which) {
  if (which == "nominal") return make_nominal_model(cfg);
  require(which == "surrogate", "prediction model must be 'nominal' or 'surrogate'");
  if (!fs::exists(surrogate_path(cfg)))
    throw ConfigError("prediction model 'surrogate' requested but " +
                      surrogate_path(cfg).string() + " is missing; run train-surrogate first");
  return std::make_shared<SurrogateModel>(surrogate_from_json(load_json(surrogate_path(cfg))));
}

inline MpcProblemSpec make_mpc_spec(const RunConfig& cfg, const MpcSection& section,
                                    std::shared_ptr<const DynamicsModel> model) {
  MpcProblemSpec spec;
  spec.N = section.N;
  spec.gamma = section.gamma;
  spec.Q = cfg.Q;
  spec.R = cfg.R;
  spec.X = cfg.X;
  spec.U = cfg.U;
  spec.eta1 = section.eta1;
  spec.eta2 = section.eta2;
  spec.discount_slack = section.discount_slack;
  spec.model = std::move(model);
  if (section.terminal == "lqr") {
    auto nominal = make_nominal_model(cfg);
    Mat A, B;
    nominal->linearize(Vec::Zero(cfg.nx()), Vec::Zero(cfg.nu()), A, B);
    spec.terminal = TerminalCost::quadratic(dlqr_riccati(A, B, cfg.Q, cfg.R),
                                            section.terminal_scale);
  } else if (section.terminal == "stage_q") {
    spec.terminal = TerminalCost::quadratic(cfg.Q, section.terminal_scale);
  } else if (section.terminal == "lyapunov") {
    // terminal filled in by the caller with the learned V and alpha
  } else {
    throw ConfigError("/terminal: unknown terminal kind '" + section.terminal + "'");
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Stage artifacts
// ---------------------------------------------------------------------------

inline fs::path random_data_path(const RunConfig& cfg) { return run_dir(cfg) / "random.csv"; }
inline fs::path demos_path(const RunConfig& cfg) { return run_dir(cfg) / "demos.csv"; }
inline fs::path learn_dir(const RunConfig& cfg) { return run_dir(cfg) / "learn"; }
inline fs::path summary_path(const RunConfig& cfg) { return learn_dir(cfg) / "summary.json"; }
inline fs::path rollout_dir(const RunConfig& cfg) { return run_dir(cfg) / "rollouts"; }

/// Loads the best-iteration artifacts produced by stage_learn.
inline std::tuple<LyapunovFunction, SafeLevel, double> load_learned_artifacts(
    const RunConfig& cfg) {
  if (!fs::exists(summary_path(cfg)))
    throw ConfigError("learned artifacts missing at " + summary_path(cfg).string() +
                      "; run the learn stage first");
  const json summary = load_json(summary_path(cfg));
  const int best = summary.at("best_iteration").get<int>();
  const json ckpt = load_json(learn_dir(cfg) / ("V_iter_" + std::to_string(best) + ".json"));
  auto [V, ls, loss_cfg] = lyapunov_from_json(ckpt);
  double alpha = 1.0;
  if (!summary.at("alpha_star").is_null()) alpha = summary.at("alpha_star").get<double>();
  return {std::move(V), ls, alpha};
}

// each stage returns true when it ran, false when outputs existed already

inline bool stage_gen_random(const RunConfig& cfg, bool force = false) {
  if (!force && fs::exists(random_data_path(cfg))) return false;
  Rng rng = stage_rng(cfg, "gen-random");
  auto nominal = make_nominal_model(cfg);
  Dataset ds = sample_random_transitions(*nominal, cfg.X, cfg.U, cfg.surrogate.n_samples, rng);
  save_dataset(random_data_path(cfg), ds);
  write_stage_manifest(cfg, "gen-random");
  return true;
}

inline bool stage_train_surrogate(const RunConfig& cfg, bool force = false) {
  if (!force && fs::exists(surrogate_path(cfg))) return false;
  if (!fs::exists(random_data_path(cfg))) stage_gen_random(cfg, force);
  Rng rng = stage_rng(cfg, "train-surrogate");
  Dataset data = load_dataset(random_data_path(cfg));
  const double dt = cfg.plant == "pendulum" ? cfg.pendulum.dt : cfg.car.dt;
  SurrogateModel model = make_surrogate(cfg.plant == "pendulum"
                                            ? SurrogateKind::pendulum_greybox
                                            : SurrogateKind::car_greybox,
                                        cfg.surrogate.hidden, dt, rng);
  TrainCurves curves = train_surrogate(model, data, cfg.surrogate.train, rng);
  save_json(surrogate_path(cfg), surrogate_to_json(model));
  json jc;
  jc["train_mse"] = curves.train_mse;
  jc["val_mse"] = curves.val_mse;
  jc["final_val_mse"] = curves.final_val_mse;
  // held-out one-step error against the nominal plant
  auto nominal = make_nominal_model(cfg);
  jc["mu_estimate"] = estimate_model_error(*nominal, model, data);
  save_json(run_dir(cfg) / "surrogate_curves.json", jc);
  write_stage_manifest(cfg, "train-surrogate");
  return true;
}

inline bool stage_gen_demos(const RunConfig& cfg, bool force = false) {
  if (!force && fs::exists(demos_path(cfg))) return false;
  Rng rng = stage_rng(cfg, "gen-demos");
  auto nominal = make_nominal_model(cfg);
  MpcProblemSpec demo_spec = make_mpc_spec(cfg, cfg.demonstrator, nominal);
  Dataset demos = generate_demonstrations(demo_spec, cfg.demonstrator.sqp, *nominal,
                                          cfg.learning.demo_scheme, cfg.learning.demo_count, rng);
  save_dataset(demos_path(cfg), demos);
  write_stage_manifest(cfg, "gen-demos");
  return true;
}

inline bool stage_learn(const RunConfig& cfg, bool force = false) {
  if (!force && fs::exists(summary_path(cfg))) return false;
  if (!fs::exists(demos_path(cfg))) stage_gen_demos(cfg, force);
  auto prediction = make_prediction_model(cfg, cfg.learning.prediction_model);
  Dataset demos = load_dataset(demos_path(cfg));

  MpcProblemSpec nlmpc_template = make_mpc_spec(cfg, cfg.nlmpc, prediction);
  AlternateConfig acfg;
  acfg.N_ext = cfg.learning.N_ext;
  acfg.eps_ext = cfg.learning.eps_ext;
  acfg.alpha_list = cfg.learning.alpha_list;
  acfg.N_V = cfg.learning.N_V;
  acfg.subsample_frac = cfg.learning.subsample_frac;
  acfg.reinit_V = cfg.learning.reinit_V;
  acfg.shrink_samples = cfg.learning.shrink_samples;
  acfg.loss = cfg.lyapunov.loss;
  acfg.train.lr = cfg.lyapunov.lr;
  acfg.train.weight_decay = cfg.lyapunov.weight_decay;
  acfg.train.val_frac = cfg.lyapunov.val_frac;
  acfg.train.batch = cfg.lyapunov.batch;

  Rng init_rng = stage_rng(cfg, "learn/init");
  LyapunovFunction V0 = make_lyapunov(cfg.nx(), cfg.lyapunov.hidden, cfg.lyapunov.n_V,
                                      cfg.lyapunov.l_ell, cfg.lyapunov.beta_scale_init, init_rng);
  SafeLevel ls0 = SafeLevel::from_value(cfg.lyapunov.l_s_init);
  if (cfg.lyapunov.l_s_init_quantile > 0.0) {
    VBatchEval ws;
    const Vec v0 = v_eval_batch(V0, demos.without_flagged().states(), ws);
    std::vector<double> sorted(v0.data(), v0.data() + v0.size());
    std::sort(sorted.begin(), sorted.end());
    const auto at = std::min(sorted.size() - 1,
                             static_cast<size_t>(cfg.lyapunov.l_s_init_quantile * sorted.size()));
    if (sorted[at] > 0.0) ls0 = SafeLevel::from_value(sorted[at]);
  }

  Rng rng = stage_rng(cfg, "learn");
  AlternateResult res =
      alternate_learn(acfg, demos, nlmpc_template, cfg.nlmpc.sqp, V0, ls0, rng);

  fs::create_directories(learn_dir(cfg));
  for (size_t i = 0; i < res.reports.size(); ++i) {
    const int iter = static_cast<int>(i) + 1;
    save_json(learn_dir(cfg) / ("V_iter_" + std::to_string(iter) + ".json"), res.checkpoints[i]);
    json rep = iteration_report_to_json(res.reports[i]);
    if (i < res.searches.size()) {
      rep["alpha_search"] = {{"alphas", res.searches[i].alphas},
                             {"losses", res.searches[i].losses},
                             {"failure_rates", res.searches[i].failure_rates}};
    }
    save_json(learn_dir(cfg) / ("report_" + std::to_string(iter) + ".json"), rep);
  }
  for (size_t i = 0; i < res.mpc_datasets.size(); ++i)
    save_dataset(learn_dir(cfg) / ("mpc_transitions_" + std::to_string(i + 1) + ".csv"),
                 res.mpc_datasets[i]);

  json summary;
  summary["best_iteration"] = res.best_iteration;
  summary["alpha_star"] =
      std::isfinite(res.alpha_star) ? json(res.alpha_star) : json(nullptr);
  summary["l_s"] = res.l_s.value();
  json reports = json::array();
  for (const auto& r : res.reports) reports.push_back(iteration_report_to_json(r));
  summary["reports"] = std::move(reports);
  save_json(summary_path(cfg), summary);
  write_stage_manifest(cfg, "learn");
  return true;
}

inline bool stage_tune_alpha(const RunConfig& cfg, bool force = false) {
  const fs::path out = run_dir(cfg) / "alpha_search.json";
  if (!force && fs::exists(out)) return false;
  auto [V, ls, alpha_prev] = load_learned_artifacts(cfg);
  auto prediction = make_prediction_model(cfg, cfg.learning.prediction_model);
  MpcProblemSpec nlmpc_template = make_mpc_spec(cfg, cfg.nlmpc, prediction);
  Dataset demos = load_dataset(demos_path(cfg)).without_flagged();
  Dataset filtered = enlarge_and_filter_dataset(demos, V, ls, cfg.learning.eps_ext);
  Rng rng = stage_rng(cfg, "tune-alpha");
  AlphaSearchResult res =
      tune_alpha(V, ls, nlmpc_template, cfg.nlmpc.sqp, filtered, cfg.learning.alpha_list,
                 cfg.learning.subsample_frac, cfg.lyapunov.loss, rng);
  json doc;
  doc["alpha_star"] = res.alpha_star;
  doc["alphas"] = res.alphas;
  doc["losses"] = res.losses;
  doc["failure_rates"] = res.failure_rates;
  save_json(out, doc);
  write_stage_manifest(cfg, "tune-alpha");
  return true;
}

inline void save_trajectory_csv(const fs::path& path, const Trajectory& t) {
  std::string out = "t";
  const int nx = static_cast<int>(t.states.cols());
  const int nu = static_cast<int>(t.inputs.cols());
  for (int i = 0; i < nx; ++i) out += ",x" + std::to_string(i);
  for (int i = 0; i < nu; ++i) out += ",u" + std::to_string(i);
  out += ",V,dV,violation_norm,solver_status\n";
  const int T = static_cast<int>(t.inputs.rows());
  for (int s = 0; s <= T; ++s) {
    out += std::to_string(s);
    for (int i = 0; i < nx; ++i) out += "," + fmt17(t.states(s, i));
    for (int i = 0; i < nu; ++i) out += "," + (s < T ? fmt17(t.inputs(s, i)) : std::string("0"));
    out += "," + fmt17(t.v_vals[s]);
    out += "," + (s < T ? fmt17(t.dv_vals[s]) : std::string("0"));
    out += "," + fmt17(t.violation_norm[s]);
    out += ",";
    out += (s < T ? (t.solver_status[s] == MpcStatus::ok ? "ok" : "failed") : "end");
    out += "\n";
  }
  write_text_file(path, out);
}

/// Rolls out the learned NLMPC and the demonstrator from the same
/// rejection-sampled safe starts on the nominal plant; both controllers use
/// the configured prediction model.
inline bool stage_rollout(const RunConfig& cfg, bool force = false) {
  const fs::path metrics_path = rollout_dir(cfg) / "metrics.json";
  if (!force && fs::exists(metrics_path)) return false;
  auto [V, ls, alpha] = load_learned_artifacts(cfg);
  auto shared_V = std::make_shared<LyapunovFunction>(V);
  auto prediction = make_prediction_model(cfg, cfg.learning.prediction_model);
  auto nominal = make_nominal_model(cfg);

  MpcProblemSpec nlmpc_spec = make_mpc_spec(cfg, cfg.nlmpc, prediction);
  nlmpc_spec.terminal = TerminalCost::lyapunov(shared_V, alpha);
  MpcProblemSpec demo_spec = make_mpc_spec(cfg, cfg.demonstrator, prediction);

  Rng rng = stage_rng(cfg, "rollout");
  const Mat starts = rejection_sample_safe_states(V, ls, cfg.X, cfg.rollout.n_starts, rng,
                                                  cfg.rollout.rejection_cap);

  const auto nlmpc_trajs =
      rollout_closed_loop_batch(*nominal, nlmpc_spec, cfg.nlmpc.sqp, starts, cfg.rollout.T);
  const auto demo_trajs = rollout_closed_loop_batch(*nominal, demo_spec, cfg.demonstrator.sqp,
                                                    starts, cfg.rollout.T, &V);

  fs::create_directories(rollout_dir(cfg));
  for (int r = 0; r < starts.rows(); ++r) {
    char name[64];
    std::snprintf(name, sizeof(name), "nlmpc_%04d.csv", r);
    save_trajectory_csv(rollout_dir(cfg) / name, nlmpc_trajs[r]);
    std::snprintf(name, sizeof(name), "demo_%04d.csv", r);
    save_trajectory_csv(rollout_dir(cfg) / name, demo_trajs[r]);
  }
  const TaskMetrics m_nlmpc = stability_safety_metrics(
      nlmpc_trajs, cfg.X, cfg.rollout.stability_threshold, cfg.rollout.exclude_dims);
  const TaskMetrics m_demo = stability_safety_metrics(
      demo_trajs, cfg.X, cfg.rollout.stability_threshold, cfg.rollout.exclude_dims);
  json doc;
  doc["nlmpc"] = task_metrics_to_json(m_nlmpc);
  doc["demonstrator"] = task_metrics_to_json(m_demo);
  doc["n_starts"] = cfg.rollout.n_starts;
  doc["T"] = cfg.rollout.T;
  doc["alpha"] = alpha;
  doc["prediction_model"] = cfg.learning.prediction_model;
  save_json(metrics_path, doc);
  write_stage_manifest(cfg, "rollout");
  return true;
}

inline bool stage_verify(const RunConfig& cfg, bool force = false) {
  const fs::path out = run_dir(cfg) / "verification_report.json";
  if (!force && fs::exists(out)) return false;
  auto [V, ls, alpha] = load_learned_artifacts(cfg);
  // classify the transitions the best iteration trained on (fall back to demos)
  const json summary = load_json(summary_path(cfg));
  const int best = summary.at("best_iteration").get<int>();
  fs::path data_path = learn_dir(cfg) / ("mpc_transitions_" + std::to_string(best) + ".csv");
  if (!fs::exists(data_path)) data_path = demos_path(cfg);
  Dataset data = load_dataset(data_path).without_flagged();
  VerificationReport rep = verify_dataset(V, ls, data, cfg.lyapunov.loss.lambda,
                                          cfg.lyapunov.loss.use_stage_cost, cfg.Q, cfg.R);
  json doc = verification_report_to_json(rep);
  doc["dataset"] = data_path.filename().string();
  doc["l_s"] = ls.value();
  save_json(out, doc);
  write_stage_manifest(cfg, "verify");
  return true;
}

inline bool stage_bounds(const RunConfig& cfg, bool force = false) {
  const fs::path out = run_dir(cfg) / "bounds.json";
  if (!force && fs::exists(out)) return false;
  BoundsSection b = cfg.bounds;
  json notes = json::array();
  if (b.estimate_from_artifacts) {
    auto [V, ls, alpha] = load_learned_artifacts(cfg);
    Dataset demos = load_dataset(demos_path(cfg)).without_flagged();
    const Mat X = demos.states(), U = demos.inputs();
    auto prediction = make_prediction_model(cfg, cfg.learning.prediction_model);
    const LipschitzEstimate lfx = estimate_state_lipschitz(*prediction, X, U);
    const LipschitzEstimate lv = estimate_v_upper_bound(V, X);
    const LipschitzEstimate lell = estimate_stage_upper_bound(demos, cfg.Q, cfg.R);
    b.L_fx_hat = lfx.value;
    b.L_V = lv.value;
    b.L_ell = lell.value;
    b.l_s = ls.value();
    b.alpha = alpha;
    notes.push_back("L_fx_hat: " + lfx.method);
    notes.push_back("L_V: " + lv.method);
    notes.push_back("L_ell: " + lell.method);
    if (fs::exists(run_dir(cfg) / "surrogate_curves.json")) {
      b.mu = load_json(run_dir(cfg) / "surrogate_curves.json").at("mu_estimate").get<double>();
      notes.push_back("mu: max one-step error of the surrogate over the random dataset");
    }
  }
  json doc;
  doc["alpha_bar_1"] = alpha_bar_lower_bound(b.L_ell, b.l_ell, b.lambda);
  doc["mu_bar"] = model_error_bound(b.lambda, b.L_V, b.L_fx_hat, b.N, b.l_s);
  const double perf = performance_bound(b.eps, b.gamma, b.N, b.Q_norm, b.alpha, b.L_V, b.L_bar,
                                        b.mu, b.delta, b.J_mpc_true, b.psi_bar);
  doc["performance_bound"] = std::isinf(perf) ? json("infinite") : json(perf);
  doc["inputs"] = {{"lambda", b.lambda}, {"l_ell", b.l_ell},   {"L_ell", b.L_ell},
                   {"L_V", b.L_V},       {"L_fx_hat", b.L_fx_hat}, {"N", b.N},
                   {"l_s", b.l_s},       {"eps", b.eps},       {"gamma", b.gamma},
                   {"Q_norm", b.Q_norm}, {"alpha", b.alpha},   {"L_bar", b.L_bar},
                   {"mu", b.mu},         {"delta", b.delta},   {"J_mpc_true", b.J_mpc_true},
                   {"psi_bar", b.psi_bar}};
  doc["estimation_notes"] = notes;
  save_json(out, doc);
  write_stage_manifest(cfg, "bounds");
  return true;
}

/// CSV of (coords..., V) over an axis-aligned grid; fixed dims held constant.
/// Values are pointwise v_eval outputs, no interpolation.
inline void emit_level_set_grid(const LyapunovFunction& V, double l_s,
                                const std::vector<GridAxis>& axes, int resolution,
                                const fs::path& csv_path) {
  require(resolution >= 2, "emit_level_set_grid: resolution >= 2");
  require(static_cast<int>(axes.size()) == V.nx(), "emit_level_set_grid: axis count mismatch");
  const int nx = V.nx();
  std::vector<int> sweep;
  for (int d = 0; d < nx; ++d)
    if (!axes[d].fixed) sweep.push_back(d);
  long rows = 1;
  for (size_t i = 0; i < sweep.size(); ++i) rows *= resolution;

  Mat P(rows, nx);
  for (long r = 0; r < rows; ++r) {
    for (int d = 0; d < nx; ++d) {
      if (axes[d].fixed) {
        P(r, d) = *axes[d].fixed;
      } else {
        // dims earlier in the sweep order vary fastest
        int pos = 0;
        while (sweep[pos] != d) ++pos;
        long stride = 1;
        for (int k = 0; k < pos; ++k) stride *= resolution;
        const int idx = static_cast<int>((r / stride) % resolution);
        P(r, d) = axes[d].min + (axes[d].max - axes[d].min) * idx / (resolution - 1);
      }
    }
  }
  VBatchEval ws;
  const Vec vals = v_eval_batch(V, P, ws);

  std::string out;
  for (int d = 0; d < nx; ++d) out += "x" + std::to_string(d) + ",";
  out += "V\n";
  for (long r = 0; r < rows; ++r) {
    for (int d = 0; d < nx; ++d) out += fmt17(P(r, d)) + ",";
    out += fmt17(vals[r]) + "\n";
  }
  write_text_file(csv_path, out);

  json manifest;
  manifest["l_s"] = l_s;
  manifest["resolution"] = resolution;
  json jaxes = json::array();
  for (const auto& a : axes) {
    if (a.fixed) jaxes.push_back({{"fixed", *a.fixed}});
    else jaxes.push_back({{"min", a.min}, {"max", a.max}});
  }
  manifest["axes"] = std::move(jaxes);
  manifest["rows"] = rows;
  fs::path mpath = csv_path;
  mpath += ".manifest.json";
  save_json(mpath, manifest);
}

inline bool stage_emit_grid(const RunConfig& cfg, bool force = false) {
  const fs::path out = run_dir(cfg) / "grid.csv";
  if (!force && fs::exists(out)) return false;
  auto [V, ls, alpha] = load_learned_artifacts(cfg);
  emit_level_set_grid(V, ls.value(), cfg.grid.axes, cfg.grid.resolution, out);
  write_stage_manifest(cfg, "emit-grid");
  return true;
}

inline bool run_stage(const RunConfig& cfg, const std::string& command, bool force = false) {
  if (command == "gen-random") return stage_gen_random(cfg, force);
  if (command == "train-surrogate") return stage_train_surrogate(cfg, force);
  if (command == "gen-demos") return stage_gen_demos(cfg, force);
  if (command == "learn") return stage_learn(cfg, force);
  if (command == "tune-alpha") return stage_tune_alpha(cfg, force);
  if (command == "rollout") return stage_rollout(cfg, force);
  if (command == "verify") return stage_verify(cfg, force);
  if (command == "bounds") return stage_bounds(cfg, force);
  if (command == "emit-grid") return stage_emit_grid(cfg, force);
  throw ConfigError("unknown command: " + command);
}

}  // namespace nlmpc::pipeline
