#pragma once

#include <cmath>
#include <limits>
#include <numeric>

#include "nlmpc/lyapunov.hpp"
#include "nlmpc/mpc.hpp"

namespace nlmpc {

enum class InitScheme { grid, random };

inline const char* to_string(InitScheme s) { return s == InitScheme::grid ? "grid" : "random"; }
inline InitScheme init_scheme_from_string(const std::string& s) {
  if (s == "grid") return InitScheme::grid;
  if (s == "random") return InitScheme::random;
  throw ContractViolation("unknown init scheme: " + s);
}

/// Initial states for demonstration generation: an equally spaced inclusive
/// grid over the state box (M must be a perfect nx-th power) or M uniform
/// draws.
inline Mat demonstration_initial_states(const BoxSet& X, InitScheme scheme, int M, Rng& rng) {
  require(M > 0, "demonstration_initial_states: M must be positive");
  const int nx = X.dim();
  if (scheme == InitScheme::random) {
    Mat out(M, nx);
    for (int r = 0; r < M; ++r) out.row(r) = X.sample(rng).transpose();
    return out;
  }
  const int side = std::max(1, static_cast<int>(std::llround(std::pow(M, 1.0 / nx))));
  int total = 1;
  for (int d = 0; d < nx; ++d) total *= side;
  require(total == M, "demonstration_initial_states: grid M must be a perfect power of dim");
  Mat out(M, nx);
  for (int r = 0; r < M; ++r) {
    int rem = r;
    for (int d = 0; d < nx; ++d) {
      const int k = rem % side;
      rem /= side;
      out(r, d) = side == 1 ? 0.5 * (X.lower[d] + X.upper[d])
                            : X.lower[d] + (X.upper[d] - X.lower[d]) * k / (side - 1);
    }
  }
  return out;
}

/// Run the demonstrator MPC on every initial state and step the true plant
/// once; failed solves are recorded with zero input and flagged.
inline Dataset generate_demonstrations(const MpcProblemSpec& demo_spec, const SqpConfig& demo_cfg,
                                       const DynamicsModel& plant, InitScheme scheme, int M,
                                       Rng& rng) {
  const Mat X0 = demonstration_initial_states(demo_spec.X, scheme, M, rng);
  const std::vector<MpcSolution> sols = sqp_solve_batch(demo_spec, demo_cfg, X0);
  Dataset ds;
  ds.plant = plant.name();
  ds.provenance = Provenance::demo;
  ds.tuples.reserve(M);
  for (int r = 0; r < M; ++r) {
    TransitionTuple t;
    t.x = X0.row(r).transpose();
    t.u = sols[r].status == MpcStatus::ok ? Vec(sols[r].u_seq.row(0).transpose())
                                          : Vec(Vec::Zero(plant.nu()));
    if (sols[r].status != MpcStatus::ok) ds.flagged_rows.push_back(r);
    t.x_plus = plant.step(t.x, t.u);
    ds.tuples.push_back(std::move(t));
  }
  return ds;
}

/// one-step transitions (x, u, f(x,u)) under the given model
inline Dataset one_step_sim(const DynamicsModel& model, const Mat& states, const Mat& inputs) {
  require(states.rows() == inputs.rows(), "one_step_sim: state/input count mismatch");
  Dataset ds;
  ds.plant = model.name();
  ds.provenance = Provenance::mpc_rollout;
  Mat XP;
  if (states.rows() > 0) model.step_batch(states, inputs, XP);
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    TransitionTuple t;
    t.x = states.row(r).transpose();
    t.u = inputs.row(r).transpose();
    t.x_plus = XP.row(r).transpose();
    ds.tuples.push_back(std::move(t));
  }
  return ds;
}

/// Keep tuples whose state lies in the inflated level set V(x) <= (1+eps) l_s.
inline Dataset enlarge_and_filter_dataset(const Dataset& demo, const LyapunovFunction& V,
                                          const SafeLevel& ls, double eps_ext) {
  Dataset out;
  out.plant = demo.plant;
  out.provenance = demo.provenance;
  if (demo.empty()) return out;
  VBatchEval ws;
  const Vec v = v_eval_batch(V, demo.states(), ws);
  const double cap = (1.0 + eps_ext) * ls.value();
  for (Eigen::Index r = 0; r < v.size(); ++r)
    if (v[r] <= cap) out.tuples.push_back(demo.tuples[r]);
  if (out.empty())
    throw ContractViolation(
        "enlarge_and_filter_dataset: no demonstration state lies inside (1+eps_ext) l_s; "
        "consider a smaller l_ell or a larger eps_ext");
  return out;
}

struct AlphaSearchResult {
  double alpha_star = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> alphas;
  std::vector<double> losses;         // loss (9) on the one-step MPC transitions
  std::vector<double> failure_rates;  // fraction of failed solves per alpha
};

/// Grid search over the terminal scaling: for each alpha run the N-step MPC
/// over a subsample of the dataset states, take one-step transitions under
/// the prediction model, and score loss (9). Ties break toward smaller alpha.
inline AlphaSearchResult tune_alpha(const LyapunovFunction& V, const SafeLevel& ls,
                                    const MpcProblemSpec& nlmpc_template, const SqpConfig& sqp_cfg,
                                    const Dataset& data, const std::vector<double>& alpha_list,
                                    double subsample_frac, const LyapunovLossConfig& loss_cfg,
                                    Rng& rng) {
  require(!data.empty(), "tune_alpha: empty dataset");
  require(!alpha_list.empty(), "tune_alpha: empty alpha list");
  require(subsample_frac > 0 && subsample_frac <= 1.0, "tune_alpha: subsample_frac in (0,1]");

  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
  const Eigen::Index k =
      std::max<Eigen::Index>(1, static_cast<Eigen::Index>(subsample_frac * static_cast<double>(n)));
  Mat X0(k, data.nx());
  const Mat all_states = data.states();
  for (Eigen::Index i = 0; i < k; ++i) X0.row(i) = all_states.row(order[i]);

  auto shared_V = std::make_shared<LyapunovFunction>(V);
  AlphaSearchResult res;
  double best_loss = std::numeric_limits<double>::infinity();
  bool any_solved = false;
  for (double alpha : alpha_list) {
    MpcProblemSpec spec = nlmpc_template;
    spec.terminal = TerminalCost::lyapunov(shared_V, alpha);
    const std::vector<MpcSolution> sols = sqp_solve_batch(spec, sqp_cfg, X0);
    Mat U(k, spec.model->nu());
    int failures = 0;
    for (Eigen::Index r = 0; r < k; ++r) {
      if (sols[r].status == MpcStatus::ok) {
        U.row(r) = sols[r].u_seq.row(0);
      } else {
        U.row(r).setZero();  // failed solve contributes the zero action
        ++failures;
      }
    }
    const Dataset mpc_data = one_step_sim(*spec.model, X0, U);
    const auto [loss, diag] = lyapunov_loss(V, ls, mpc_data, loss_cfg, spec.Q, spec.R);
    res.alphas.push_back(alpha);
    res.losses.push_back(loss);
    res.failure_rates.push_back(static_cast<double>(failures) / static_cast<double>(k));
    if (failures < k) any_solved = true;
    if (loss < best_loss) {
      best_loss = loss;
      res.alpha_star = alpha;
    }
  }
  if (!any_solved) {
    std::string msg = "tune_alpha: the MPC failed on every state for every alpha (failure rates:";
    for (size_t i = 0; i < res.alphas.size(); ++i)
      msg += " " + std::to_string(res.alphas[i]) + "->" + std::to_string(res.failure_rates[i]);
    throw NumericError(msg + ")");
  }
  return res;
}

struct AlternateConfig {
  int N_ext = 2;
  double eps_ext = 0.1;
  std::vector<double> alpha_list;
  int N_V = 200;
  double subsample_frac = 0.2;
  bool reinit_V = false;
  int shrink_samples = 2000;
  LyapunovLossConfig loss;
  LyapunovTrainConfig train;

  void validate() const {
    require(N_ext >= 0, "AlternateConfig: N_ext >= 0");
    require(eps_ext >= 0, "AlternateConfig: eps_ext >= 0");
    require(subsample_frac > 0 && subsample_frac <= 1.0, "AlternateConfig: subsample_frac");
    loss.validate();
  }
};

struct IterationReport {
  int iteration = 0;  // 1-based
  double loss = 0.0;  // validation loss of the trained V (raw scale)
  double verified_pct = 0.0;
  double not_verified_pct = 0.0;
  double alpha_star = std::numeric_limits<double>::quiet_NaN();
  std::size_t dataset_size = 0;
  double l_s = 0.0;
};

inline json iteration_report_to_json(const IterationReport& r) {
  json doc;
  doc["iteration"] = r.iteration;
  doc["loss"] = r.loss;
  doc["loss_log1p"] = r.loss > -1.0 ? json(std::log1p(r.loss)) : json(nullptr);
  doc["verified_pct"] = r.verified_pct;
  doc["not_verified_pct"] = r.not_verified_pct;
  if (std::isfinite(r.alpha_star)) doc["alpha_star"] = r.alpha_star;
  else doc["alpha_star"] = nullptr;
  doc["dataset_size"] = r.dataset_size;
  doc["l_s"] = r.l_s;
  return doc;
}

struct AlternateResult {
  LyapunovFunction V;
  SafeLevel l_s;
  double alpha_star = std::numeric_limits<double>::quiet_NaN();
  int best_iteration = 0;  // 1-based
  std::vector<IterationReport> reports;
  std::vector<json> checkpoints;           // per-iteration V/l_s snapshots
  std::vector<AlphaSearchResult> searches;
  std::vector<Dataset> mpc_datasets;       // regenerated training sets per iteration
};

/// Alternate learning: each iteration trains V on the current dataset,
/// shrinks l_s into the state box, reports validation metrics, then (when
/// another round follows) filters the demonstrations through the inflated
/// safe set, grid-searches alpha and regenerates the dataset with one-step
/// MPC transitions. The returned artifacts are those of the best iteration
/// under (min not-verified %, max verified %, min loss).
inline AlternateResult alternate_learn(const AlternateConfig& cfg, const Dataset& demo,
                                       const MpcProblemSpec& nlmpc_template,
                                       const SqpConfig& nlmpc_sqp, const LyapunovFunction& V_init,
                                       const SafeLevel& ls_init, Rng& rng) {
  cfg.validate();
  require(!demo.empty(), "alternate_learn: empty demonstration dataset");

  const Dataset demo_clean = demo.without_flagged();
  require(!demo_clean.empty(), "alternate_learn: all demonstrations flagged");

  AlternateResult res;
  LyapunovFunction V = V_init;
  SafeLevel ls = ls_init;
  const Vec v_init_params = lyapunov_get_params(V_init, ls_init);

  Dataset train_set = demo_clean;
  const int rounds = std::max(1, cfg.N_ext);
  const bool tuning = cfg.N_ext >= 1;

  // fixed validation slice of the demonstrations: iteration metrics stay
  // comparable across rounds even as the training set is regenerated
  Dataset fixed_val;
  {
    Rng val_rng = rng.child("val");
    const Eigen::Index n = static_cast<Eigen::Index>(demo_clean.size());
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (Eigen::Index i = n - 1; i > 0; --i)
      std::swap(order[i], order[val_rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
    const Eigen::Index n_val = std::max<Eigen::Index>(1, n * 3 / 10);
    fixed_val.plant = demo_clean.plant;
    fixed_val.provenance = demo_clean.provenance;
    for (Eigen::Index i = 0; i < n_val; ++i) fixed_val.tuples.push_back(demo_clean.tuples[order[i]]);
  }

  for (int iter = 1; iter <= rounds; ++iter) {
    const std::string tag = "iter" + std::to_string(iter);
    if (iter > 1 && cfg.reinit_V) {
      // reset the network and beta to their initial values, keep l_s
      SafeLevel keep = ls;
      Vec p = v_init_params;
      p[p.size() - 1] = keep.raw;
      lyapunov_set_params(V, ls, p);
    }
    LyapunovTrainConfig tcfg = cfg.train;
    tcfg.epochs = cfg.N_V;
    Rng train_rng = rng.child(tag + "/train");
    train_lyapunov(V, ls, train_set, tcfg, cfg.loss, nlmpc_template.Q, nlmpc_template.R,
                   train_rng);
    Rng shrink_rng = rng.child(tag + "/shrink");
    ls = shrink_safe_level(V, ls, nlmpc_template.X, cfg.shrink_samples, shrink_rng);

    // iteration metrics on the fixed demonstration validation slice
    IterationReport report;
    report.iteration = iter;
    report.dataset_size = train_set.size();
    report.l_s = ls.value();
    {
      const auto [loss, diag] =
          lyapunov_loss(V, ls, fixed_val, cfg.loss, nlmpc_template.Q, nlmpc_template.R);
      report.loss = loss;
      report.verified_pct = 100.0 * diag.n_verified / static_cast<double>(fixed_val.size());
      report.not_verified_pct =
          100.0 * diag.n_not_verified / static_cast<double>(fixed_val.size());
    }

    if (tuning) {
      const Dataset filtered = enlarge_and_filter_dataset(demo_clean, V, ls, cfg.eps_ext);
      Rng tune_rng = rng.child(tag + "/tune");
      AlphaSearchResult search =
          tune_alpha(V, ls, nlmpc_template, nlmpc_sqp, filtered, cfg.alpha_list,
                     cfg.subsample_frac, cfg.loss, tune_rng);
      report.alpha_star = search.alpha_star;
      res.searches.push_back(std::move(search));

      if (iter < rounds) {
        // regenerate the full dataset with the chosen alpha
        auto shared_V = std::make_shared<LyapunovFunction>(V);
        MpcProblemSpec spec = nlmpc_template;
        spec.terminal = TerminalCost::lyapunov(shared_V, report.alpha_star);
        const Mat X0 = filtered.states();
        const std::vector<MpcSolution> sols = sqp_solve_batch(spec, nlmpc_sqp, X0);
        Mat U(X0.rows(), spec.model->nu());
        for (Eigen::Index r = 0; r < X0.rows(); ++r)
          U.row(r) = sols[r].status == MpcStatus::ok ? Mat(sols[r].u_seq.row(0))
                                                     : Mat(Mat::Zero(1, spec.model->nu()));
        train_set = one_step_sim(*spec.model, X0, U);
        res.mpc_datasets.push_back(train_set);
      }
    }

    res.reports.push_back(report);
    res.checkpoints.push_back(lyapunov_to_json(V, ls, cfg.loss));
  }

  // best iteration: min not-verified %, then max verified %, then min loss
  int best = 0;
  for (int i = 1; i < static_cast<int>(res.reports.size()); ++i) {
    const auto& a = res.reports[i];
    const auto& b = res.reports[best];
    const bool better = (a.not_verified_pct < b.not_verified_pct) ||
                        (a.not_verified_pct == b.not_verified_pct &&
                         a.verified_pct > b.verified_pct) ||
                        (a.not_verified_pct == b.not_verified_pct &&
                         a.verified_pct == b.verified_pct && a.loss < b.loss);
    if (better) best = i;
  }
  res.best_iteration = best + 1;
  auto [Vb, lsb, unused_cfg] = lyapunov_from_json(res.checkpoints[best]);
  res.V = std::move(Vb);
  res.l_s = lsb;
  res.alpha_star = res.reports[best].alpha_star;
  return res;
}

}  // namespace nlmpc
