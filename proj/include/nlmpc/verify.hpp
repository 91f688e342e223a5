#pragma once

#include <limits>
#include <string>

#include "nlmpc/lyapunov.hpp"
#include "nlmpc/mpc.hpp"

namespace nlmpc {

/// Sampling-based classification of one-step transitions against the
/// lambda-decrease condition inside the level set {V <= l_s}.
/// Percentages are of n_total by default; `relative_to_inside` switches to
/// the inside-set denominator.
struct VerificationReport {
  long n_total = 0;
  long n_inside = 0;
  long n_verified = 0;      // inside and dV <= 0 (boundary counts as verified)
  long n_not_verified = 0;  // inside and dV > 0
  double pct_inside = 0.0;
  double pct_verified = 0.0;
  double pct_not_verified = 0.0;
  bool relative_to_inside = false;
};

inline VerificationReport verify_dataset(const LyapunovFunction& V, const SafeLevel& ls,
                                         const Dataset& transitions, double lambda,
                                         bool use_stage_cost = false, const Mat& Q = Mat(),
                                         const Mat& R = Mat(), bool relative_to_inside = false,
                                         double stage_cost_weight = 1.0) {
  VerificationReport rep;
  rep.relative_to_inside = relative_to_inside;
  rep.n_total = static_cast<long>(transitions.size());
  if (transitions.empty()) return rep;
  VBatchEval wx, wxp;
  const Vec vx = v_eval_batch(V, transitions.states(), wx);
  const Vec vxp = v_eval_batch(V, transitions.next_states(), wxp);
  Vec dv = vxp - lambda * vx;
  if (use_stage_cost)
    dv += stage_cost_weight * (quad_form_batch(transitions.states(), Q) +
                               quad_form_batch(transitions.inputs(), R));
  const double l = ls.value();
  for (Eigen::Index i = 0; i < vx.size(); ++i) {
    if (vx[i] <= l) {
      ++rep.n_inside;
      (dv[i] <= 0.0 ? rep.n_verified : rep.n_not_verified)++;
    }
  }
  const double denom =
      static_cast<double>(relative_to_inside ? std::max(rep.n_inside, 1L) : rep.n_total);
  rep.pct_inside = 100.0 * rep.n_inside / static_cast<double>(rep.n_total);
  rep.pct_verified = 100.0 * rep.n_verified / denom;
  rep.pct_not_verified = 100.0 * rep.n_not_verified / denom;
  return rep;
}

inline json verification_report_to_json(const VerificationReport& r) {
  json doc;
  doc["n_total"] = r.n_total;
  doc["n_inside"] = r.n_inside;
  doc["n_verified"] = r.n_verified;
  doc["n_not_verified"] = r.n_not_verified;
  doc["pct_inside"] = r.pct_inside;
  doc["pct_verified"] = r.pct_verified;
  doc["pct_not_verified"] = r.pct_not_verified;
  doc["relative_to_inside"] = r.relative_to_inside;
  return doc;
}

/// n states uniform on {x in X : V(x) <= l_s} by rejection from box proposals.
inline Mat rejection_sample_safe_states(const LyapunovFunction& V, const SafeLevel& ls,
                                        const BoxSet& X, int n, Rng& rng, long cap) {
  require(n >= 1, "rejection_sample_safe_states: n >= 1");
  require(cap >= n, "rejection_sample_safe_states: cap >= n");
  Mat out(n, X.dim());
  int accepted = 0;
  long proposals = 0;
  const double l = ls.value();
  while (accepted < n) {
    if (proposals >= cap) {
      const double rate = static_cast<double>(accepted) / static_cast<double>(proposals);
      throw DivergenceError("rejection_sample_safe_states: proposal cap exceeded (acceptance rate " +
                            std::to_string(rate) + "); the level set may be too small");
    }
    const Vec x = X.sample(rng);
    ++proposals;
    if (v_eval(V, x) <= l) out.row(accepted++) = x.transpose();
  }
  return out;
}

/// Task metrics of closed-loop rollouts: stability is ||x(T)|| < threshold on
/// the kept dimensions; safety additionally requires the whole trajectory to
/// respect the state box.
struct TaskMetrics {
  double stability_rate = 0.0;
  double safety_rate = 0.0;
  long n = 0;
};

inline TaskMetrics stability_safety_metrics(const std::vector<Trajectory>& trajs, const BoxSet& X,
                                            double threshold = 0.2,
                                            const std::vector<int>& exclude_dims = {}) {
  require(!trajs.empty(), "stability_safety_metrics: empty trajectory set");
  TaskMetrics m;
  m.n = static_cast<long>(trajs.size());
  long stable = 0, safe = 0;
  for (const auto& t : trajs) {
    const Vec xT = t.states.row(t.states.rows() - 1).transpose();
    double nrm2 = 0.0;
    for (Eigen::Index d = 0; d < xT.size(); ++d) {
      if (std::find(exclude_dims.begin(), exclude_dims.end(), static_cast<int>(d)) !=
          exclude_dims.end())
        continue;
      nrm2 += xT[d] * xT[d];
    }
    const bool is_stable = std::sqrt(nrm2) < threshold;
    bool in_box = true;
    for (Eigen::Index s = 0; s < t.states.rows(); ++s)
      if (!X.contains(t.states.row(s).transpose(), 1e-9)) in_box = false;
    stable += is_stable;
    safe += (is_stable && in_box);
  }
  m.stability_rate = static_cast<double>(stable) / static_cast<double>(m.n);
  m.safety_rate = static_cast<double>(safe) / static_cast<double>(m.n);
  return m;
}

inline json task_metrics_to_json(const TaskMetrics& m) {
  json doc;
  doc["stability_rate"] = m.stability_rate;
  doc["safety_rate"] = m.safety_rate;
  doc["n"] = m.n;
  return doc;
}

// ---------------------------------------------------------------------------
// Calculators for the theoretical bounds
// ---------------------------------------------------------------------------

/// minimum terminal scaling: alpha_bar_1 = L_ell / (l_ell (1 - lambda))
inline double alpha_bar_lower_bound(double L_ell, double l_ell, double lambda) {
  require(l_ell > 0, "alpha_bar_lower_bound: l_ell > 0");
  require(lambda >= 0, "alpha_bar_lower_bound: lambda >= 0");
  if (lambda >= 1.0) throw NumericError("alpha_bar_lower_bound: lambda = 1 divides by zero");
  return L_ell / (l_ell * (1.0 - lambda));
}

/// admissible one-step model error: mu_bar = sqrt((1-lambda) l_s / (L_V L_fx^(2N)))
inline double model_error_bound(double lambda, double L_V, double L_fx_hat, int N, double l_s) {
  require(lambda >= 0 && lambda < 1, "model_error_bound: lambda in [0,1)");
  require(L_V > 0 && L_fx_hat > 0 && N >= 1, "model_error_bound: positive inputs required");
  require(l_s >= 0, "model_error_bound: l_s >= 0");
  return std::sqrt((1.0 - lambda) * l_s / (L_V * std::pow(L_fx_hat, 2.0 * N)));
}

/// Right-hand side of the performance gap bound: value-error term, discounted
/// stage and terminal mismatch terms with exact geometric sums, the
/// constraint-penalty value psi_bar, and the delta-weighted true MPC cost.
/// gamma = 1 with eps > 0 yields the defined-infinite sentinel.
inline double performance_bound(double eps, double gamma, int N, double Q_norm, double alpha,
                                double L_V, double L_bar, double mu, double delta,
                                double J_mpc_true, double psi_bar) {
  require(gamma > 0 && gamma <= 1.0, "performance_bound: gamma in (0,1]");
  require(N >= 1, "performance_bound: N >= 1");
  require(delta > 0, "performance_bound: delta > 0");
  require(eps >= 0 && mu >= 0, "performance_bound: eps, mu >= 0");

  double value_term;
  if (gamma == 1.0) {
    if (eps > 0) return std::numeric_limits<double>::infinity();
    value_term = 0.0;
  } else {
    const double gN = std::pow(gamma, N);
    value_term = 2.0 * gN * eps / (1.0 - gN);
  }

  auto geo_sum = [&](int count) {  // sum_{j=0}^{count-1} L_bar^j, exact
    double s = 0.0, p = 1.0;
    for (int j = 0; j < count; ++j) {
      s += p;
      p *= L_bar;
    }
    return s;
  };

  double stage_term = 0.0;
  double gpow = 1.0;
  for (int i = 0; i < N; ++i) {
    const double inner = geo_sum(i);
    stage_term += gpow * inner * inner * mu * mu;
    gpow *= gamma;
  }
  stage_term *= (1.0 + 1.0 / delta) * Q_norm;

  const double inner_N = geo_sum(N);
  const double terminal_term =
      (1.0 + 1.0 / delta) * std::pow(gamma, N) * alpha * L_V * inner_N * inner_N * mu * mu;

  return value_term + stage_term + terminal_term + psi_bar + delta * J_mpc_true;
}

/// Empirical Lipschitz-style constants for the bound calculators; the method
/// string is recorded alongside any result that uses them.
struct LipschitzEstimate {
  double value = 0.0;
  std::string method;
};

/// max spectral norm of the state Jacobian over sampled points
inline LipschitzEstimate estimate_state_lipschitz(const DynamicsModel& model, const Mat& X,
                                                  const Mat& U) {
  LipschitzEstimate est;
  est.method = "max spectral norm of df/dx over " + std::to_string(X.rows()) + " dataset points";
  Mat A, B;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    model.linearize(X.row(r).transpose(), U.row(r).transpose(), A, B);
    Eigen::JacobiSVD<Mat> svd(A);
    est.value = std::max(est.value, svd.singularValues()[0]);
  }
  return est;
}

/// max V(x)/||x||^2 over sampled points (upper describing constant L_V)
inline LipschitzEstimate estimate_v_upper_bound(const LyapunovFunction& V, const Mat& X) {
  LipschitzEstimate est;
  est.method = "max V(x)/||x||^2 over " + std::to_string(X.rows()) + " dataset points";
  VBatchEval ws;
  const Vec v = v_eval_batch(V, X, ws);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double n2 = X.row(r).squaredNorm();
    if (n2 > 1e-12) est.value = std::max(est.value, v[r] / n2);
  }
  return est;
}

/// max l(x,u)/||x||^2 over demonstration pairs (stage-cost upper constant)
inline LipschitzEstimate estimate_stage_upper_bound(const Dataset& demo, const Mat& Q,
                                                    const Mat& R) {
  LipschitzEstimate est;
  est.method =
      "max stage_cost(x,u)/||x||^2 over " + std::to_string(demo.size()) + " demonstration tuples";
  const Vec ell = quad_form_batch(demo.states(), Q) + quad_form_batch(demo.inputs(), R);
  const Mat X = demo.states();
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double n2 = X.row(r).squaredNorm();
    if (n2 > 1e-12) est.value = std::max(est.value, ell[r] / n2);
  }
  return est;
}

}  // namespace nlmpc
