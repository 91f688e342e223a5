#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "nlmpc/adam.hpp"
#include "nlmpc/checkpoint.hpp"
#include "nlmpc/datasets.hpp"
#include "nlmpc/mlp.hpp"

namespace nlmpc {

/// Piecewise-quadratic Lyapunov candidate
///   V(x) = softplus(beta) x^T (l_ell I + W(x)^T W(x)) x,
/// where W(x) is the n_V x n_x matrix produced by v_net. V(0)=0 exactly and
/// V(x) >= softplus(beta) l_ell ||x||^2 by construction.
struct LyapunovFunction {
  Mlp v_net;  // n_x -> n_V * n_x, row-major reshape
  double l_ell = 0.1;
  double beta_raw = 0.0;
  int n_V = 1;

  int nx() const { return v_net.input_dim(); }
  double scale() const { return softplus(beta_raw); }

  void validate() const {
    v_net.validate();
    require(l_ell > 0, "LyapunovFunction: l_ell must be positive");
    require(v_net.output_dim() == n_V * nx(), "LyapunovFunction: v_net output must be n_V*n_x");
  }
};

/// Trainable safe level l_s > 0, kept positive through softplus.
struct SafeLevel {
  double raw = 0.0;
  double value() const { return softplus(raw); }
  static SafeLevel from_value(double v) {
    require(v > 0, "SafeLevel: level must be positive");
    return {softplus_inv(v)};
  }
};

inline LyapunovFunction make_lyapunov(int nx, const std::vector<int>& hidden, int n_V,
                                      double l_ell, double beta_scale_init, Rng& rng) {
  LyapunovFunction V;
  V.v_net = make_mlp(nx, hidden, n_V * nx, Activation::tanh, BiasInit::zeros, rng);
  V.l_ell = l_ell;
  V.beta_raw = softplus_inv(beta_scale_init);
  V.n_V = n_V;
  V.validate();
  return V;
}

// ---------------------------------------------------------------------------
// Quadratic-form contractions over a batch. O holds vec(W) per row.
// ---------------------------------------------------------------------------
namespace detail {

/// y = W x per row: Y(r,a) = sum_b O(r, a*nx+b) X(r,b)
inline Mat contract_W_x(const Mat& O, const Mat& X, int n_V) {
  const int nx = static_cast<int>(X.cols());
  Mat Y = Mat::Zero(X.rows(), n_V);
  for (int a = 0; a < n_V; ++a)
    for (int b = 0; b < nx; ++b) Y.col(a) += O.col(a * nx + b).cwiseProduct(X.col(b));
  return Y;
}

/// z = W^T y per row: Z(r,b) = sum_a O(r, a*nx+b) Y(r,a)
inline Mat contract_Wt_y(const Mat& O, const Mat& Y, int nx) {
  const int n_V = static_cast<int>(Y.cols());
  Mat Z = Mat::Zero(Y.rows(), nx);
  for (int a = 0; a < n_V; ++a)
    for (int b = 0; b < nx; ++b) Z.col(b) += O.col(a * nx + b).cwiseProduct(Y.col(a));
  return Z;
}

/// C(r, a*nx+b) = coef(r) * Y(r,a) * X(r,b)
inline Mat outer_cotangent(const Vec& coef, const Mat& Y, const Mat& X) {
  const int n_V = static_cast<int>(Y.cols());
  const int nx = static_cast<int>(X.cols());
  Mat C(X.rows(), n_V * nx);
  for (int a = 0; a < n_V; ++a) {
    const Vec cy = coef.cwiseProduct(Y.col(a));
    for (int b = 0; b < nx; ++b) C.col(a * nx + b) = cy.cwiseProduct(X.col(b));
  }
  return C;
}

}  // namespace detail

/// Batched V evaluation; the workspace retains everything needed for
/// parameter backprop and input-Hessian passes on the same points.
struct VBatchEval {
  MlpBatchCache cache;
  Mat X;     // evaluation points
  Mat Y;     // W(x) x per row
  Vec vals;  // V(x)
};

inline const Vec& v_eval_batch(const LyapunovFunction& V, const Mat& X, VBatchEval& ws) {
  require(X.cols() == V.nx(), "v_eval: dimension mismatch");
  ws.X = X;
  const Mat& O = mlp_forward_batch(V.v_net, X, ws.cache);
  ws.Y = detail::contract_W_x(O, X, V.n_V);
  ws.vals = V.scale() *
            (V.l_ell * X.cwiseProduct(X).rowwise().sum() + ws.Y.cwiseProduct(ws.Y).rowwise().sum());
  return ws.vals;
}

inline double v_eval(const LyapunovFunction& V, const Vec& x) {
  VBatchEval ws;
  Mat X(1, x.size());
  X.row(0) = x.transpose();
  return v_eval_batch(V, X, ws)[0];
}

/// Value, gradient and full input Hessian of V at every row of X
/// (forward-over-reverse through the network; exact up to round-off).
struct VTaylorBatch {
  Vec vals;
  Mat grads;              // B x n_x
  std::vector<Mat> hess;  // n_x x n_x each, symmetrized
};

inline VTaylorBatch v_taylor_batch(const LyapunovFunction& V, const Mat& X) {
  const int nx = V.nx();
  const int B = static_cast<int>(X.rows());
  const double s = V.scale();
  VBatchEval ws;
  v_eval_batch(V, X, ws);
  const Mat& O = ws.cache.x.back();

  VTaylorBatch out;
  out.vals = ws.vals;
  const Mat Z = detail::contract_Wt_y(O, ws.Y, nx);
  const Mat C = detail::outer_cotangent(Vec::Constant(B, 2.0 * s), ws.Y, X);
  const Mat g_net = mlp_vjp_batch(V.v_net, ws.cache, C, nullptr, /*keep_grad_chain=*/true);
  out.grads = 2.0 * s * (V.l_ell * X + Z) + g_net;

  out.hess.assign(B, Mat::Zero(nx, nx));
  MlpDualCache dc;
  for (int d = 0; d < nx; ++d) {
    Mat Xdot = Mat::Zero(B, nx);
    Xdot.col(d).setOnes();
    const Mat& Odot = mlp_jvp_batch(V.v_net, ws.cache, Xdot, dc);
    // ydot = Wdot x + W e_d
    Mat Ydot = detail::contract_W_x(Odot, X, V.n_V);
    for (int a = 0; a < V.n_V; ++a) Ydot.col(a) += O.col(a * nx + d);
    // cotangent derivative: 2s (ydot x^T + y xdot^T)
    Mat Cdot = detail::outer_cotangent(Vec::Constant(B, 2.0 * s), Ydot, X);
    for (int a = 0; a < V.n_V; ++a) Cdot.col(a * nx + d) += 2.0 * s * ws.Y.col(a);
    const Mat gdot_net = mlp_vjp_dual_batch(V.v_net, ws.cache, dc, Cdot);
    // direct term derivative: 2s (l_ell e_d + Zdot)
    const Mat Zdot = detail::contract_Wt_y(Odot, ws.Y, nx) + detail::contract_Wt_y(O, Ydot, nx);
    for (int r = 0; r < B; ++r) {
      out.hess[r].col(d) = (2.0 * s * Zdot.row(r) + gdot_net.row(r)).transpose();
      out.hess[r](d, d) += 2.0 * s * V.l_ell;
    }
  }
  for (auto& H : out.hess) H = 0.5 * (H + H.transpose()).eval();
  return out;
}

/// Disadvantage Delta V(x) = V(x+) - lambda V(x) (+ stage cost when given);
/// negative means the decrease condition holds.
inline double delta_v(const LyapunovFunction& V, const Vec& x, const Vec& x_plus, double lambda,
                      std::optional<double> stage_cost = std::nullopt) {
  return v_eval(V, x_plus) - lambda * v_eval(V, x) + stage_cost.value_or(0.0);
}

// ---------------------------------------------------------------------------
// Training loss
// ---------------------------------------------------------------------------

enum class JVolSign { as_written, negated };

inline const char* to_string(JVolSign s) {
  return s == JVolSign::as_written ? "as_written" : "negated";
}
inline JVolSign j_vol_sign_from_string(const std::string& s) {
  if (s == "as_written") return JVolSign::as_written;
  if (s == "negated") return JVolSign::negated;
  throw ContractViolation("unknown j_vol_sign: " + s);
}

struct LyapunovLossConfig {
  double lambda = 0.99;       // contraction factor in [0,1)
  double rho = 1e-3;          // stability/volume trade-off
  double eps_V = 1e-3;        // denominator regularizer
  bool use_stage_cost = false;
  double stage_cost_weight = 1.0;  // scales l(x,u) inside Delta V
  JVolSign j_vol_sign = JVolSign::as_written;

  void validate() const {
    require(lambda >= 0 && lambda < 1, "LyapunovLossConfig: lambda in [0,1)");
    require(rho > 0, "LyapunovLossConfig: rho > 0");
    require(eps_V > 0, "LyapunovLossConfig: eps_V > 0");
  }
};

/// Per-point quantities and classification counts from one loss evaluation.
struct LossDiagnostics {
  Vec v_x, v_xp, dv;
  Vec inside;  // 1 when V(x) <= l_s (sign tie -> inside)
  int n_inside = 0, n_verified = 0, n_not_verified = 0;
};

/// Frozen nondifferentiable factors of the loss, evaluated at current values
/// and treated as constants during differentiation.
struct LossMasks {
  Vec inside;     // indicator I
  Vec sign_dec;   // sign(-dV), ties -> +1
  Vec pos;        // 1 where dV > 0
};

namespace detail {

inline Vec stage_cost_terms(const Dataset& data, const Mat& Q, const Mat& R) {
  return quad_form_batch(data.states(), Q) + quad_form_batch(data.inputs(), R);
}

}  // namespace detail

/// Evaluate the training loss with externally fixed masks; together with
/// lyapunov_loss_masks this is the piecewise-smooth function the analytic
/// gradient differentiates, so finite-difference checks hold exactly.
inline double lyapunov_loss_with_masks(const LyapunovFunction& V, const SafeLevel& ls,
                                       const Mat& X, const Mat& XP, const Vec& stage,
                                       const LyapunovLossConfig& cfg, const LossMasks& masks) {
  VBatchEval wx, wxp;
  const Vec& vx = v_eval_batch(V, X, wx);
  const Vec& vxp = v_eval_batch(V, XP, wxp);
  const Vec dv = vxp - cfg.lambda * vx + stage;
  const double l = ls.value();
  const double M = static_cast<double>(X.rows());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double js = masks.pos[i] * dv[i] / (vx[i] + cfg.eps_V);
    const double jvol = masks.sign_dec[i] * (l - vx[i]);
    acc += masks.inside[i] / cfg.rho * js +
           (cfg.j_vol_sign == JVolSign::as_written ? jvol : -jvol);
  }
  return acc / M;
}

inline LossMasks lyapunov_loss_masks(const Vec& v_x, const Vec& dv, double l_s) {
  LossMasks m;
  const Eigen::Index n = v_x.size();
  m.inside.resize(n);
  m.sign_dec.resize(n);
  m.pos.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m.inside[i] = (l_s - v_x[i] >= 0.0) ? 1.0 : 0.0;  // 0.5(sign+1), sign[0] -> +1
    m.sign_dec[i] = (-dv[i] >= 0.0) ? 1.0 : -1.0;
    m.pos[i] = (dv[i] > 0.0) ? 1.0 : 0.0;
  }
  return m;
}

/// Loss (9): mean of I/rho * max(dV,0)/(V(x)+eps) + J_vol over the dataset.
/// `Q`,`R` are only consulted when cfg.use_stage_cost is set.
inline std::pair<double, LossDiagnostics> lyapunov_loss(const LyapunovFunction& V,
                                                        const SafeLevel& ls, const Dataset& data,
                                                        const LyapunovLossConfig& cfg,
                                                        const Mat& Q = Mat(), const Mat& R = Mat()) {
  require(!data.empty(), "lyapunov_loss: empty dataset");
  cfg.validate();
  const Mat X = data.states(), XP = data.next_states();
  const Vec stage = cfg.use_stage_cost
                        ? Vec(cfg.stage_cost_weight * detail::stage_cost_terms(data, Q, R))
                        : Vec(Vec::Zero(X.rows()));
  VBatchEval wx, wxp;
  LossDiagnostics diag;
  diag.v_x = v_eval_batch(V, X, wx);
  diag.v_xp = v_eval_batch(V, XP, wxp);
  diag.dv = diag.v_xp - cfg.lambda * diag.v_x + stage;
  const LossMasks masks = lyapunov_loss_masks(diag.v_x, diag.dv, ls.value());
  diag.inside = masks.inside;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (masks.inside[i] > 0.5) {
      ++diag.n_inside;
      (diag.dv[i] <= 0.0 ? diag.n_verified : diag.n_not_verified)++;
    }
  }
  const double loss = lyapunov_loss_with_masks(V, ls, X, XP, stage, cfg, masks);
  if (!std::isfinite(loss)) throw NumericError("lyapunov_loss: non-finite loss");
  return {loss, diag};
}

// ---------------------------------------------------------------------------
// Parameter gradient (reverse-mode, masks frozen)
// ---------------------------------------------------------------------------

/// Trainable parameter vector layout: [v_net params, beta_raw, l_s_raw].
inline int lyapunov_param_count(const LyapunovFunction& V) { return mlp_param_count(V.v_net) + 2; }

inline Vec lyapunov_get_params(const LyapunovFunction& V, const SafeLevel& ls) {
  Vec p(lyapunov_param_count(V));
  Vec net;
  mlp_get_params(V.v_net, net);
  p.head(net.size()) = net;
  p[net.size()] = V.beta_raw;
  p[net.size() + 1] = ls.raw;
  return p;
}

inline void lyapunov_set_params(LyapunovFunction& V, SafeLevel& ls, const Vec& p) {
  require(p.size() == lyapunov_param_count(V), "lyapunov_set_params: size mismatch");
  Vec net = p.head(p.size() - 2);
  mlp_set_params(V.v_net, net);
  V.beta_raw = p[p.size() - 2];
  ls.raw = p[p.size() - 1];
}

/// weight-decay mask: 1 on v_net weight entries only
inline Vec lyapunov_decay_mask(const LyapunovFunction& V) {
  Vec m(lyapunov_param_count(V));
  m.head(m.size() - 2) = mlp_weight_mask(V.v_net);
  m[m.size() - 2] = 0.0;
  m[m.size() - 1] = 0.0;
  return m;
}

inline std::pair<double, Vec> lyapunov_loss_grad(const LyapunovFunction& V, const SafeLevel& ls,
                                                 const Mat& X, const Mat& XP, const Vec& stage,
                                                 const LyapunovLossConfig& cfg,
                                                 LossDiagnostics* diag_out = nullptr) {
  const double M = static_cast<double>(X.rows());
  const double s = V.scale();
  VBatchEval wx, wxp;
  const Vec vx = v_eval_batch(V, X, wx);
  const Vec vxp = v_eval_batch(V, XP, wxp);
  const Vec dv = vxp - cfg.lambda * vx + stage;
  const double l = ls.value();
  const LossMasks masks = lyapunov_loss_masks(vx, dv, l);

  Vec d_vx(X.rows()), d_vxp(X.rows());
  double d_ls = 0.0;
  const double jvol_sgn = cfg.j_vol_sign == JVolSign::as_written ? 1.0 : -1.0;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double denom = vx[i] + cfg.eps_V;
    const double a = masks.inside[i] / (cfg.rho * M);
    loss += a * masks.pos[i] * dv[i] / denom + jvol_sgn * masks.sign_dec[i] * (l - vx[i]) / M;
    d_vxp[i] = a * masks.pos[i] / denom;
    d_vx[i] = a * (masks.pos[i] * (-cfg.lambda) / denom - masks.pos[i] * dv[i] / (denom * denom)) -
              jvol_sgn * masks.sign_dec[i] / M;
    d_ls += jvol_sgn * masks.sign_dec[i] / M;
  }

  MlpGrads grads;
  grads.set_zero(V.v_net);
  const Mat Cx = detail::outer_cotangent((2.0 * s) * d_vx, wx.Y, X);
  const Mat Cxp = detail::outer_cotangent((2.0 * s) * d_vxp, wxp.Y, XP);
  mlp_vjp_batch(V.v_net, wx.cache, Cx, &grads);
  mlp_vjp_batch(V.v_net, wxp.cache, Cxp, &grads);

  Vec g(lyapunov_param_count(V));
  Vec gnet;
  mlp_grads_to_vec(V.v_net, grads, gnet);
  g.head(gnet.size()) = gnet;
  // dV/dbeta_raw = V/s * sigmoid(beta_raw)
  g[gnet.size()] = sigmoid(V.beta_raw) / s * (d_vx.dot(vx) + d_vxp.dot(vxp));
  g[gnet.size() + 1] = d_ls * sigmoid(ls.raw);

  if (diag_out) {
    diag_out->v_x = vx;
    diag_out->v_xp = vxp;
    diag_out->dv = dv;
    diag_out->inside = masks.inside;
    diag_out->n_inside = diag_out->n_verified = diag_out->n_not_verified = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (masks.inside[i] > 0.5) {
        ++diag_out->n_inside;
        (dv[i] <= 0.0 ? diag_out->n_verified : diag_out->n_not_verified)++;
      }
    }
  }
  return {loss, g};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct LyapunovTrainConfig {
  int epochs = 200;  // N_V passes over the training split
  double lr = 1e-3;
  double weight_decay = 0.0;
  double val_frac = 0.3;
  int batch = 512;  // 0 = full batch (one Adam step per epoch)
  // step multiplier for the safe-level parameter: the scalar l_s channel has
  // to keep pace with the network-driven motion of the V values
  double ls_lr_scale = 50.0;
};

struct EpochMetrics {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double verified_pct = 0.0;      // of validation points
  double not_verified_pct = 0.0;  // of validation points
};

struct LyapunovTrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
};

struct LyapunovTrainingError : NumericError {
  json last_good;
  LyapunovTrainingError(const std::string& msg, json ckpt)
      : NumericError(msg), last_good(std::move(ckpt)) {}
};

inline json lyapunov_to_json(const LyapunovFunction& V, const SafeLevel& ls,
                             const LyapunovLossConfig& cfg) {
  json doc;
  doc["v_net"] = mlp_to_json(V.v_net);
  doc["l_ell"] = V.l_ell;
  doc["beta"] = V.beta_raw;
  doc["n_V"] = V.n_V;
  doc["l_s"] = ls.raw;
  doc["loss_config"] = {{"lambda", cfg.lambda},
                        {"rho", cfg.rho},
                        {"eps_V", cfg.eps_V},
                        {"use_stage_cost", cfg.use_stage_cost},
                        {"stage_cost_weight", cfg.stage_cost_weight},
                        {"j_vol_sign", to_string(cfg.j_vol_sign)}};
  return doc;
}

inline std::tuple<LyapunovFunction, SafeLevel, LyapunovLossConfig> lyapunov_from_json(
    const json& doc) {
  LyapunovFunction V;
  V.v_net = mlp_from_json(doc.at("v_net"));
  V.l_ell = doc.at("l_ell").get<double>();
  V.beta_raw = doc.at("beta").get<double>();
  V.n_V = doc.at("n_V").get<int>();
  V.validate();
  SafeLevel ls{doc.at("l_s").get<double>()};
  LyapunovLossConfig cfg;
  const auto& jc = doc.at("loss_config");
  cfg.lambda = jc.at("lambda").get<double>();
  cfg.rho = jc.at("rho").get<double>();
  cfg.eps_V = jc.at("eps_V").get<double>();
  cfg.use_stage_cost = jc.at("use_stage_cost").get<bool>();
  cfg.stage_cost_weight = jc.at("stage_cost_weight").get<double>();
  cfg.j_vol_sign = j_vol_sign_from_string(jc.at("j_vol_sign").get<std::string>());
  return {V, ls, cfg};
}

/// N_V full-batch Adam steps on loss (9) over a 70/30 train/validation split.
/// The parameters kept are those of the best epoch under the selection order
/// (min not-verified %, max verified %, min validation loss).
inline LyapunovTrainResult train_lyapunov(LyapunovFunction& V, SafeLevel& ls, const Dataset& data,
                                          const LyapunovTrainConfig& tcfg,
                                          const LyapunovLossConfig& lcfg, const Mat& Q, const Mat& R,
                                          Rng& rng) {
  require(!data.empty(), "train_lyapunov: empty dataset");
  lcfg.validate();

  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
  const Eigen::Index n_val = std::min<Eigen::Index>(
      n - 1, static_cast<Eigen::Index>(tcfg.val_frac * static_cast<double>(n)));
  const Eigen::Index n_train = n - n_val;

  const Mat Xall = data.states(), XPall = data.next_states();
  const Vec stage_all = lcfg.use_stage_cost
                            ? Vec(lcfg.stage_cost_weight * detail::stage_cost_terms(data, Q, R))
                            : Vec(Vec::Zero(n));
  auto gather_rows = [&](const Mat& src, Eigen::Index lo, Eigen::Index hi) {
    Mat out(hi - lo, src.cols());
    for (Eigen::Index r = lo; r < hi; ++r) out.row(r - lo) = src.row(order[r]);
    return out;
  };
  const Mat Xt = gather_rows(Xall, 0, n_train), XPt = gather_rows(XPall, 0, n_train);
  const Mat Xv = gather_rows(Xall, n_train, n), XPv = gather_rows(XPall, n_train, n);
  Vec stage_t(n_train), stage_v(n_val);
  for (Eigen::Index r = 0; r < n_train; ++r) stage_t[r] = stage_all[order[r]];
  for (Eigen::Index r = 0; r < n_val; ++r) stage_v[r] = stage_all[order[n_train + r]];

  Vec params = lyapunov_get_params(V, ls);
  AdamState adam = AdamState::init(params.size(), tcfg.lr, tcfg.weight_decay);
  adam.decay_mask = lyapunov_decay_mask(V);
  adam.lr_scale = Vec::Ones(params.size());
  adam.lr_scale[params.size() - 1] = tcfg.ls_lr_scale;

  LyapunovTrainResult result;
  Vec best_params = params;
  double best_nv = 1e300, best_v = -1e300, best_loss = 1e300;
  json last_good = lyapunov_to_json(V, ls, lcfg);

  auto eval_val = [&](EpochMetrics& em) {
    if (n_val == 0) {
      em.val_loss = em.train_loss;
      return;
    }
    VBatchEval wx, wxp;
    const Vec vx = v_eval_batch(V, Xv, wx);
    const Vec vxp = v_eval_batch(V, XPv, wxp);
    const Vec dv = vxp - lcfg.lambda * vx + stage_v;
    const LossMasks masks = lyapunov_loss_masks(vx, dv, ls.value());
    em.val_loss = lyapunov_loss_with_masks(V, ls, Xv, XPv, stage_v, lcfg, masks);
    int n_ver = 0, n_not = 0;
    for (Eigen::Index i = 0; i < n_val; ++i) {
      if (masks.inside[i] > 0.5) (dv[i] <= 0.0 ? n_ver : n_not)++;
    }
    em.verified_pct = 100.0 * n_ver / static_cast<double>(n_val);
    em.not_verified_pct = 100.0 * n_not / static_cast<double>(n_val);
  };

  std::vector<Eigen::Index> batch_order(n_train);
  std::iota(batch_order.begin(), batch_order.end(), 0);
  const Eigen::Index bsz = tcfg.batch > 0 ? std::min<Eigen::Index>(tcfg.batch, n_train) : n_train;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    for (Eigen::Index i = n_train - 1; i > 0; --i)
      std::swap(batch_order[i], batch_order[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
    double epoch_loss = 0.0;
    Eigen::Index n_batches = 0;
    for (Eigen::Index lo = 0; lo + bsz <= n_train; lo += bsz) {
      Mat Xb(bsz, Xt.cols()), XPb(bsz, Xt.cols());
      Vec stage_b(bsz);
      for (Eigen::Index i = 0; i < bsz; ++i) {
        Xb.row(i) = Xt.row(batch_order[lo + i]);
        XPb.row(i) = XPt.row(batch_order[lo + i]);
        stage_b[i] = stage_t[batch_order[lo + i]];
      }
      auto [loss, grad] = lyapunov_loss_grad(V, ls, Xb, XPb, stage_b, lcfg);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw LyapunovTrainingError(
            "train_lyapunov: loss diverged at epoch " + std::to_string(epoch), last_good);
      adam_step(params, grad, adam);
      lyapunov_set_params(V, ls, params);
      epoch_loss += loss;
      ++n_batches;
    }
    last_good = lyapunov_to_json(V, ls, lcfg);

    EpochMetrics em;
    em.train_loss = epoch_loss / static_cast<double>(std::max<Eigen::Index>(1, n_batches));
    eval_val(em);
    result.epochs.push_back(em);

    const bool better = (em.not_verified_pct < best_nv) ||
                        (em.not_verified_pct == best_nv && em.verified_pct > best_v) ||
                        (em.not_verified_pct == best_nv && em.verified_pct == best_v &&
                         em.val_loss < best_loss);
    if (better) {
      best_nv = em.not_verified_pct;
      best_v = em.verified_pct;
      best_loss = em.val_loss;
      best_params = params;
      result.best_epoch = epoch;
    }
  }
  lyapunov_set_params(V, ls, best_params);
  return result;
}

/// Largest l <= l_s whose level set stays inside the box, judged on a dense
/// boundary grid plus random boundary samples; conservative (only shrinks).
inline SafeLevel shrink_safe_level(const LyapunovFunction& V, const SafeLevel& ls, const BoxSet& X,
                                   int n_samples, Rng& rng) {
  require(n_samples > 0, "shrink_safe_level: n_samples must be positive");
  const int nx = X.dim();
  std::vector<Vec> points;

  const int faces = 2 * nx;
  const int per_face = std::max(1, n_samples / faces);
  int k = nx >= 2 ? std::max(3, static_cast<int>(std::round(
                                    std::pow(per_face, 1.0 / static_cast<double>(nx - 1)))))
                  : 1;
  if (k % 2 == 0) ++k;  // odd grid includes face centers
  for (int d = 0; d < nx; ++d) {
    for (int side = 0; side < 2; ++side) {
      const double fixed = side == 0 ? X.lower[d] : X.upper[d];
      const int cells = nx >= 2 ? static_cast<int>(std::pow(k, nx - 1)) : 1;
      for (int c = 0; c < cells; ++c) {
        Vec x(nx);
        x[d] = fixed;
        int rem = c;
        for (int j = 0; j < nx; ++j) {
          if (j == d) continue;
          const int step = rem % k;
          rem /= k;
          x[j] = k == 1 ? 0.5 * (X.lower[j] + X.upper[j])
                        : X.lower[j] + (X.upper[j] - X.lower[j]) * step / (k - 1);
        }
        points.push_back(std::move(x));
      }
    }
  }
  for (int i = 0; i < n_samples; ++i) {
    Vec x = X.sample(rng);
    const int d = static_cast<int>(rng.uniform_int(nx));
    x[d] = rng.uniform01() < 0.5 ? X.lower[d] : X.upper[d];
    points.push_back(std::move(x));
  }

  Mat P(points.size(), nx);
  for (size_t i = 0; i < points.size(); ++i) P.row(i) = points[i].transpose();
  VBatchEval ws;
  const double min_boundary = v_eval_batch(V, P, ws).minCoeff();
  const double l_new = std::min(ls.value(), min_boundary);
  return SafeLevel::from_value(std::max(l_new, 1e-12));
}

}  // namespace nlmpc
