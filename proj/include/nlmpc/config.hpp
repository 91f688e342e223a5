#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nlmpc/dynamics.hpp"
#include "nlmpc/learning.hpp"
#include "nlmpc/serialize.hpp"
#include "nlmpc/surrogate.hpp"

namespace nlmpc {

namespace detail {

template <class T>
T get_req(const json& root, const std::string& pointer) {
  try {
    return root.at(json::json_pointer(pointer)).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(pointer + ": " + e.what());
  }
}

inline const json& at_req(const json& root, const std::string& pointer) {
  try {
    return root.at(json::json_pointer(pointer));
  } catch (const json::exception& e) {
    throw ConfigError(pointer + ": " + e.what());
  }
}

}  // namespace detail

struct SurrogateSection {
  std::vector<int> hidden;
  int n_samples = 10000;
  SurrogateTrainConfig train;
};

struct LyapunovSection {
  std::vector<int> hidden;
  int n_V = 100;
  double l_ell = 0.1;
  double beta_scale_init = 1.0;  // initial softplus(beta)
  double l_s_init = 1.0;
  // when positive, initialize l_s at this quantile of V over the demo states
  // (l_s moves slowly under Adam, so its starting scale has to match the data)
  double l_s_init_quantile = 0.0;
  LyapunovLossConfig loss;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double val_frac = 0.3;
  int batch = 512;
};

struct MpcSection {
  int N = 1;
  double gamma = 1.0;
  double eta1 = 100.0;
  double eta2 = 1000.0;
  bool discount_slack = false;
  std::string terminal = "lyapunov";  // "lqr" | "stage_q" | "lyapunov"
  double terminal_scale = 1.0;
  SqpConfig sqp;
};

struct LearningSection {
  int N_ext = 2;
  double eps_ext = 0.1;
  std::vector<double> alpha_list;
  int N_V = 200;
  double subsample_frac = 0.2;
  bool reinit_V = false;
  int shrink_samples = 2000;
  std::string prediction_model = "nominal";  // "nominal" | "surrogate"
  int demo_count = 10000;
  InitScheme demo_scheme = InitScheme::grid;
};

struct RolloutSection {
  int T = 80;
  int n_starts = 100;
  long rejection_cap = 4000000;
  double stability_threshold = 0.2;
  std::vector<int> exclude_dims;  // car: orientation excluded from the terminal norm
};

struct GridAxis {
  // either a [min,max] range swept at `resolution` points, or a fixed value
  double min = 0.0, max = 0.0;
  std::optional<double> fixed;
};

struct GridSection {
  std::vector<GridAxis> axes;
  int resolution = 50;
};

struct BoundsSection {
  double lambda = 0.99;
  double l_ell = 0.1;
  double L_ell = 1.0;
  double L_V = 1.0;
  double L_fx_hat = 1.0;
  int N = 1;
  double l_s = 1.0;
  double eps = 0.0;
  double gamma = 1.0;
  double Q_norm = 1.0;
  double alpha = 1.0;
  double L_bar = 1.0;
  double mu = 0.0;
  double delta = 1.0;
  double J_mpc_true = 0.0;
  double psi_bar = 0.0;
  bool estimate_from_artifacts = false;
};

/// Complete description of one experiment arm; every field is explicit in the
/// shipped config files.
struct RunConfig {
  std::string plant;  // "pendulum" | "car"
  std::uint64_t seed = 0;
  std::string output_dir;
  PendulumParams pendulum;
  CarParams car;
  BoxSet X, U;
  Mat Q, R;
  SurrogateSection surrogate;
  LyapunovSection lyapunov;
  MpcSection demonstrator;
  MpcSection nlmpc;
  LearningSection learning;
  RolloutSection rollout;
  GridSection grid;
  BoundsSection bounds;

  int nx() const { return plant == "pendulum" ? 2 : 3; }
  int nu() const { return plant == "pendulum" ? 1 : 2; }
};

// ---------------------------------------------------------------------------
// Defaults for the four experiment arms
// ---------------------------------------------------------------------------

inline RunConfig default_pendulum_config(bool surrogate_arm) {
  RunConfig c;
  c.plant = "pendulum";
  c.seed = 0;
  c.output_dir = surrogate_arm ? "runs/pendulum-surrogate" : "runs/pendulum-nominal";
  Vec xl(2), xu(2);
  xl << -M_PI, -2 * M_PI;
  xu << M_PI, 2 * M_PI;
  c.X = BoxSet(xl, xu);
  c.U = BoxSet(Vec::Constant(1, -0.64), Vec::Constant(1, 0.64));
  c.Q = 0.1 * Mat::Identity(2, 2);
  c.R = 0.1 * Mat::Identity(1, 1);

  c.surrogate.hidden = {64, 64, 64};
  c.surrogate.n_samples = 10000;

  c.lyapunov.hidden = {64, 64, 64};
  c.lyapunov.n_V = 100;
  c.lyapunov.l_ell = 0.1;  // min eigenvalue of Q
  c.lyapunov.l_s_init_quantile = 0.4;
  c.lyapunov.loss.lambda = 0.99;
  c.lyapunov.loss.rho = 1e-4;
  c.lyapunov.loss.eps_V = 1e-3;
  c.lyapunov.loss.use_stage_cost = true;
  c.lyapunov.loss.j_vol_sign = JVolSign::negated;
  c.lyapunov.lr = 1e-3;
  c.lyapunov.weight_decay = 0.002;

  c.demonstrator.N = 5;
  c.demonstrator.terminal = "lqr";
  c.demonstrator.terminal_scale = 500.0;
  c.demonstrator.sqp.n_steps = 10;
  c.demonstrator.sqp.r_trust = 2.5;
  c.demonstrator.sqp.lr = 0.9;
  c.demonstrator.sqp.eps_lr = 0.2;

  c.nlmpc.N = 1;
  c.nlmpc.terminal = "lyapunov";
  c.nlmpc.sqp.n_steps = 18;
  c.nlmpc.sqp.r_trust = 0.5;
  c.nlmpc.sqp.lr = 0.9;
  c.nlmpc.sqp.eps_lr = 0.02;

  c.learning.N_ext = 2;
  c.learning.eps_ext = 0.1;
  for (int i = 1; i <= 10; ++i) c.learning.alpha_list.push_back(0.2 * i);
  c.learning.N_V = 200;
  c.learning.reinit_V = false;
  c.learning.prediction_model = surrogate_arm ? "surrogate" : "nominal";
  c.learning.demo_count = 10000;
  c.learning.demo_scheme = InitScheme::grid;

  c.rollout.T = 80;
  c.rollout.n_starts = 100;

  c.grid.axes = {GridAxis{-M_PI, M_PI, std::nullopt}, GridAxis{-2 * M_PI, 2 * M_PI, std::nullopt}};
  c.grid.resolution = 50;

  c.bounds.l_ell = 0.1;
  return c;
}

inline RunConfig default_car_config(bool surrogate_arm) {
  RunConfig c;
  c.plant = "car";
  c.seed = 0;
  c.output_dir = surrogate_arm ? "runs/car-surrogate" : "runs/car-nominal";
  Vec xl(3), xu(3);
  xl << -1, -1, -M_PI;
  xu << 1, 1, M_PI;
  c.X = BoxSet(xl, xu);
  Vec ul(2), uu(2);
  ul << -10, -2 * M_PI;
  uu << 10, 2 * M_PI;
  c.U = BoxSet(ul, uu);
  Vec q_diag(3), r_diag(2);
  q_diag << 1.0, 1.0, 0.001 * M_PI;
  r_diag << 100.0, 20.0 * M_PI;
  c.Q = q_diag.asDiagonal();
  c.R = r_diag.asDiagonal();

  c.surrogate.hidden = {20};
  c.surrogate.n_samples = 10000;

  c.lyapunov.hidden = {128, 128, 128};
  c.lyapunov.n_V = 400;
  c.lyapunov.l_ell = 0.001 * M_PI;  // min eigenvalue of Q
  c.lyapunov.l_s_init_quantile = 0.4;
  c.lyapunov.loss.lambda = 0.99;
  c.lyapunov.loss.rho = 1e-4;
  c.lyapunov.loss.eps_V = 1e-3;
  c.lyapunov.loss.use_stage_cost = false;
  c.lyapunov.loss.j_vol_sign = JVolSign::negated;
  c.lyapunov.lr = 1e-3;
  c.lyapunov.weight_decay = 0.0;

  c.demonstrator.N = 5;
  c.demonstrator.terminal = "stage_q";
  c.demonstrator.terminal_scale = 400.0;
  c.demonstrator.sqp.n_steps = 3;
  c.demonstrator.sqp.r_trust = kQpInf;
  c.demonstrator.sqp.lr = 0.9;
  c.demonstrator.sqp.eps_lr = 0.2;

  c.nlmpc.N = 1;
  c.nlmpc.terminal = "lyapunov";
  c.nlmpc.sqp.n_steps = 18;
  c.nlmpc.sqp.r_trust = 0.005;
  c.nlmpc.sqp.lr = 0.9;
  c.nlmpc.sqp.eps_lr = 0.02;

  c.learning.N_ext = 3;
  c.learning.eps_ext = 0.1;
  for (int a = 1; a <= 36; a += 5) c.learning.alpha_list.push_back(a);
  c.learning.N_V = 500;
  c.learning.reinit_V = true;
  c.learning.prediction_model = surrogate_arm ? "surrogate" : "nominal";
  c.learning.demo_count = 10000;
  c.learning.demo_scheme = InitScheme::random;

  c.rollout.T = 40;
  c.rollout.n_starts = 150;
  c.rollout.exclude_dims = {2};  // orientation left out of the terminal norm

  c.grid.axes = {GridAxis{-1, 1, std::nullopt}, GridAxis{-1, 1, std::nullopt},
                 GridAxis{0, 0, 0.0}};
  c.grid.resolution = 50;

  c.bounds.l_ell = 0.001 * M_PI;
  return c;
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

inline json run_config_to_json(const RunConfig& c) {
  json doc;
  doc["plant"] = c.plant;
  doc["seed"] = c.seed;
  doc["output_dir"] = c.output_dir;
  if (c.plant == "pendulum") {
    doc["dynamics"] = {{"m", c.pendulum.m},
                       {"l", c.pendulum.l},
                       {"lambda_f", c.pendulum.lambda_f},
                       {"g", c.pendulum.g},
                       {"dt", c.pendulum.dt}};
  } else {
    doc["dynamics"] = {{"dt", c.car.dt}};
  }
  doc["boxes"] = {{"state_lower", vec_to_json(c.X.lower)},
                  {"state_upper", vec_to_json(c.X.upper)},
                  {"input_lower", vec_to_json(c.U.lower)},
                  {"input_upper", vec_to_json(c.U.upper)}};
  doc["stage_cost"] = {{"Q", mat_to_json(c.Q)}, {"R", mat_to_json(c.R)}};

  doc["surrogate"] = {{"hidden", c.surrogate.hidden},
                      {"n_samples", c.surrogate.n_samples},
                      {"epochs", c.surrogate.train.epochs},
                      {"lr", c.surrogate.train.lr},
                      {"batch", c.surrogate.train.batch},
                      {"train_frac", c.surrogate.train.train_frac}};

  doc["lyapunov"] = {{"hidden", c.lyapunov.hidden},
                     {"n_V", c.lyapunov.n_V},
                     {"l_ell", c.lyapunov.l_ell},
                     {"beta_scale_init", c.lyapunov.beta_scale_init},
                     {"l_s_init", c.lyapunov.l_s_init},
                     {"l_s_init_quantile", c.lyapunov.l_s_init_quantile},
                     {"lambda", c.lyapunov.loss.lambda},
                     {"rho", c.lyapunov.loss.rho},
                     {"eps_V", c.lyapunov.loss.eps_V},
                     {"use_stage_cost", c.lyapunov.loss.use_stage_cost},
                     {"stage_cost_weight", c.lyapunov.loss.stage_cost_weight},
                     {"j_vol_sign", to_string(c.lyapunov.loss.j_vol_sign)},
                     {"lr", c.lyapunov.lr},
                     {"weight_decay", c.lyapunov.weight_decay},
                     {"batch", c.lyapunov.batch},
                     {"val_frac", c.lyapunov.val_frac}};

  auto mpc_to_json = [](const MpcSection& m) {
    return json{{"N", m.N},
                {"gamma", m.gamma},
                {"eta1", m.eta1},
                {"eta2", m.eta2},
                {"discount_slack", m.discount_slack},
                {"terminal", m.terminal},
                {"terminal_scale", m.terminal_scale},
                {"n_steps", m.sqp.n_steps},
                {"r_trust", m.sqp.r_trust},
                {"lr", m.sqp.lr},
                {"eps_lr", m.sqp.eps_lr}};
  };
  doc["demonstrator"] = mpc_to_json(c.demonstrator);
  doc["nlmpc"] = mpc_to_json(c.nlmpc);

  doc["learning"] = {{"N_ext", c.learning.N_ext},
                     {"eps_ext", c.learning.eps_ext},
                     {"alpha_list", c.learning.alpha_list},
                     {"N_V", c.learning.N_V},
                     {"subsample_frac", c.learning.subsample_frac},
                     {"reinit_V", c.learning.reinit_V},
                     {"shrink_samples", c.learning.shrink_samples},
                     {"prediction_model", c.learning.prediction_model},
                     {"demo_count", c.learning.demo_count},
                     {"demo_scheme", to_string(c.learning.demo_scheme)}};

  doc["rollout"] = {{"T", c.rollout.T},
                    {"n_starts", c.rollout.n_starts},
                    {"rejection_cap", c.rollout.rejection_cap},
                    {"stability_threshold", c.rollout.stability_threshold},
                    {"exclude_dims", c.rollout.exclude_dims}};

  json axes = json::array();
  for (const auto& a : c.grid.axes) {
    if (a.fixed) axes.push_back({{"fixed", *a.fixed}});
    else axes.push_back({{"min", a.min}, {"max", a.max}});
  }
  doc["grid"] = {{"axes", axes}, {"resolution", c.grid.resolution}};

  doc["bounds"] = {{"lambda", c.bounds.lambda},
                   {"l_ell", c.bounds.l_ell},
                   {"L_ell", c.bounds.L_ell},
                   {"L_V", c.bounds.L_V},
                   {"L_fx_hat", c.bounds.L_fx_hat},
                   {"N", c.bounds.N},
                   {"l_s", c.bounds.l_s},
                   {"eps", c.bounds.eps},
                   {"gamma", c.bounds.gamma},
                   {"Q_norm", c.bounds.Q_norm},
                   {"alpha", c.bounds.alpha},
                   {"L_bar", c.bounds.L_bar},
                   {"mu", c.bounds.mu},
                   {"delta", c.bounds.delta},
                   {"J_mpc_true", c.bounds.J_mpc_true},
                   {"psi_bar", c.bounds.psi_bar},
                   {"estimate_from_artifacts", c.bounds.estimate_from_artifacts}};
  return doc;
}

inline RunConfig run_config_from_json(const json& doc) {
  using detail::at_req;
  using detail::get_req;
  RunConfig c;
  c.plant = get_req<std::string>(doc, "/plant");
  if (c.plant != "pendulum" && c.plant != "car")
    throw ConfigError("/plant: must be 'pendulum' or 'car'");
  c.seed = get_req<std::uint64_t>(doc, "/seed");
  c.output_dir = get_req<std::string>(doc, "/output_dir");
  if (c.plant == "pendulum") {
    c.pendulum.m = get_req<double>(doc, "/dynamics/m");
    c.pendulum.l = get_req<double>(doc, "/dynamics/l");
    c.pendulum.lambda_f = get_req<double>(doc, "/dynamics/lambda_f");
    c.pendulum.g = get_req<double>(doc, "/dynamics/g");
    c.pendulum.dt = get_req<double>(doc, "/dynamics/dt");
    c.pendulum.validate();
  } else {
    c.car.dt = get_req<double>(doc, "/dynamics/dt");
    c.car.validate();
  }
  c.X = BoxSet(vec_from_json(at_req(doc, "/boxes/state_lower")),
               vec_from_json(at_req(doc, "/boxes/state_upper")));
  c.U = BoxSet(vec_from_json(at_req(doc, "/boxes/input_lower")),
               vec_from_json(at_req(doc, "/boxes/input_upper")));
  if (c.X.dim() != c.nx()) throw ConfigError("/boxes/state_lower: wrong dimension for plant");
  if (c.U.dim() != c.nu()) throw ConfigError("/boxes/input_lower: wrong dimension for plant");
  c.Q = mat_from_json(at_req(doc, "/stage_cost/Q"), c.nx(), c.nx());
  c.R = mat_from_json(at_req(doc, "/stage_cost/R"), c.nu(), c.nu());

  c.surrogate.hidden = get_req<std::vector<int>>(doc, "/surrogate/hidden");
  c.surrogate.n_samples = get_req<int>(doc, "/surrogate/n_samples");
  c.surrogate.train.epochs = get_req<int>(doc, "/surrogate/epochs");
  c.surrogate.train.lr = get_req<double>(doc, "/surrogate/lr");
  c.surrogate.train.batch = get_req<int>(doc, "/surrogate/batch");
  c.surrogate.train.train_frac = get_req<double>(doc, "/surrogate/train_frac");

  c.lyapunov.hidden = get_req<std::vector<int>>(doc, "/lyapunov/hidden");
  c.lyapunov.n_V = get_req<int>(doc, "/lyapunov/n_V");
  c.lyapunov.l_ell = get_req<double>(doc, "/lyapunov/l_ell");
  c.lyapunov.beta_scale_init = get_req<double>(doc, "/lyapunov/beta_scale_init");
  c.lyapunov.l_s_init = get_req<double>(doc, "/lyapunov/l_s_init");
  c.lyapunov.l_s_init_quantile = get_req<double>(doc, "/lyapunov/l_s_init_quantile");
  c.lyapunov.loss.lambda = get_req<double>(doc, "/lyapunov/lambda");
  c.lyapunov.loss.rho = get_req<double>(doc, "/lyapunov/rho");
  c.lyapunov.loss.eps_V = get_req<double>(doc, "/lyapunov/eps_V");
  c.lyapunov.loss.use_stage_cost = get_req<bool>(doc, "/lyapunov/use_stage_cost");
  c.lyapunov.loss.stage_cost_weight = get_req<double>(doc, "/lyapunov/stage_cost_weight");
  c.lyapunov.loss.j_vol_sign =
      j_vol_sign_from_string(get_req<std::string>(doc, "/lyapunov/j_vol_sign"));
  c.lyapunov.loss.validate();
  c.lyapunov.lr = get_req<double>(doc, "/lyapunov/lr");
  c.lyapunov.weight_decay = get_req<double>(doc, "/lyapunov/weight_decay");
  c.lyapunov.val_frac = get_req<double>(doc, "/lyapunov/val_frac");
  c.lyapunov.batch = get_req<int>(doc, "/lyapunov/batch");

  auto mpc_from = [&](const std::string& base) {
    MpcSection m;
    m.N = get_req<int>(doc, base + "/N");
    m.gamma = get_req<double>(doc, base + "/gamma");
    m.eta1 = get_req<double>(doc, base + "/eta1");
    m.eta2 = get_req<double>(doc, base + "/eta2");
    m.discount_slack = get_req<bool>(doc, base + "/discount_slack");
    m.terminal = get_req<std::string>(doc, base + "/terminal");
    m.terminal_scale = get_req<double>(doc, base + "/terminal_scale");
    m.sqp.n_steps = get_req<int>(doc, base + "/n_steps");
    m.sqp.r_trust = get_req<double>(doc, base + "/r_trust");
    m.sqp.lr = get_req<double>(doc, base + "/lr");
    m.sqp.eps_lr = get_req<double>(doc, base + "/eps_lr");
    m.sqp.validate();
    return m;
  };
  c.demonstrator = mpc_from("/demonstrator");
  c.nlmpc = mpc_from("/nlmpc");

  c.learning.N_ext = get_req<int>(doc, "/learning/N_ext");
  c.learning.eps_ext = get_req<double>(doc, "/learning/eps_ext");
  c.learning.alpha_list = get_req<std::vector<double>>(doc, "/learning/alpha_list");
  c.learning.N_V = get_req<int>(doc, "/learning/N_V");
  c.learning.subsample_frac = get_req<double>(doc, "/learning/subsample_frac");
  c.learning.reinit_V = get_req<bool>(doc, "/learning/reinit_V");
  c.learning.shrink_samples = get_req<int>(doc, "/learning/shrink_samples");
  c.learning.prediction_model = get_req<std::string>(doc, "/learning/prediction_model");
  if (c.learning.prediction_model != "nominal" && c.learning.prediction_model != "surrogate")
    throw ConfigError("/learning/prediction_model: must be 'nominal' or 'surrogate'");
  c.learning.demo_count = get_req<int>(doc, "/learning/demo_count");
  c.learning.demo_scheme =
      init_scheme_from_string(get_req<std::string>(doc, "/learning/demo_scheme"));

  c.rollout.T = get_req<int>(doc, "/rollout/T");
  c.rollout.n_starts = get_req<int>(doc, "/rollout/n_starts");
  c.rollout.rejection_cap = get_req<long>(doc, "/rollout/rejection_cap");
  c.rollout.stability_threshold = get_req<double>(doc, "/rollout/stability_threshold");
  c.rollout.exclude_dims = get_req<std::vector<int>>(doc, "/rollout/exclude_dims");

  const json& axes = at_req(doc, "/grid/axes");
  for (size_t i = 0; i < axes.size(); ++i) {
    GridAxis a;
    if (axes[i].contains("fixed")) {
      a.fixed = axes[i].at("fixed").get<double>();
    } else {
      a.min = detail::get_req<double>(doc, "/grid/axes/" + std::to_string(i) + "/min");
      a.max = detail::get_req<double>(doc, "/grid/axes/" + std::to_string(i) + "/max");
    }
    c.grid.axes.push_back(a);
  }
  c.grid.resolution = get_req<int>(doc, "/grid/resolution");

  c.bounds.lambda = get_req<double>(doc, "/bounds/lambda");
  c.bounds.l_ell = get_req<double>(doc, "/bounds/l_ell");
  c.bounds.L_ell = get_req<double>(doc, "/bounds/L_ell");
  c.bounds.L_V = get_req<double>(doc, "/bounds/L_V");
  c.bounds.L_fx_hat = get_req<double>(doc, "/bounds/L_fx_hat");
  c.bounds.N = get_req<int>(doc, "/bounds/N");
  c.bounds.l_s = get_req<double>(doc, "/bounds/l_s");
  c.bounds.eps = get_req<double>(doc, "/bounds/eps");
  c.bounds.gamma = get_req<double>(doc, "/bounds/gamma");
  c.bounds.Q_norm = get_req<double>(doc, "/bounds/Q_norm");
  c.bounds.alpha = get_req<double>(doc, "/bounds/alpha");
  c.bounds.L_bar = get_req<double>(doc, "/bounds/L_bar");
  c.bounds.mu = get_req<double>(doc, "/bounds/mu");
  c.bounds.delta = get_req<double>(doc, "/bounds/delta");
  c.bounds.J_mpc_true = get_req<double>(doc, "/bounds/J_mpc_true");
  c.bounds.psi_bar = get_req<double>(doc, "/bounds/psi_bar");
  c.bounds.estimate_from_artifacts = get_req<bool>(doc, "/bounds/estimate_from_artifacts");
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(load_json(path));
}

inline std::string config_hash(const RunConfig& c) {
  return fnv1a_hex(run_config_to_json(c).dump());
}

}  // namespace nlmpc
