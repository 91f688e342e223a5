#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nlmpc/autodiff.hpp"
#include "nlmpc/errors.hpp"
#include "nlmpc/rng.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc {

enum class Activation { linear, tanh, softplus };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw ContractViolation("unknown activation tag: " + s);
}

struct MlpLayer {
  Mat W;  // out x in
  std::optional<Vec> b;
  Activation act = Activation::linear;
};

/// Feedforward network; bias presence per layer is fixed at construction.
struct Mlp {
  std::vector<MlpLayer> layers;

  int input_dim() const { return static_cast<int>(layers.front().W.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().W.rows()); }

  void validate() const {
    require(!layers.empty(), "Mlp: needs at least one layer");
    for (size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.b) require(l.b->size() == l.W.rows(), "Mlp: bias shape mismatch at layer " + std::to_string(k));
      if (k + 1 < layers.size())
        require(layers[k + 1].W.cols() == l.W.rows(),
                "Mlp: layer dims do not chain at layer " + std::to_string(k));
      check_finite(l.W, "Mlp weights");
    }
  }
};

enum class BiasInit { none, zeros, standard_normal };

/// Xavier/Glorot-uniform weights; hidden layers use `hidden_act`, output is linear.
inline Mlp make_mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
                    Activation hidden_act, BiasInit bias, Rng& rng) {
  Mlp net;
  std::vector<int> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out_dim);
  for (size_t k = 0; k + 1 < dims.size(); ++k) {
    MlpLayer layer;
    const int fan_in = dims[k], fan_out = dims[k + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    layer.W.resize(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) layer.W(i, j) = rng.uniform(-limit, limit);
    if (bias != BiasInit::none) {
      Vec b = Vec::Zero(fan_out);
      if (bias == BiasInit::standard_normal)
        for (int i = 0; i < fan_out; ++i) b[i] = rng.normal();
      layer.b = b;
    }
    layer.act = (k + 2 < dims.size()) ? hidden_act : Activation::linear;
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

// ---------------------------------------------------------------------------
// Batched evaluation. Rows of X are samples. The cache keeps per-layer inputs
// and activation derivatives so that VJP / directional (dual) passes reuse the
// forward work; everything reduces to dense GEMMs.
// ---------------------------------------------------------------------------

struct MlpBatchCache {
  std::vector<Mat> x;  // x[k] = input of layer k; x[L] = network output
  std::vector<Mat> d;  // d[k] = act'(z_k)
  std::vector<Mat> g;  // g[k] = dL/dx[k], filled by mlp_vjp_batch(keep_grad_chain)
};

struct MlpDualCache {
  std::vector<Mat> xd;  // directional derivative of x[k]
  std::vector<Mat> dd;  // directional derivative of d[k]
};

struct MlpGrads {
  std::vector<Mat> dW;
  std::vector<Vec> db;

  void set_zero(const Mlp& net) {
    dW.resize(net.layers.size());
    db.resize(net.layers.size());
    for (size_t k = 0; k < net.layers.size(); ++k) {
      dW[k] = Mat::Zero(net.layers[k].W.rows(), net.layers[k].W.cols());
      db[k] = net.layers[k].b ? Vec::Zero(net.layers[k].b->size()) : Vec();
    }
  }
};

inline const Mat& mlp_forward_batch(const Mlp& net, const Mat& X, MlpBatchCache& c) {
  require(X.cols() == net.input_dim(), "mlp_forward: input dim mismatch");
  const size_t L = net.layers.size();
  c.x.resize(L + 1);
  c.d.resize(L);
  c.x[0] = X;
  for (size_t k = 0; k < L; ++k) {
    const auto& layer = net.layers[k];
    Mat z = c.x[k] * layer.W.transpose();
    if (layer.b) z.rowwise() += layer.b->transpose();
    switch (layer.act) {
      case Activation::linear:
        c.x[k + 1] = std::move(z);
        c.d[k] = Mat::Ones(c.x[k + 1].rows(), c.x[k + 1].cols());
        break;
      case Activation::tanh:
        c.x[k + 1] = z.array().tanh().matrix();
        c.d[k] = (1.0 - c.x[k + 1].array().square()).matrix();
        break;
      case Activation::softplus: {
        Mat s = (1.0 / (1.0 + (-z).array().exp())).matrix();  // sigmoid(z)
        c.x[k + 1] = (z.array() > 30.0).select(z, (1.0 + z.array().exp()).log()).matrix();
        c.d[k] = std::move(s);
        break;
      }
    }
  }
  return c.x[L];
}

/// Backward pass: returns dL/dX given dL/d(output); optionally accumulates
/// parameter gradients into `grads` (+=) and keeps the per-layer gradient
/// chain for subsequent dual passes.
inline Mat mlp_vjp_batch(const Mlp& net, MlpBatchCache& c, const Mat& d_out,
                         MlpGrads* grads = nullptr, bool keep_grad_chain = false) {
  const size_t L = net.layers.size();
  if (keep_grad_chain) c.g.assign(L + 1, Mat());
  Mat g = d_out;
  if (keep_grad_chain) c.g[L] = g;
  for (size_t k = L; k-- > 0;) {
    Mat gz = g.cwiseProduct(c.d[k]);
    if (grads) {
      grads->dW[k].noalias() += gz.transpose() * c.x[k];
      if (net.layers[k].b) grads->db[k] += gz.colwise().sum().transpose();
    }
    g.noalias() = gz * net.layers[k].W;
    if (keep_grad_chain) c.g[k] = g;
  }
  return g;
}

/// Forward directional derivative along Xdot; fills the dual cache needed by
/// mlp_vjp_dual_batch. Returns d(output)/d(direction).
inline const Mat& mlp_jvp_batch(const Mlp& net, const MlpBatchCache& c, const Mat& Xdot,
                                MlpDualCache& dc) {
  const size_t L = net.layers.size();
  dc.xd.resize(L + 1);
  dc.dd.resize(L);
  dc.xd[0] = Xdot;
  for (size_t k = 0; k < L; ++k) {
    const auto& layer = net.layers[k];
    Mat zd = dc.xd[k] * layer.W.transpose();
    dc.xd[k + 1] = c.d[k].cwiseProduct(zd);
    switch (layer.act) {
      case Activation::linear:
        dc.dd[k] = Mat::Zero(zd.rows(), zd.cols());
        break;
      case Activation::tanh:
        // d = 1-h^2, d' = -2 h h' = -2 h (d * zdot)
        dc.dd[k] = (-2.0 * c.x[k + 1].array() * c.d[k].array() * zd.array()).matrix();
        break;
      case Activation::softplus:
        // d = sigma(z), d' = sigma(1-sigma) zdot
        dc.dd[k] = (c.d[k].array() * (1.0 - c.d[k].array()) * zd.array()).matrix();
        break;
    }
  }
  return dc.xd[L];
}

/// Directional derivative of the input gradient: requires a prior
/// mlp_vjp_batch(..., keep_grad_chain=true) and a matching mlp_jvp_batch.
/// d_out_dot is the directional derivative of the output cotangent.
inline Mat mlp_vjp_dual_batch(const Mlp& net, const MlpBatchCache& c, const MlpDualCache& dc,
                              const Mat& d_out_dot) {
  const size_t L = net.layers.size();
  require(c.g.size() == L + 1, "mlp_vjp_dual_batch: grad chain missing");
  Mat gd = d_out_dot;
  for (size_t k = L; k-- > 0;) {
    Mat gzd = gd.cwiseProduct(c.d[k]) + c.g[k + 1].cwiseProduct(dc.dd[k]);
    gd.noalias() = gzd * net.layers[k].W;
  }
  return gd;
}

// ---------------------------------------------------------------------------
// Single-point interface
// ---------------------------------------------------------------------------

inline Vec mlp_forward(const Mlp& net, const Vec& x) {
  require(x.size() == net.input_dim(), "mlp_forward: input dim mismatch");
  MlpBatchCache c;
  Mat X(1, x.size());
  X.row(0) = x.transpose();
  return mlp_forward_batch(net, X, c).row(0).transpose();
}

/// d(output)/d(input), shape output_dim x input_dim. Uses forward passes when
/// the input is narrower than the output and backward passes otherwise.
inline Mat mlp_input_jacobian(const Mlp& net, const Vec& x) {
  require(x.size() == net.input_dim(), "mlp_input_jacobian: input dim mismatch");
  const int ni = net.input_dim(), no = net.output_dim();
  MlpBatchCache c;
  Mat X(1, ni);
  X.row(0) = x.transpose();
  mlp_forward_batch(net, X, c);
  Mat J(no, ni);
  if (ni <= no) {
    MlpDualCache dc;
    for (int j = 0; j < ni; ++j) {
      Mat dir = Mat::Zero(1, ni);
      dir(0, j) = 1.0;
      J.col(j) = mlp_jvp_batch(net, c, dir, dc).row(0).transpose();
    }
  } else {
    for (int i = 0; i < no; ++i) {
      Mat cot = Mat::Zero(1, no);
      cot(0, i) = 1.0;
      J.row(i) = mlp_vjp_batch(net, c, cot).row(0);
    }
  }
  return J;
}

/// Generic scalar-typed forward used to compose MLPs into differentiable
/// scalar fields (e.g. for hyper-dual Hessians).
template <class T>
std::vector<T> mlp_forward_t(const Mlp& net, const std::vector<T>& x) {
  require(static_cast<int>(x.size()) == net.input_dim(), "mlp_forward_t: input dim mismatch");
  std::vector<T> h = x;
  for (const auto& layer : net.layers) {
    const int out = static_cast<int>(layer.W.rows());
    std::vector<T> z(out);
    for (int i = 0; i < out; ++i) {
      T acc = layer.b ? T((*layer.b)[i]) : T(0.0);
      for (int j = 0; j < static_cast<int>(h.size()); ++j) acc += T(layer.W(i, j)) * h[j];
      z[i] = acc;
    }
    using std::tanh;
    switch (layer.act) {
      case Activation::linear: break;
      case Activation::tanh:
        for (auto& v : z) v = tanh(v);
        break;
      case Activation::softplus:
        for (auto& v : z) v = softplus(v);
        break;
    }
    h = std::move(z);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Flat parameter views (layer order: W row-major, then bias)
// ---------------------------------------------------------------------------

inline int mlp_param_count(const Mlp& net) {
  int n = 0;
  for (const auto& l : net.layers) {
    n += static_cast<int>(l.W.size());
    if (l.b) n += static_cast<int>(l.b->size());
  }
  return n;
}

inline void mlp_get_params(const Mlp& net, Vec& out) {
  out.resize(mlp_param_count(net));
  int at = 0;
  for (const auto& l : net.layers) {
    for (int i = 0; i < l.W.rows(); ++i)
      for (int j = 0; j < l.W.cols(); ++j) out[at++] = l.W(i, j);
    if (l.b)
      for (int i = 0; i < l.b->size(); ++i) out[at++] = (*l.b)[i];
  }
}

inline void mlp_set_params(Mlp& net, const Vec& params) {
  require(params.size() == mlp_param_count(net), "mlp_set_params: size mismatch");
  int at = 0;
  for (auto& l : net.layers) {
    for (int i = 0; i < l.W.rows(); ++i)
      for (int j = 0; j < l.W.cols(); ++j) l.W(i, j) = params[at++];
    if (l.b)
      for (int i = 0; i < l.b->size(); ++i) (*l.b)[i] = params[at++];
  }
}

inline void mlp_grads_to_vec(const Mlp& net, const MlpGrads& g, Vec& out) {
  out.resize(mlp_param_count(net));
  int at = 0;
  for (size_t k = 0; k < net.layers.size(); ++k) {
    for (int i = 0; i < g.dW[k].rows(); ++i)
      for (int j = 0; j < g.dW[k].cols(); ++j) out[at++] = g.dW[k](i, j);
    if (net.layers[k].b)
      for (int i = 0; i < g.db[k].size(); ++i) out[at++] = g.db[k][i];
  }
}

/// 1 for weight entries, 0 for bias entries (decoupled decay skips biases)
inline Vec mlp_weight_mask(const Mlp& net) {
  Vec mask(mlp_param_count(net));
  int at = 0;
  for (const auto& l : net.layers) {
    for (int i = 0; i < l.W.size(); ++i) mask[at++] = 1.0;
    if (l.b)
      for (int i = 0; i < l.b->size(); ++i) mask[at++] = 0.0;
  }
  return mask;
}

}  // namespace nlmpc
