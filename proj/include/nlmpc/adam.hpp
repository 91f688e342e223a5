#pragma once

#include "nlmpc/errors.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc {

/// Adam optimizer state with optional decoupled weight decay.
/// `decay_mask` selects which parameters decay (empty = all of them).
struct AdamState {
  Vec m, v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  Vec decay_mask;
  Vec lr_scale;  // optional per-parameter step multipliers (empty = ones)

  static AdamState init(Eigen::Index n, double lr, double weight_decay = 0.0) {
    AdamState s;
    s.m = Vec::Zero(n);
    s.v = Vec::Zero(n);
    s.lr = lr;
    s.weight_decay = weight_decay;
    return s;
  }
};

/// Standard bias-corrected Adam update; decay is decoupled (applied to the
/// pre-update parameters, scaled by lr).
inline void adam_step(Vec& params, const Vec& grads, AdamState& s) {
  require(params.size() == grads.size() && params.size() == s.m.size(),
          "adam_step: shape mismatch");
  s.step += 1;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  Vec update = (s.m / c1).cwiseQuotient(((s.v / c2).cwiseSqrt().array() + s.eps).matrix());
  if (s.weight_decay > 0.0) {
    if (s.decay_mask.size() > 0) {
      require(s.decay_mask.size() == params.size(), "adam_step: decay mask shape mismatch");
      update += s.weight_decay * s.decay_mask.cwiseProduct(params);
    } else {
      update += s.weight_decay * params;
    }
  }
  if (s.lr_scale.size() > 0) {
    require(s.lr_scale.size() == params.size(), "adam_step: lr scale shape mismatch");
    update = update.cwiseProduct(s.lr_scale);
  }
  params -= s.lr * update;
}

}  // namespace nlmpc
