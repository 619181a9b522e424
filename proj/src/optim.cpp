#include "vslm/optim.hpp"

#include <cmath>

namespace vslm {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : cfg_(cfg) {
  if (cfg.lr <= 0 || cfg.eps <= 0) throw ConfigError("adamw: lr and eps must be positive");
  if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1) {
    throw ConfigError("adamw: betas must lie in [0, 1)");
  }
  if (cfg.weight_decay < 0) throw ConfigError("adamw: negative weight decay");
  slots_.reserve(params.size());
  for (Tensor& p : params) {
    if (!p.defined()) throw ConfigError("adamw: undefined parameter");
    Slot s;
    s.param = p;
    s.m.assign(p.numel(), static_cast<real>(0));
    s.v.assign(p.numel(), static_cast<real>(0));
    slots_.push_back(std::move(s));
  }
}

void AdamW::step() {
  for (Slot& s : slots_) {
    if (!s.param.has_grad()) continue;
    check_finite("adamw_step gradient", s.param.g());
  }
  ++t_;
  const real bc1 = static_cast<real>(1) - std::pow(cfg_.beta1, static_cast<real>(t_));
  const real bc2 = static_cast<real>(1) - std::pow(cfg_.beta2, static_cast<real>(t_));
  for (Slot& s : slots_) {
    real* w = s.param.v().data();
    const size_t n = s.param.numel();
    const real* g = s.param.has_grad() ? s.param.g().data() : nullptr;
    const real decay = static_cast<real>(1) - cfg_.lr * cfg_.weight_decay;
    for (size_t i = 0; i < n; ++i) {
      const real gi = g ? g[i] : static_cast<real>(0);
      w[i] *= decay;
      s.m[i] = cfg_.beta1 * s.m[i] + (static_cast<real>(1) - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (static_cast<real>(1) - cfg_.beta2) * gi * gi;
      const real mhat = s.m[i] / bc1;
      const real vhat = s.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

}  // namespace vslm
