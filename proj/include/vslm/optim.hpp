#pragma once

#include <cstdint>

#include "vslm/tensor.hpp"

namespace vslm {

struct AdamWConfig {
  real lr = static_cast<real>(1e-4);
  real beta1 = static_cast<real>(0.9);
  real beta2 = static_cast<real>(0.95);
  real eps = static_cast<real>(1e-8);
  real weight_decay = static_cast<real>(0.01);
};

// AdamW with decoupled weight decay: each step first shrinks the weights by
// (1 - lr * weight_decay), then applies the bias-corrected Adam update. A
// parameter whose gradient buffer was never touched is treated as having a
// zero gradient (it still decays and its moments still relax toward zero).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  // Applies one update. Throws NumericError before touching any parameter if
  // a gradient is non-finite.
  void step();
  void zero_grad();

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }
  const AdamWConfig& config() const { return cfg_; }

  size_t size() const { return slots_.size(); }
  const Tensor& param(size_t i) const { return slots_[i].param; }
  std::vector<real>& moment1(size_t i) { return slots_[i].m; }
  std::vector<real>& moment2(size_t i) { return slots_[i].v; }
  const std::vector<real>& moment1(size_t i) const { return slots_[i].m; }
  const std::vector<real>& moment2(size_t i) const { return slots_[i].v; }

 private:
  struct Slot {
    Tensor param;
    std::vector<real> m, v;
  };
  std::vector<Slot> slots_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace vslm
