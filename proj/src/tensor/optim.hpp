#pragma once

#include <vector>

#include "tensor/nn.hpp"

namespace ds {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. Per-parameter lr = base lr * lr_multiplier.
class AdamW {
 public:
  AdamW(ParameterStore& store, AdamWConfig config, bool round_state_to_f32 = false);

  void step();
  long long step_count() const { return t_; }
  void set_step_count(long long t) { t_ = t; }
  const AdamWConfig& config() const { return config_; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }

 private:
  ParameterStore& store_;
  AdamWConfig config_;
  bool round_f32_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before
// scaling. max_norm <= 0 disables clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

}  // namespace ds
