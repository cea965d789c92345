#include "tensor/optim.hpp"

#include <cmath>

namespace ds {

AdamW::AdamW(ParameterStore& store, AdamWConfig config, bool round_state_to_f32)
    : store_(store), config_(config), round_f32_(round_state_to_f32) {
  for (const auto& p : store_.params()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  auto& params = store_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto values = p.tensor.mutable_values();
    const auto grad = p.tensor.grad();
    const double lr = config_.lr * p.lr_multiplier;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      double x = values[j] * (1.0 - lr * config_.weight_decay);
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      x -= lr * mhat / (std::sqrt(vhat) + config_.eps);
      if (round_f32_) {
        x = round_f32(x);
        m[j] = round_f32(m[j]);
        v[j] = round_f32(v[j]);
      }
      values[j] = x;
    }
  }
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.params()) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : store.params()) {
      if (p.tensor.grad().empty()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace ds
