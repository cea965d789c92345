#pragma once

#include "scene/types.hpp"
#include "tensor/nn.hpp"

namespace ds {

// Ego velocity enters the scalar MLP as v * kVelocityScale.
inline constexpr double kVelocityScale = 0.1;

// Learned per-view camera vectors e_i plus the scalar MLP:
// concat(e_i, [v, sin phi, cos phi]) -> Linear -> SiLU -> Linear -> SiLU.
struct ScalarEmbedder {
  Tensor camera_table;  // [6, d_e]
  nn::Linear fc1, fc2;
  std::size_t embed_dim = 0;

  static ScalarEmbedder create(ParameterStore& store, const std::string& name, std::size_t embed_dim,
                               std::size_t model_dim, double lr_mult = 1.0);

  Tensor camera_vector(ViewId view) const;  // [d_e]
  // [n, model_dim], one row per (view, ego) pair.
  Tensor operator()(const std::vector<ViewId>& views, const std::vector<EgoState>& egos) const;
};

// Single-vector form: e[d_e], ego -> [model_dim].
Tensor embed_scalars(const ScalarEmbedder& embedder, const Tensor& e, const EgoState& ego);

}  // namespace ds
