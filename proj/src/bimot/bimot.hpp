#pragma once

#include <array>
#include <string>
#include <vector>

#include "tensor/nn.hpp"

namespace ds {

enum class Modality : int { kMap = 0, kLayout = 1, kKeyframe = 2, kNeighbor = 3 };
inline constexpr std::size_t kModalityCount = 4;
// Coarse-to-fine fusion order.
inline constexpr std::array<Modality, kModalityCount> kFusionOrder = {Modality::kMap, Modality::kLayout,
                                                                     Modality::kKeyframe, Modality::kNeighbor};
std::string_view modality_name(Modality m);

// Out = MLP_o(O) * BN(F_out) + MLP_o(O) + F_out with O = softmax(Q K^T / sqrt(d_v)) V.
// Default sourcing: Q from F_in, K and V from F_out. `queries_from_out` flips it.
// BN normalizes over the token axis of each [tokens, d] slice.
struct FlowAttention {
  nn::Mlp q, k, v, o;
  Tensor norm_gamma, norm_beta;
  bool norm_identity = false;
  bool queries_from_out = false;
  std::size_t heads = 1;

  static FlowAttention create(ParameterStore& store, const std::string& name, std::size_t dim,
                              std::size_t heads, double lr_mult);
  // f_in, f_out: [B, N, d] with equal shapes. Attention weights [B*heads, N, N] are
  // appended to `weights` when given.
  Tensor operator()(const Tensor& f_in, const Tensor& f_out, std::vector<Tensor>* weights = nullptr) const;
};

Tensor flow_function(const FlowAttention& flow, const Tensor& f_in, const Tensor& f_out,
                     std::vector<Tensor>* weights = nullptr);

struct ConditionFeature {
  Modality modality;
  Tensor features;  // [S, F, N, d]
};

// Picks each modality's features or, when absent, its null features, and returns them in
// fusion order.
std::vector<ConditionFeature> mix_conditions(const std::array<Tensor, kModalityCount>& features,
                                             const std::array<bool, kModalityCount>& present,
                                             const std::array<Tensor, kModalityCount>& null_features);

struct BimotTrace {
  std::vector<Tensor> l2c_weights;
  std::vector<Tensor> temporal_weights;
  std::vector<Tensor> c2l_weights;
};

struct BimotOptions {
  std::size_t dim = 0;
  std::size_t heads = 4;
  bool temporal = true;
  bool queries_from_out = false;
};

struct BimotBlock {
  std::array<FlowAttention, kModalityCount> l2c;  // stage 1, one per modality
  nn::LayerNorm temporal_norm;                     // stage 2
  nn::Linear temporal_q, temporal_k, temporal_v, temporal_out;
  FlowAttention c2l;    // stage 3
  nn::Linear out_proj;  // stage 4, zero-initialized
  std::size_t heads = 4;
  bool temporal_enabled = true;

  static BimotBlock create(ParameterStore& store, const std::string& name, const BimotOptions& options,
                           double lr_mult);

  // latent [S, F, N, d]; conditions in fusion order, each [S, F, N, d]. Returns the
  // residual for the denoiser stream, same shape as latent.
  Tensor forward(const Tensor& latent, const std::vector<ConditionFeature>& conditions,
                 BimotTrace* trace = nullptr) const;
  Tensor temporal(const Tensor& x, BimotTrace* trace) const;
};

Tensor bimot_forward(const BimotBlock& block, const Tensor& latent, const std::vector<ConditionFeature>& conditions,
                     BimotTrace* trace = nullptr);

}  // namespace ds
