#include "bimot/bimot.hpp"

#include "common/error.hpp"

namespace ds {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::kMap: return "map";
    case Modality::kLayout: return "layout";
    case Modality::kKeyframe: return "keyframe";
    case Modality::kNeighbor: return "neighbor";
  }
  return "?";
}

FlowAttention FlowAttention::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                    std::size_t heads, double lr_mult) {
  if (heads == 0 || dim % heads) throw ConfigError(name + ": dim " + std::to_string(dim) + " not divisible by heads");
  FlowAttention f;
  f.q = nn::Mlp::create(store, name + ".q", dim, lr_mult);
  f.k = nn::Mlp::create(store, name + ".k", dim, lr_mult);
  f.v = nn::Mlp::create(store, name + ".v", dim, lr_mult);
  f.o = nn::Mlp::create(store, name + ".o", dim, lr_mult);
  f.norm_gamma = store.create_full(name + ".norm.gamma", {dim}, 1.0, lr_mult);
  f.norm_beta = store.create_zeros(name + ".norm.beta", {dim}, lr_mult);
  f.heads = heads;
  return f;
}

Tensor FlowAttention::operator()(const Tensor& f_in, const Tensor& f_out, std::vector<Tensor>* weights) const {
  if (f_in.rank() != 3 || f_in.shape() != f_out.shape()) {
    throw ShapeError("flow function: F_in " + shape_str(f_in.shape()) + " and F_out " + shape_str(f_out.shape()) +
                     " must be equal [B, tokens, d]");
  }
  const Tensor& q_src = queries_from_out ? f_out : f_in;
  const Tensor& kv_src = queries_from_out ? f_in : f_out;
  const Tensor attended = nn::attend(q(q_src), k(kv_src), v(kv_src), heads, weights);
  const Tensor m = o(attended);
  const Tensor bn = norm_identity ? f_out : ops::feature_norm(f_out, 1, norm_gamma, norm_beta);
  return ops::add(ops::add(ops::mul(m, bn), m), f_out);
}

Tensor flow_function(const FlowAttention& flow, const Tensor& f_in, const Tensor& f_out, std::vector<Tensor>* weights) {
  return flow(f_in, f_out, weights);
}

std::vector<ConditionFeature> mix_conditions(const std::array<Tensor, kModalityCount>& features,
                                             const std::array<bool, kModalityCount>& present,
                                             const std::array<Tensor, kModalityCount>& null_features) {
  std::vector<ConditionFeature> out;
  for (Modality m : kFusionOrder) {
    const auto i = static_cast<std::size_t>(m);
    const Tensor& t = present[i] ? features[i] : null_features[i];
    if (!t.defined()) throw ShapeError("mix_conditions: no features for " + std::string(modality_name(m)));
    out.push_back({m, t});
  }
  return out;
}

BimotBlock BimotBlock::create(ParameterStore& store, const std::string& name, const BimotOptions& options,
                              double lr_mult) {
  const std::size_t d = options.dim;
  BimotBlock b;
  for (Modality m : kFusionOrder) {
    auto& flow = b.l2c[static_cast<std::size_t>(m)];
    flow = FlowAttention::create(store, name + ".l2c." + std::string(modality_name(m)), d, options.heads, lr_mult);
    flow.queries_from_out = options.queries_from_out;
  }
  b.temporal_norm = nn::LayerNorm::create(store, name + ".temporal.norm", d, lr_mult);
  b.temporal_q = nn::Linear::create(store, name + ".temporal.q", d, d, lr_mult, false, false);
  b.temporal_k = nn::Linear::create(store, name + ".temporal.k", d, d, lr_mult, false, false);
  b.temporal_v = nn::Linear::create(store, name + ".temporal.v", d, d, lr_mult, false, false);
  b.temporal_out = nn::Linear::create(store, name + ".temporal.out", d, d, lr_mult);
  b.c2l = FlowAttention::create(store, name + ".c2l", d, options.heads, lr_mult);
  b.c2l.queries_from_out = options.queries_from_out;
  b.out_proj = nn::Linear::create(store, name + ".out_proj", d, d, lr_mult, true);
  b.heads = options.heads;
  b.temporal_enabled = options.temporal;
  return b;
}

Tensor BimotBlock::temporal(const Tensor& x, BimotTrace* trace) const {
  const std::size_t s = x.shape()[0], f = x.shape()[1], n = x.shape()[2], d = x.shape()[3];
  Tensor seq = ops::reshape(ops::permute(x, {0, 2, 1, 3}), {s * n, f, d});
  const Tensor h = temporal_norm(seq);
  const Tensor upd = temporal_out(nn::attend(temporal_q(h), temporal_k(h), temporal_v(h), heads,
                                             trace ? &trace->temporal_weights : nullptr));
  seq = ops::add(seq, upd);
  return ops::permute(ops::reshape(seq, {s, n, f, d}), {0, 2, 1, 3});
}

Tensor BimotBlock::forward(const Tensor& latent, const std::vector<ConditionFeature>& conditions,
                           BimotTrace* trace) const {
  if (latent.rank() != 4) throw ShapeError("bimot: latent must be [S, F, N, d], got " + shape_str(latent.shape()));
  if (conditions.empty()) throw ShapeError("bimot: no conditions");
  const std::size_t s = latent.shape()[0], f = latent.shape()[1], n = latent.shape()[2], d = latent.shape()[3];
  for (const auto& c : conditions) {
    if (c.features.shape() != latent.shape()) {
      throw ShapeError("bimot: " + std::string(modality_name(c.modality)) + " features " +
                       shape_str(c.features.shape()) + " do not match latent " + shape_str(latent.shape()));
    }
  }
  const Shape flat{s * f, n, d};
  Tensor fused = ops::reshape(latent, flat);
  Tensor cond_sum;
  for (const auto& c : conditions) {
    const Tensor cf = ops::reshape(c.features, flat);
    fused = l2c[static_cast<std::size_t>(c.modality)](cf, fused, trace ? &trace->l2c_weights : nullptr);
    cond_sum = cond_sum.defined() ? ops::add(cond_sum, cf) : cf;
  }
  Tensor merged = ops::reshape(fused, latent.shape());
  if (temporal_enabled) merged = temporal(merged, trace);
  const Tensor injected = c2l(ops::reshape(merged, flat), cond_sum, trace ? &trace->c2l_weights : nullptr);
  return ops::reshape(out_proj(injected), latent.shape());
}

Tensor bimot_forward(const BimotBlock& block, const Tensor& latent, const std::vector<ConditionFeature>& conditions,
                     BimotTrace* trace) {
  return block.forward(latent, conditions, trace);
}

}  // namespace ds
