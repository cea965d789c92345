#include "tensor/nn.hpp"

#include <cmath>

#include "common/error.hpp"

namespace ds {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Tensor ParameterStore::add(const std::string& name, Tensor t, double lr_mult) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  if (!(lr_mult > 0)) throw ConfigError("parameter " + name + ": learning rate multiplier must be positive");
  for (double& v : t.mutable_values()) v = round_f32(v);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, t, lr_mult});
  return t;
}

Tensor ParameterStore::create_normal(const std::string& name, Shape shape, double stddev,
                                     double lr_mult) {
  return add(name, Tensor::randn(std::move(shape), rng_, stddev, true), lr_mult);
}

Tensor ParameterStore::create_zeros(const std::string& name, Shape shape, double lr_mult) {
  return add(name, Tensor(std::move(shape), true), lr_mult);
}

Tensor ParameterStore::create_full(const std::string& name, Shape shape, double value,
                                   double lr_mult) {
  return add(name, Tensor::full(std::move(shape), value, true), lr_mult);
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterStore::round_to_f32() {
  for (auto& p : params_) {
    for (double& v : p.tensor.mutable_values()) v = round_f32(v);
  }
}

namespace nn {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, double lr_mult, bool zero_init, bool with_bias) {
  Linear l;
  l.weight = zero_init ? store.create_zeros(name + ".weight", {in, out}, lr_mult)
                       : store.create_normal(name + ".weight", {in, out},
                                             1.0 / std::sqrt(static_cast<double>(in)), lr_mult);
  if (with_bias) l.bias = store.create_zeros(name + ".bias", {out}, lr_mult);
  return l;
}

Mlp Mlp::create(ParameterStore& store, const std::string& name, std::size_t dim, double lr_mult) {
  Mlp m;
  m.fc1 = Linear::create(store, name + ".fc1", dim, dim, lr_mult);
  m.fc2 = Linear::create(store, name + ".fc2", dim, dim, lr_mult);
  return m;
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, std::size_t kernel, double lr_mult, bool zero_init) {
  Conv2d c;
  const double fan_in = static_cast<double>(in * kernel * kernel);
  c.weight = zero_init ? store.create_zeros(name + ".weight", {out, in, kernel, kernel}, lr_mult)
                       : store.create_normal(name + ".weight", {out, in, kernel, kernel},
                                             1.0 / std::sqrt(fan_in), lr_mult);
  c.bias = store.create_zeros(name + ".bias", {out}, lr_mult);
  return c;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim,
                            double lr_mult) {
  return LayerNorm{store.create_full(name + ".gamma", {dim}, 1.0, lr_mult),
                   store.create_zeros(name + ".beta", {dim}, lr_mult)};
}

namespace {

// [B,N,d] -> [B*h, N, d/h]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (heads == 1) return x;
  const std::size_t b = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
  Tensor t = ops::reshape(x, {b, n, heads, d / heads});
  t = ops::permute(t, {0, 2, 1, 3});
  return ops::reshape(t, {b * heads, n, d / heads});
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  if (heads == 1) return x;
  const std::size_t bh = x.shape()[0], n = x.shape()[1], dh = x.shape()[2];
  Tensor t = ops::reshape(x, {bh / heads, heads, n, dh});
  t = ops::permute(t, {0, 2, 1, 3});
  return ops::reshape(t, {bh / heads, n, heads * dh});
}

}  // namespace

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
              std::vector<Tensor>* weights) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.shape()[0] != k.shape()[0] ||
      k.shape()[0] != v.shape()[0] || k.shape()[1] != v.shape()[1] ||
      q.shape()[2] != k.shape()[2]) {
    throw ShapeError("attend: incompatible q " + shape_str(q.shape()) + " k " +
                     shape_str(k.shape()) + " v " + shape_str(v.shape()));
  }
  if (heads == 0 || q.shape()[2] % heads || v.shape()[2] % heads) {
    throw ShapeError("attend: channel counts not divisible by " + std::to_string(heads) + " heads");
  }
  const double dv = static_cast<double>(v.shape()[2] / heads);
  Tensor qh = split_heads(q, heads);
  Tensor kh = split_heads(k, heads);
  Tensor vh = split_heads(v, heads);
  Tensor logits = ops::scale(ops::bmm(qh, kh, false, true), 1.0 / std::sqrt(dv));
  Tensor w = ops::softmax(logits, -1);
  if (weights) weights->push_back(w);
  return merge_heads(ops::bmm(w, vh), heads);
}

Attention Attention::create(ParameterStore& store, const std::string& name, std::size_t dim,
                            std::size_t heads, double lr_mult, bool zero_out) {
  Attention a;
  a.norm = LayerNorm::create(store, name + ".norm", dim, lr_mult);
  a.q = Linear::create(store, name + ".q", dim, dim, lr_mult, false, false);
  a.k = Linear::create(store, name + ".k", dim, dim, lr_mult, false, false);
  a.v = Linear::create(store, name + ".v", dim, dim, lr_mult, false, false);
  a.out = Linear::create(store, name + ".out", dim, dim, lr_mult, zero_out);
  a.heads = heads;
  return a;
}

Tensor Attention::operator()(const Tensor& x, const Tensor& context) const {
  Tensor h = norm(x);
  const Tensor& kv = context.defined() ? context : h;
  return out(attend(q(h), k(kv), v(kv), heads));
}

}  // namespace nn

}  // namespace ds
