#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "tensor/ops.hpp"
#include "tensor/tensor.hpp"

namespace ds {

struct Parameter {
  std::string name;
  Tensor tensor;
  double lr_multiplier = 1.0;
};

// Learning-rate multiplier for newly added condition modules.
inline constexpr double kNewModuleLrMultiplier = 10.0;

// Owns every named parameter of one model. Names are unique.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t init_seed = 0) : rng_(init_seed) {}

  Tensor create_normal(const std::string& name, Shape shape, double stddev, double lr_mult = 1.0);
  Tensor create_zeros(const std::string& name, Shape shape, double lr_mult = 1.0);
  Tensor create_full(const std::string& name, Shape shape, double value, double lr_mult = 1.0);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);
  std::size_t total_elements() const;

  void zero_grad();
  // Rounds every value to the nearest float32 so checkpoints hold parameters exactly.
  void round_to_f32();

 private:
  Tensor add(const std::string& name, Tensor t, double lr_mult);

  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

double round_f32(double v);

namespace nn {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out] or undefined

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, double lr_mult = 1.0, bool zero_init = false,
                       bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

// One hidden layer of the model width with SiLU between.
struct Mlp {
  Linear fc1, fc2;
  bool identity = false;

  static Mlp create(ParameterStore& store, const std::string& name, std::size_t dim,
                    double lr_mult = 1.0);
  static Mlp make_identity() { return Mlp{{}, {}, true}; }
  Tensor operator()(const Tensor& x) const {
    if (identity) return x;
    return fc2(ops::silu(fc1(x)));
  }
};

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;

  static Conv2d create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, std::size_t kernel = 3, double lr_mult = 1.0,
                       bool zero_init = false);
  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias); }
};

// Normalization over the channel (last) axis.
struct LayerNorm {
  Tensor gamma, beta;
  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim,
                          double lr_mult = 1.0);
  Tensor operator()(const Tensor& x) const { return ops::feature_norm(x, -1, gamma, beta); }
};

// Scaled dot-product attention, q[B,Nq,d] k[B,Nk,d] v[B,Nk,dv] -> [B,Nq,dv], `heads`
// equal slices of d and dv. Scale is 1/sqrt(dv/heads). When `weights` is non-null the
// per-head attention matrices [B*heads, Nq, Nk] are appended to it.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
              std::vector<Tensor>* weights = nullptr);

// Pre-norm multi-head attention whose output projection is optionally zero-initialized.
struct Attention {
  LayerNorm norm;
  Linear q, k, v, out;
  std::size_t heads = 1;

  static Attention create(ParameterStore& store, const std::string& name, std::size_t dim,
                          std::size_t heads, double lr_mult, bool zero_out);
  // Returns the residual update (not added to the input).
  Tensor operator()(const Tensor& x, const Tensor& context) const;
  Tensor self(const Tensor& x) const { return (*this)(x, Tensor{}); }
};

}  // namespace nn

}  // namespace ds
