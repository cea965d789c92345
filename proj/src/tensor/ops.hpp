#pragma once

#include <span>
#include <vector>

#include "tensor/tensor.hpp"

namespace ds::ops {

// Elementwise on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// `b` broadcasts over the leading axes of `a`: b.shape must be a suffix of a.shape.
Tensor add_bcast(const Tensor& a, const Tensor& b);
Tensor mul_bcast(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched [B,m,k] x [B,k,n]; the transpose flags apply to the last two axes.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
// x[..., in] * w[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor softmax(const Tensor& x, int axis);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces `axis` away.
Tensor mean_axis(const Tensor& x, int axis);
Tensor mse(const Tensor& prediction, const Tensor& target);

// Standardizes along `axis` (eps = 1e-5 inside the square root), then applies
// gamma/beta over the last axis. gamma/beta may be undefined (no affine).
Tensor feature_norm(const Tensor& x, int axis, const Tensor& gamma, const Tensor& beta);
inline constexpr double kNormEps = 1e-5;

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor stack(std::span<const Tensor> parts);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
// Repeats a size-1 axis n times.
Tensor expand(const Tensor& x, int axis, std::size_t n);

// Same-padding, stride-1 convolution: x[N,C,H,W], w[O,C,k,k], bias[O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);

// Token grids: x[B, h*w, c] -> [B, (h/p)*(w/p), p*p*c], channel order (dy, dx, c).
Tensor space_to_depth(const Tensor& x, std::size_t h, std::size_t w, std::size_t p);
Tensor depth_to_space(const Tensor& x, std::size_t h, std::size_t w, std::size_t p);

// Clamp bound shared by exp-based ops.
inline constexpr double kExpClamp = 60.0;

}  // namespace ds::ops
