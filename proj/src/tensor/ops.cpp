#include "tensor/ops.hpp"

// Route every product through the packed GEMM/GEMV kernels: the small-size
// coefficient path peels unaligned heads into scalar code, which rounds
// differently from the fused packet code and makes results depend on malloc.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"

namespace ds::ops {

using detail::make_result;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

std::size_t norm_axis(const Shape& shape, int axis, const char* op) {
  const auto r = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  }
  return static_cast<std::size_t>(a);
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor argument");
}

double clamp_exp_arg(double x) { return std::clamp(x, -kExpClamp, kExpClamp); }

double stable_sigmoid(double x) {
  const double c = clamp_exp_arg(x);
  if (c >= 0) return 1.0 / (1.0 + std::exp(-c));
  const double e = std::exp(c);
  return e / (1.0 + e);
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

std::size_t bcast_suffix(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= as.size();
  for (std::size_t i = 0; ok && i < bs.size(); ++i) {
    ok = bs[bs.size() - 1 - i] == as[as.size() - 1 - i];
  }
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " +
                     shape_str(as));
  }
  return b.numel();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto& g = self.parents[p]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (wants(self, 0)) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor add_bcast(const Tensor& a, const Tensor& b) {
  const std::size_t nb = bcast_suffix(a, b, "add_bcast");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % nb];
  return make_result("add_bcast", a.shape(), std::move(out), {a, b}, [nb](Node& self) {
    if (wants(self, 0)) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i];
    }
  });
}

Tensor mul_bcast(const Tensor& a, const Tensor& b) {
  const std::size_t nb = bcast_suffix(a, b, "mul_bcast");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % nb];
  return make_result("mul_bcast", a.shape(), std::move(out), {a, b}, [nb](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (wants(self, 0)) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i % nb];
    }
    if (wants(self, 1)) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= s;
  return make_result("scale", a.shape(), std::move(out), {a}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x += s;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: dimension mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor a3 = reshape(a, {1, a.shape()[0], a.shape()[1]});
  Tensor b3 = reshape(b, {1, b.shape()[0], b.shape()[1]});
  return reshape(bmm(a3, b3), {a.shape()[0], b.shape()[1]});
}

Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0]) {
    throw ShapeError("bmm: dimension mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t batch = a.shape()[0];
  const std::size_t ar = a.shape()[1], ac = a.shape()[2];
  const std::size_t br = b.shape()[1], bc = b.shape()[2];
  const std::size_t m = ta ? ac : ar, k = ta ? ar : ac;
  const std::size_t kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb) {
    throw ShapeError("bmm: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(batch * m * n);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t i = 0; i < batch; ++i) {
    CMapMat A(ap + i * ar * ac, ar, ac);
    CMapMat B(bp + i * br * bc, br, bc);
    MapMat C(out.data() + i * m * n, m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
  }
  return make_result(
      "bmm", {batch, m, n}, std::move(out), {a, b},
      [=](Node& self) {
        const double* apv = self.parents[0]->value.data();
        const double* bpv = self.parents[1]->value.data();
        const bool need_a = wants(self, 0), need_b = wants(self, 1);
        double* ga = need_a ? self.parents[0]->ensure_grad().data() : nullptr;
        double* gb = need_b ? self.parents[1]->ensure_grad().data() : nullptr;
        for (std::size_t i = 0; i < batch; ++i) {
          CMapMat A(apv + i * ar * ac, ar, ac);
          CMapMat B(bpv + i * br * bc, br, bc);
          CMapMat G(self.grad.data() + i * m * n, m, n);
          if (need_a) {
            MapMat GA(ga + i * ar * ac, ar, ac);
            // op(B) is B or B^T; dOp(A) = G op(B)^T.
            if (!ta) {
              if (!tb) GA.noalias() += G * B.transpose();
              else GA.noalias() += G * B;
            } else {
              if (!tb) GA.noalias() += B * G.transpose();
              else GA.noalias() += B.transpose() * G.transpose();
            }
          }
          if (need_b) {
            MapMat GB(gb + i * br * bc, br, bc);
            if (!tb) {
              if (!ta) GB.noalias() += A.transpose() * G;
              else GB.noalias() += A * G;
            } else {
              if (!ta) GB.noalias() += G.transpose() * A;
              else GB.noalias() += G.transpose() * A.transpose();
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.shape()[0]) {
    throw ShapeError("linear: dimension mismatch " + shape_str(x.shape()) + " x " +
                     shape_str(w.shape()));
  }
  const std::size_t in = w.shape()[0], outd = w.shape()[1];
  if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != outd)) {
    throw ShapeError("linear: bias shape " + shape_str(bias.shape()) + " for weight " +
                     shape_str(w.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  std::vector<double> out(rows * outd);
  {
    CMapMat X(x.values().data(), rows, in);
    CMapMat W(w.values().data(), in, outd);
    MapMat Y(out.data(), rows, outd);
    Y.noalias() = X * W;
    if (bias.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(), outd);
      Y.rowwise() += b;
    }
  }
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(
      "linear", std::move(out_shape), std::move(out), std::move(parents),
      [rows, in, outd, has_bias](Node& self) {
        CMapMat G(self.grad.data(), rows, outd);
        if (wants(self, 0)) {
          MapMat GX(self.parents[0]->ensure_grad().data(), rows, in);
          CMapMat W(self.parents[1]->value.data(), in, outd);
          GX.noalias() += G * W.transpose();
        }
        if (wants(self, 1)) {
          MapMat GW(self.parents[1]->ensure_grad().data(), in, outd);
          CMapMat X(self.parents[0]->value.data(), rows, in);
          GW.noalias() += X.transpose() * G;
        }
        if (has_bias && wants(self, 2)) {
          double* gb = self.parents[2]->ensure_grad().data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < outd; ++o) gb[o] += self.grad[r * outd + o];
          }
        }
      });
}

Tensor softmax(const Tensor& x, int axis) {
  require_defined(x, "softmax");
  const std::size_t ax = norm_axis(x.shape(), axis, "softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < s.extent; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double e = std::exp(clamp_exp_arg(xv[base + j * s.inner] - mx));
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= total;
    }
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) {
          dot += self.grad[base + j * s.inner] * y[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += y[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  return make_result("sigmoid", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor silu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * stable_sigmoid(xv[i]);
  return make_result("silu", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double sg = stable_sigmoid(xv[i]);
      g[i] += self.grad[i] * sg * (1.0 + xv[i] * (1.0 - sg));
    }
  });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  return make_result("square", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * xv[i] * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_result("sum", {}, {total}, {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_axis(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(x.shape(), axis, "mean_axis");
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xv = x.values();
  const double inv = 1.0 / static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.extent; ++j) {
      const double* src = xv.data() + (o * s.extent + j) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  for (double& v : out) v *= inv;
  return make_result("mean_axis", std::move(out_shape), std::move(out), {x},
                     [s, inv](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t j = 0; j < s.extent; ++j) {
                           double* dst = g.data() + (o * s.extent + j) * s.inner;
                           const double* src = self.grad.data() + o * s.inner;
                           for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in] * inv;
                         }
                       }
                     });
}

Tensor expand(const Tensor& x, int axis, std::size_t n) {
  const std::size_t ax = norm_axis(x.shape(), axis, "expand");
  if (x.shape()[ax] != 1) {
    throw ShapeError("expand: axis " + std::to_string(axis) + " of " + shape_str(x.shape()) + " is not 1");
  }
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = n;
  std::vector<double> out(s.outer * n * s.inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      std::copy_n(xv.data() + o * s.inner, s.inner, out.data() + (o * n + j) * s.inner);
    }
  }
  return make_result("expand", std::move(out_shape), std::move(out), {x}, [s, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < n; ++j) {
        const double* src = self.grad.data() + (o * n + j) * s.inner;
        double* dst = g.data() + o * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
      }
    }
  });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse");
  return mean(square(sub(prediction, target)));
}

Tensor feature_norm(const Tensor& x, int axis, const Tensor& gamma, const Tensor& beta) {
  require_defined(x, "feature_norm");
  const std::size_t ax = norm_axis(x.shape(), axis, "feature_norm");
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.extent < 2) {
    throw ShapeError("feature_norm: degenerate normalization, " + std::to_string(s.extent) +
                     " element(s) along axis " + std::to_string(axis) + " of shape " +
                     shape_str(x.shape()));
  }
  const std::size_t channels = x.shape().back();
  for (const Tensor* p : {&gamma, &beta}) {
    if (p->defined() && (p->rank() != 1 || p->shape()[0] != channels)) {
      throw ShapeError("feature_norm: affine shape " + shape_str(p->shape()) +
                       " does not match channel count " + std::to_string(channels));
    }
  }
  const auto xv = x.values();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(s.outer * s.inner);
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      // Shifted moments: exact zero deviation for constant input.
      const double pivot = xv[base];
      double acc = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) acc += xv[base + j * s.inner] - pivot;
      const double mu = pivot + acc / n;
      double var = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double d = xv[base + j * s.inner] - mu;
        var += d * d;
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + kNormEps);
      inv_std[o * s.inner + in] = inv;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const std::size_t k = base + j * s.inner;
        xhat[k] = (xv[k] - mu) * inv;
      }
    }
  }
  std::vector<double> out(xhat);
  const auto gv = gamma.defined() ? gamma.values() : std::span<const double>{};
  const auto bv = beta.defined() ? beta.values() : std::span<const double>{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = i % channels;
    if (!gv.empty()) out[i] *= gv[c];
    if (!bv.empty()) out[i] += bv[c];
  }
  std::vector<Tensor> parents{x};
  const int gi = gamma.defined() ? static_cast<int>(parents.size()) : -1;
  if (gamma.defined()) parents.push_back(gamma);
  const int bi = beta.defined() ? static_cast<int>(parents.size()) : -1;
  if (beta.defined()) parents.push_back(beta);
  return make_result(
      "feature_norm", x.shape(), std::move(out), std::move(parents),
      [s, channels, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double* gam = gi >= 0 ? self.parents[gi]->value.data() : nullptr;
        if (gi >= 0 && wants(self, gi)) {
          auto& gg = self.parents[gi]->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gg[i % channels] += self.grad[i] * xhat[i];
        }
        if (bi >= 0 && wants(self, bi)) {
          auto& gb = self.parents[bi]->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % channels] += self.grad[i];
        }
        if (!wants(self, 0)) return;
        auto& gx = self.parents[0]->ensure_grad();
        const double n = static_cast<double>(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < s.extent; ++j) {
              const std::size_t k = base + j * s.inner;
              const double g = self.grad[k] * (gam ? gam[k % channels] : 1.0);
              sum_g += g;
              sum_gx += g * xhat[k];
            }
            const double inv = inv_std[o * s.inner + in];
            for (std::size_t j = 0; j < s.extent; ++j) {
              const std::size_t k = base + j * s.inner;
              const double g = self.grad[k] * (gam ? gam[k % channels] : 1.0);
              gx[k] += inv / n * (n * g - sum_g - xhat[k] * sum_gx);
            }
          }
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {

// Maps each output flat index to its source flat index for a permutation.
std::vector<std::size_t> permute_index(const Shape& in_shape, const std::vector<std::size_t>& perm) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        src += stride[d];
        break;
      }
      src -= stride[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  return index;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  require_defined(x, "permute");
  const std::size_t r = x.rank();
  std::vector<std::size_t> check(perm);
  std::sort(check.begin(), check.end());
  bool ok = perm.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) ok = check[i] == i;
  if (!ok) throw ShapeError("permute: invalid permutation for shape " + shape_str(x.shape()));
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  auto index = permute_index(x.shape(), perm);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[index[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {x},
                     [index = std::move(index)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
                     });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t ax = norm_axis(first, axis, "concat");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat");
    bool ok = p.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == ax || p.shape()[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " +
                       shape_str(p.shape()) + " along axis " + std::to_string(axis));
    }
    extents.push_back(p.shape()[ax]);
    total += p.shape()[ax];
  }
  Shape out_shape = first;
  out_shape[ax] = total;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    const std::size_t chunk = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * total * s.inner + offset * s.inner);
    }
    offset += extents[k];
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result("concat", std::move(out_shape), std::move(out), std::move(parents),
                     [s, total, extents](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < extents.size(); ++k) {
                         const std::size_t chunk = extents[k] * s.inner;
                         if (wants(self, k)) {
                           auto& g = self.parents[k]->ensure_grad();
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* src =
                                 self.grad.data() + o * total * s.inner + offset * s.inner;
                             double* dst = g.data() + o * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                           }
                         }
                         offset += extents[k];
                       }
                     });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, std::move(s)));
  }
  return concat(expanded, 0);
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  require_defined(x, "slice");
  const std::size_t ax = norm_axis(x.shape(), axis, "slice");
  if (begin > end || end > x.shape()[ax]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  std::vector<double> out(s.outer * chunk);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, chunk, out.data() + o * chunk);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {x},
                     [s, begin, chunk](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         double* dst = g.data() + (o * s.extent + begin) * s.inner;
                         const double* src = self.grad.data() + o * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                       }
                     });
}

namespace {

// cols[(y*W + x), (c*k + ky)*k + kx] = x[c, y+ky-pad, x+kx-pad] (zero outside).
void im2col(const double* img, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t row_len = C * k * k;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double* row = cols + (y * W + x) * row_len;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(H) &&
                                sx < static_cast<std::ptrdiff_t>(W);
            *row++ = inside ? img[(c * H + static_cast<std::size_t>(sy)) * W +
                                  static_cast<std::size_t>(sx)]
                            : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t row_len = C * k * k;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double* row = cols + (y * W + x) * row_len;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          for (std::size_t kx = 0; kx < k; ++kx, ++row) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
            if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(H) &&
                sx < static_cast<std::ptrdiff_t>(W)) {
              img[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)] += *row;
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined(x, "conv2d");
  require_defined(w, "conv2d");
  if (x.rank() != 4 || w.rank() != 4 || w.shape()[1] != x.shape()[1] ||
      w.shape()[2] != w.shape()[3] || w.shape()[2] % 2 == 0) {
    throw ShapeError("conv2d: dimension mismatch input " + shape_str(x.shape()) + " weight " +
                     shape_str(w.shape()));
  }
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t O = w.shape()[0], k = w.shape()[2];
  if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != O)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  }
  const std::size_t hw = H * W, ck = C * k * k;
  std::vector<double> out(N * O * hw);
  std::vector<double> cols(hw * ck);
  CMapMat Wm(w.values().data(), O, ck);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(x.values().data() + n * C * hw, C, H, W, k, cols.data());
    CMapMat Cm(cols.data(), hw, ck);
    MapMat Y(out.data() + n * O * hw, O, hw);
    Y.noalias() = Wm * Cm.transpose();
    if (bias.defined()) {
      CMapVec b(bias.values().data(), O);
      Y.colwise() += b;
    }
  }
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(
      "conv2d", {N, O, H, W}, std::move(out), std::move(parents),
      [=](Node& self) {
        std::vector<double> cols(hw * ck);
        CMapMat Wm(self.parents[1]->value.data(), O, ck);
        const bool need_x = wants(self, 0), need_w = wants(self, 1);
        double* gw = need_w ? self.parents[1]->ensure_grad().data() : nullptr;
        double* gx = need_x ? self.parents[0]->ensure_grad().data() : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
          CMapMat G(self.grad.data() + n * O * hw, O, hw);
          if (need_w) {
            im2col(self.parents[0]->value.data() + n * C * hw, C, H, W, k, cols.data());
            CMapMat Cm(cols.data(), hw, ck);
            MapMat GW(gw, O, ck);
            GW.noalias() += G * Cm;
          }
          if (need_x) {
            MapMat Cm(cols.data(), hw, ck);
            Cm.noalias() = G.transpose() * Wm;
            col2im_add(cols.data(), C, H, W, k, gx + n * C * hw);
          }
          if (has_bias && wants(self, 2)) {
            double* gb = self.parents[2]->ensure_grad().data();
            const double* g = self.grad.data() + n * O * hw;
            for (std::size_t o = 0; o < O; ++o) {
              double acc = 0.0;
              for (std::size_t i = 0; i < hw; ++i) acc += g[o * hw + i];
              gb[o] += acc;
            }
          }
        }
      });
}

namespace {

std::vector<std::size_t> s2d_index(std::size_t batch, std::size_t h, std::size_t w, std::size_t p,
                                   std::size_t c) {
  const std::size_t gh = h / p, gw = w / p;
  std::vector<std::size_t> index(batch * h * w * c);
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        for (std::size_t dy = 0; dy < p; ++dy) {
          for (std::size_t dx = 0; dx < p; ++dx) {
            const std::size_t src_tok = (gy * p + dy) * w + gx * p + dx;
            for (std::size_t ch = 0; ch < c; ++ch) index[i++] = (b * h * w + src_tok) * c + ch;
          }
        }
      }
    }
  }
  return index;
}

}  // namespace

Tensor space_to_depth(const Tensor& x, std::size_t h, std::size_t w, std::size_t p) {
  require_defined(x, "space_to_depth");
  if (x.rank() != 3 || x.shape()[1] != h * w || p == 0 || h % p || w % p) {
    throw ShapeError("space_to_depth: shape " + shape_str(x.shape()) + " incompatible with grid " +
                     std::to_string(h) + "x" + std::to_string(w) + " / " + std::to_string(p));
  }
  const std::size_t batch = x.shape()[0], c = x.shape()[2];
  auto index = s2d_index(batch, h, w, p, c);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[index[i]];
  return make_result("space_to_depth", {batch, (h / p) * (w / p), p * p * c}, std::move(out), {x},
                     [index = std::move(index)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
                     });
}

Tensor depth_to_space(const Tensor& x, std::size_t h, std::size_t w, std::size_t p) {
  require_defined(x, "depth_to_space");
  if (x.rank() != 3 || p == 0 || h % p || w % p || x.shape()[1] != (h / p) * (w / p) ||
      x.shape()[2] % (p * p)) {
    throw ShapeError("depth_to_space: shape " + shape_str(x.shape()) + " incompatible with grid " +
                     std::to_string(h) + "x" + std::to_string(w) + " / " + std::to_string(p));
  }
  const std::size_t batch = x.shape()[0], c = x.shape()[2] / (p * p);
  auto index = s2d_index(batch, h, w, p, c);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < index.size(); ++i) out[index[i]] = xv[i];
  return make_result("depth_to_space", {batch, h * w, c}, std::move(out), {x},
                     [index = std::move(index)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < index.size(); ++i) g[i] += self.grad[index[i]];
                     });
}

}  // namespace ds::ops
