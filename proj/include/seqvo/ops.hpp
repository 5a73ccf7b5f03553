#pragma once

#include <optional>
#include <span>
#include <vector>

#include "seqvo/autodiff.hpp"

// Differentiable operators over Var. Binary elementwise operators broadcast
// along singleton dimensions only (ranks are left-padded with ones).
namespace seqvo::ad {

inline constexpr double kGuardEps = 1e-12;

enum class OpKind { kAdd, kSub, kMul, kDiv, kRelu, kSigmoid, kTanh, kExp, kLog, kAbs, kPowConst };

// Generic entry point; `b` is required for binary kinds, `exponent` is used
// by kPowConst only.
Var elementwise(OpKind kind, Var a, std::optional<Var> b = std::nullopt, double exponent = 1.0);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var abs(Var x);
Var pow_const(Var x, double exponent);

Var neg(Var x);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);
// Clamps into [lo, hi]; gradient passes only inside the interval.
Var clamp(Var x, double lo, double hi);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

// a[M x K] . b[K x N]
Var matmul(Var a, Var b);

// x[B x C x H x W], w[F x C x k x k], bias[F] -> [B x F x H' x W'] with
// H' = floor((H + 2 pad - k) / stride) + 1. Direct cross-correlation.
Var conv2d(Var x, Var w, std::optional<Var> bias, int stride, int pad);
// Adjoint of conv2d with the same weight layout: x[B x F x H x W],
// w[F x C x k x k] -> [B x C x (H-1) stride - 2 pad + k x ...].
Var conv_transpose2d(Var x, Var w, std::optional<Var> bias, int stride, int pad);

enum class ReduceKind { kSum, kMean };
Var reduce(ReduceKind kind, Var x, std::vector<int> axes, bool keepdims = false);
Var sum(Var x, std::vector<int> axes, bool keepdims = false);
Var mean(Var x, std::vector<int> axes, bool keepdims = false);
Var sum_all(Var x);
Var mean_all(Var x);

Var concat(std::span<const Var> xs, int axis);
inline Var concat(std::initializer_list<Var> xs, int axis) {
  return concat(std::span<const Var>(xs.begin(), xs.size()), axis);
}
// [B x C x H x W] -> [B x C]
Var global_avg_pool(Var x);

Var reshape(Var x, Shape shape);
// Slice [start, start + length) along `axis`.
Var narrow(Var x, int axis, std::size_t start, std::size_t length);
// Gathers rows along axis 0; indices may repeat.
Var index_select(Var x, std::span<const std::size_t> indices);
// Broadcasts singleton dimensions of x to `shape`.
Var expand(Var x, Shape shape);

// Mean over every k x k window of the last two dimensions, stride 1, no padding.
Var box_filter(Var x, int k);
// Bilinear resize of the last two dimensions with half-pixel centers and
// edge clamping; identity when the size is unchanged.
Var resize_bilinear(Var x, std::size_t height, std::size_t width);
Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width);

Var detach(Var x);

}  // namespace seqvo::ad

namespace seqvo::ad {

// a[B x M x K] . b[B x K x N] -> [B x M x N]
Var batched_matmul(Var a, Var b);

}  // namespace seqvo::ad
