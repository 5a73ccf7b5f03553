#include "seqvo/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqvo/errors.hpp"

namespace seqvo::ad {
namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool trivial = false;
};

std::vector<std::size_t> broadcast_strides(const Shape& padded, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t d = out.size(); d-- > 0;) {
    strides[d] = (padded[d] == 1 && out[d] != 1) ? 0 : s;
    s *= padded[d];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.trivial = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  plan.out.resize(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (pa[d] == pb[d] || pb[d] == 1) {
      plan.out[d] = pa[d];
    } else if (pa[d] == 1) {
      plan.out[d] = pb[d];
    } else {
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcast-compatible");
    }
  }
  plan.stride_a = broadcast_strides(pa, plan.out);
  plan.stride_b = broadcast_strides(pb, plan.out);
  return plan;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void broadcast_loop(const BroadcastPlan& p, F&& f) {
  const std::size_t n = numel(p.out);
  if (p.trivial) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += p.stride_a[d];
      ob += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.stride_a[d] * p.out[d];
      ob -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

// fwd(a, b) -> y ; da(a, b, y) and db(a, b, y) are local partial derivatives.
template <class Fwd, class Da, class Db>
Var binary(Var a, Var b, Fwd fwd, Da da, Db db) {
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
  Tensor out(plan.out);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = fwd(A[ia], B[ib]);
  });
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b},
                         [plan = std::move(plan), aid, bid, da, db](Tape& t, NodeId self) {
                           const Tensor& g = t.grad(self);
                           const Tensor& y = t.value(self);
                           const Tensor& av = t.value(aid);
                           const Tensor& bv = t.value(bid);
                           Tensor* ga = t.requires_grad(aid) ? &t.grad_accum(aid) : nullptr;
                           Tensor* gb = t.requires_grad(bid) ? &t.grad_accum(bid) : nullptr;
                           broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             if (ga) (*ga)[ia] += g[i] * da(av[ia], bv[ib], y[i]);
                             if (gb) (*gb)[ib] += g[i] * db(av[ia], bv[ib], y[i]);
                           });
                         });
}

// fwd(x) -> y ; d(x, y) = dy/dx.
template <class Fwd, class D>
Var unary(Var x, Fwd fwd, D d) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = fwd(X[i]);
  const NodeId xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, d](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& xv = t.value(xid);
    Tensor& gx = t.grad_accum(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i], y[i]);
  });
}

double guard_den(double d) {
  if (std::abs(d) >= kGuardEps) return d;
  return d < 0.0 ? -kGuardEps : kGuardEps;
}

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void check_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(x.shape()));
  }
}

// Column matrix rows are (c, ki, kj); columns are output positions.
void im2col(const double* x, int C, int H, int W, int k, int s, int p, int Ho, int Wo, double* col) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col + (static_cast<std::size_t>((c * k + ki) * k + kj)) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * s - p + ki;
          double* dst = row + static_cast<std::size_t>(oh) * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * s - p + kj;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int C, int H, int W, int k, int s, int p, int Ho, int Wo, double* x) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = col + (static_cast<std::size_t>((c * k + ki) * k + kj)) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * s - p + ki;
          if (ih < 0 || ih >= H) continue;
          const double* src = row + static_cast<std::size_t>(oh) * Wo;
          double* dst = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * s - p + kj;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

struct ConvDims {
  int B, C, H, W, F, k, Ho, Wo;
};

void check_bias(const std::optional<Var>& bias, std::size_t n, const char* op) {
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != n)) {
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias->shape()) +
                     " does not match " + std::to_string(n) + " channels");
  }
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  std::size_t guarded = 0;
  for (double v : b.value().data()) guarded += std::abs(v) < kGuardEps;
  a.tape().diagnostics().div_guarded += guarded;
  return binary(
      a, b, [](double x, double y) { return x / guard_den(y); },
      [](double, double y, double) { return 1.0 / guard_den(y); },
      [](double x, double y, double) {
        const double d = guard_den(y);
        return -x / (d * d);
      });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  std::size_t clamped = 0;
  for (double v : x.value().data()) clamped += v <= 0.0;
  x.tape().diagnostics().log_clamped += clamped;
  return unary(
      x, [](double v) { return std::log(std::max(v, kGuardEps)); },
      [](double v, double) { return v >= kGuardEps ? 1.0 / v : 0.0; });
}

Var abs(Var x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var pow_const(Var x, double exponent) {
  return unary(
      x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Var neg(Var x) { return scale(x, -1.0); }

Var scale(Var x, double factor) {
  return unary(
      x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary(
      x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var clamp(Var x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var elementwise(OpKind kind, Var a, std::optional<Var> b, double exponent) {
  auto need_b = [&]() -> Var {
    if (!b) throw Error("binary elementwise operation requires a second operand");
    return *b;
  };
  switch (kind) {
    case OpKind::kAdd: return add(a, need_b());
    case OpKind::kSub: return sub(a, need_b());
    case OpKind::kMul: return mul(a, need_b());
    case OpKind::kDiv: return div(a, need_b());
    case OpKind::kRelu: return relu(a);
    case OpKind::kSigmoid: return sigmoid(a);
    case OpKind::kTanh: return tanh(a);
    case OpKind::kExp: return exp(a);
    case OpKind::kLog: return log(a);
    case OpKind::kAbs: return abs(a);
    case OpKind::kPowConst: return pow_const(a, exponent);
  }
  throw Error("unknown elementwise operation");
}

Var matmul(Var a, Var b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  if (b.shape()[0] != K) {
    throw ShapeError("matmul: inner dimensions differ: " + to_string(a.shape()) + " . " +
                     to_string(b.shape()));
  }
  Tensor out({M, N});
  MapRM(out.ptr(), M, N).noalias() = CMapRM(a.value().ptr(), M, K) * CMapRM(b.value().ptr(), K, N);
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, M, K, N](Tape& t, NodeId self) {
    CMapRM g(t.grad(self).ptr(), M, N);
    if (t.requires_grad(aid)) {
      MapRM(t.grad_accum(aid).ptr(), M, K).noalias() += g * CMapRM(t.value(bid).ptr(), K, N).transpose();
    }
    if (t.requires_grad(bid)) {
      MapRM(t.grad_accum(bid).ptr(), K, N).noalias() += CMapRM(t.value(aid).ptr(), M, K).transpose() * g;
    }
  });
}

Var conv2d(Var x, Var w, std::optional<Var> bias, int stride, int pad) {
  check_rank(x, 4, "conv2d");
  check_rank(w, 4, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[1] != xs[1]) throw ShapeError("conv2d: weight " + to_string(ws) + " vs input " + to_string(xs));
  if (ws[2] != ws[3]) throw ShapeError("conv2d: kernel must be square");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride/pad");
  check_bias(bias, ws[0], "conv2d");
  ConvDims d{};
  d.B = static_cast<int>(xs[0]);
  d.C = static_cast<int>(xs[1]);
  d.H = static_cast<int>(xs[2]);
  d.W = static_cast<int>(xs[3]);
  d.F = static_cast<int>(ws[0]);
  d.k = static_cast<int>(ws[2]);
  const int ho = (d.H + 2 * pad - d.k) / stride + 1;
  const int wo = (d.W + 2 * pad - d.k) / stride + 1;
  if (d.H + 2 * pad - d.k < 0 || d.W + 2 * pad - d.k < 0 || ho <= 0 || wo <= 0) {
    throw ShapeError("conv2d: non-positive output size for input " + to_string(xs));
  }
  d.Ho = ho;
  d.Wo = wo;
  const std::size_t ckk = static_cast<std::size_t>(d.C) * d.k * d.k;
  const std::size_t hw = static_cast<std::size_t>(ho) * wo;
  Tensor out({xs[0], ws[0], static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  std::vector<double> col(ckk * hw);
  CMapRM wm(w.value().ptr(), d.F, ckk);
  for (int b = 0; b < d.B; ++b) {
    im2col(x.value().ptr() + static_cast<std::size_t>(b) * d.C * d.H * d.W, d.C, d.H, d.W, d.k, stride,
           pad, ho, wo, col.data());
    MapRM y(out.ptr() + static_cast<std::size_t>(b) * d.F * hw, d.F, hw);
    y.noalias() = wm * CMapRM(col.data(), ckk, hw);
    if (bias) {
      for (int f = 0; f < d.F; ++f) y.row(f).array() += bias->value()[f];
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const NodeId xid = x.id(), wid = w.id();
  const std::optional<NodeId> bid = bias ? std::optional<NodeId>(bias->id()) : std::nullopt;
  return x.tape().record(std::move(out), inputs, [d, xid, wid, bid, stride, pad](Tape& t, NodeId self) {
    const std::size_t ckk = static_cast<std::size_t>(d.C) * d.k * d.k;
    const std::size_t hw = static_cast<std::size_t>(d.Ho) * d.Wo;
    const std::size_t in_sz = static_cast<std::size_t>(d.C) * d.H * d.W;
    const Tensor& g = t.grad(self);
    const bool want_x = t.requires_grad(xid), want_w = t.requires_grad(wid);
    std::vector<double> col(ckk * hw);
    CMapRM wm(t.value(wid).ptr(), d.F, ckk);
    for (int b = 0; b < d.B; ++b) {
      CMapRM gy(g.ptr() + static_cast<std::size_t>(b) * d.F * hw, d.F, hw);
      if (want_w) {
        im2col(t.value(xid).ptr() + b * in_sz, d.C, d.H, d.W, d.k, stride, pad, d.Ho, d.Wo, col.data());
        MapRM(t.grad_accum(wid).ptr(), d.F, ckk).noalias() += gy * CMapRM(col.data(), ckk, hw).transpose();
      }
      if (want_x) {
        MapRM(col.data(), ckk, hw).noalias() = wm.transpose() * gy;
        col2im(col.data(), d.C, d.H, d.W, d.k, stride, pad, d.Ho, d.Wo, t.grad_accum(xid).ptr() + b * in_sz);
      }
      if (bid && t.requires_grad(*bid)) {
        Tensor& gb = t.grad_accum(*bid);
        for (int f = 0; f < d.F; ++f) gb[f] += gy.row(f).sum();
      }
    }
  });
}

Var conv_transpose2d(Var x, Var w, std::optional<Var> bias, int stride, int pad) {
  check_rank(x, 4, "conv_transpose2d");
  check_rank(w, 4, "conv_transpose2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[0] != xs[1]) {
    throw ShapeError("conv_transpose2d: weight " + to_string(ws) + " vs input " + to_string(xs));
  }
  if (ws[2] != ws[3]) throw ShapeError("conv_transpose2d: kernel must be square");
  if (stride < 1 || pad < 0) throw ShapeError("conv_transpose2d: invalid stride/pad");
  check_bias(bias, ws[1], "conv_transpose2d");
  // Dimensions are named from the perspective of the adjoint convolution:
  // the transposed output is the convolution input (C x H x W) and the
  // transposed input is the convolution output (F x Ho x Wo).
  ConvDims d{};
  d.B = static_cast<int>(xs[0]);
  d.F = static_cast<int>(xs[1]);
  d.Ho = static_cast<int>(xs[2]);
  d.Wo = static_cast<int>(xs[3]);
  d.C = static_cast<int>(ws[1]);
  d.k = static_cast<int>(ws[2]);
  d.H = (d.Ho - 1) * stride - 2 * pad + d.k;
  d.W = (d.Wo - 1) * stride - 2 * pad + d.k;
  if (d.H <= 0 || d.W <= 0) throw ShapeError("conv_transpose2d: non-positive output size");
  const std::size_t ckk = static_cast<std::size_t>(d.C) * d.k * d.k;
  const std::size_t hw = static_cast<std::size_t>(d.Ho) * d.Wo;
  const std::size_t out_sz = static_cast<std::size_t>(d.C) * d.H * d.W;
  Tensor out({xs[0], ws[1], static_cast<std::size_t>(d.H), static_cast<std::size_t>(d.W)});
  std::vector<double> col(ckk * hw);
  CMapRM wm(w.value().ptr(), d.F, ckk);
  for (int b = 0; b < d.B; ++b) {
    MapRM(col.data(), ckk, hw).noalias() =
        wm.transpose() * CMapRM(x.value().ptr() + static_cast<std::size_t>(b) * d.F * hw, d.F, hw);
    double* y = out.ptr() + b * out_sz;
    col2im(col.data(), d.C, d.H, d.W, d.k, stride, pad, d.Ho, d.Wo, y);
    if (bias) {
      const std::size_t plane = static_cast<std::size_t>(d.H) * d.W;
      for (int c = 0; c < d.C; ++c) {
        const double bv = bias->value()[c];
        for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] += bv;
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const NodeId xid = x.id(), wid = w.id();
  const std::optional<NodeId> bid = bias ? std::optional<NodeId>(bias->id()) : std::nullopt;
  return x.tape().record(std::move(out), inputs, [d, xid, wid, bid, stride, pad](Tape& t, NodeId self) {
    const std::size_t ckk = static_cast<std::size_t>(d.C) * d.k * d.k;
    const std::size_t hw = static_cast<std::size_t>(d.Ho) * d.Wo;
    const std::size_t out_sz = static_cast<std::size_t>(d.C) * d.H * d.W;
    const std::size_t plane = static_cast<std::size_t>(d.H) * d.W;
    const Tensor& g = t.grad(self);
    const bool want_x = t.requires_grad(xid), want_w = t.requires_grad(wid);
    std::vector<double> col(ckk * hw);
    CMapRM wm(t.value(wid).ptr(), d.F, ckk);
    for (int b = 0; b < d.B; ++b) {
      const double* gy = g.ptr() + b * out_sz;
      if (want_x || want_w) {
        im2col(gy, d.C, d.H, d.W, d.k, stride, pad, d.Ho, d.Wo, col.data());
        CMapRM gcol(col.data(), ckk, hw);
        if (want_x) {
          MapRM(t.grad_accum(xid).ptr() + static_cast<std::size_t>(b) * d.F * hw, d.F, hw).noalias() += wm * gcol;
        }
        if (want_w) {
          MapRM(t.grad_accum(wid).ptr(), d.F, ckk).noalias() +=
              CMapRM(t.value(xid).ptr() + static_cast<std::size_t>(b) * d.F * hw, d.F, hw) * gcol.transpose();
        }
      }
      if (bid && t.requires_grad(*bid)) {
        Tensor& gb = t.grad_accum(*bid);
        for (int c = 0; c < d.C; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += gy[c * plane + i];
          gb[c] += s;
        }
      }
    }
  });
}

Var reduce(ReduceKind kind, Var x, std::vector<int> axes, bool keepdims) {
  const Shape& in = x.shape();
  Shape kept = in;
  std::vector<bool> reduced(in.size(), false);
  for (int a : axes) reduced[norm_axis(a, in.size())] = true;
  std::size_t count = 1;
  Shape squeezed;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (reduced[d]) {
      count *= in[d];
      kept[d] = 1;
    } else {
      squeezed.push_back(in[d]);
    }
  }
  const double factor = kind == ReduceKind::kMean ? 1.0 / static_cast<double>(count) : 1.0;
  BroadcastPlan plan = plan_broadcast(in, kept);
  Tensor out(kept);
  const Tensor& X = x.value();
  broadcast_loop(plan, [&](std::size_t, std::size_t ix, std::size_t io) { out[io] += X[ix]; });
  if (factor != 1.0) {
    for (double& v : out.data()) v *= factor;
  }
  if (!keepdims) out = out.reshaped(squeezed);
  const NodeId xid = x.id();
  return x.tape().record(std::move(out), {x}, [plan = std::move(plan), xid, factor](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_accum(xid);
    broadcast_loop(plan, [&](std::size_t, std::size_t ix, std::size_t io) { gx[ix] += factor * g[io]; });
  });
}

Var sum(Var x, std::vector<int> axes, bool keepdims) {
  return reduce(ReduceKind::kSum, x, std::move(axes), keepdims);
}

Var mean(Var x, std::vector<int> axes, bool keepdims) {
  return reduce(ReduceKind::kMean, x, std::move(axes), keepdims);
}

Var sum_all(Var x) {
  std::vector<int> axes(x.shape().size());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceKind::kSum, x, axes, false);
}

Var mean_all(Var x) {
  std::vector<int> axes(x.shape().size());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceKind::kMean, x, axes, false);
}

Var concat(std::span<const Var> xs, int axis_in) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = xs[0].shape();
  const std::size_t axis = norm_axis(axis_in, first.size());
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Var& v : xs) {
    const Shape& s = v.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: shapes " + to_string(first) + " and " + to_string(s) + " differ off-axis");
      }
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t total = out_shape[axis];
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double* src = xs[i].value().ptr();
    const std::size_t block = widths[i] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block, out.ptr() + (o * total + offset) * inner);
    }
    offset += widths[i];
  }
  std::vector<NodeId> ids;
  for (const Var& v : xs) ids.push_back(v.id());
  return xs[0].tape().record(std::move(out), xs, [ids, widths, outer, inner, total](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t block = widths[i] * inner;
      if (t.requires_grad(ids[i])) {
        double* dst = t.grad_accum(ids[i]).ptr();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.ptr() + (o * total + offset) * inner;
          for (std::size_t j = 0; j < block; ++j) dst[o * block + j] += src[j];
        }
      }
      offset += widths[i];
    }
  });
}

Var global_avg_pool(Var x) {
  check_rank(x, 4, "global_avg_pool");
  return mean(x, {2, 3}, false);
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const NodeId xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_accum(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var narrow(Var x, int axis_in, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  const std::size_t axis = norm_axis(axis_in, in.size());
  if (length == 0 || start + length > in[axis]) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis of size " + std::to_string(in[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  Shape out_shape = in;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t full = in[axis];
  const double* src = x.value().ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + (o * full + start) * inner, src + (o * full + start + length) * inner,
              out.ptr() + o * length * inner);
  }
  const NodeId xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, outer, inner, full, start, length](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    double* dst = t.grad_accum(xid).ptr();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* s = g.ptr() + o * length * inner;
      double* d = dst + (o * full + start) * inner;
      for (std::size_t j = 0; j < length * inner; ++j) d[j] += s[j];
    }
  });
}

Var index_select(Var x, std::span<const std::size_t> indices) {
  const Shape& in = x.shape();
  if (in.empty() || indices.empty()) throw ShapeError("index_select: empty input or index list");
  const std::size_t row = numel(in) / in[0];
  for (auto i : indices) {
    if (i >= in[0]) throw ShapeError("index_select: index " + std::to_string(i) + " out of range");
  }
  Shape out_shape = in;
  out_shape[0] = indices.size();
  Tensor out(out_shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy(x.value().ptr() + indices[r] * row, x.value().ptr() + (indices[r] + 1) * row, out.ptr() + r * row);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const NodeId xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, idx = std::move(idx), row](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    double* dst = t.grad_accum(xid).ptr();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < row; ++j) dst[idx[r] * row + j] += g[r * row + j];
    }
  });
}

Var expand(Var x, Shape shape) {
  if (x.shape().size() != shape.size()) throw ShapeError("expand: rank mismatch");
  BroadcastPlan plan = plan_broadcast(shape, x.shape());
  if (plan.out != shape) {
    throw ShapeError("expand: cannot expand " + to_string(x.shape()) + " to " + to_string(shape));
  }
  plan.trivial = false;
  if (plan.stride_a.empty()) {
    plan.stride_a = broadcast_strides(shape, shape);
    plan.stride_b = broadcast_strides(x.shape(), shape);
  }
  Tensor out(shape);
  const Tensor& X = x.value();
  broadcast_loop(plan, [&](std::size_t i, std::size_t, std::size_t ix) { out[i] = X[ix]; });
  const NodeId xid = x.id();
  return x.tape().record(std::move(out), {x}, [plan = std::move(plan), xid](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_accum(xid);
    broadcast_loop(plan, [&](std::size_t i, std::size_t, std::size_t ix) { gx[ix] += g[i]; });
  });
}

Var box_filter(Var x, int k) {
  const Shape& in = x.shape();
  if (in.size() < 2) throw ShapeError("box_filter: rank must be at least 2");
  const std::size_t H = in[in.size() - 2], W = in[in.size() - 1];
  if (k < 1 || static_cast<std::size_t>(k) > H || static_cast<std::size_t>(k) > W) {
    throw ShapeError("box_filter: window " + std::to_string(k) + " larger than " + to_string(in));
  }
  const std::size_t K = static_cast<std::size_t>(k);
  const std::size_t Ho = H - K + 1, Wo = W - K + 1;
  const std::size_t planes = numel(in) / (H * W);
  Shape out_shape = in;
  out_shape[in.size() - 2] = Ho;
  out_shape[in.size() - 1] = Wo;
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(K * K);
  std::vector<double> S((H + 1) * (W + 1));
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.value().ptr() + p * H * W;
    for (std::size_t i = 0; i < H; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < W; ++j) {
        row += src[i * W + j];
        S[(i + 1) * (W + 1) + j + 1] = S[i * (W + 1) + j + 1] + row;
      }
    }
    double* dst = out.ptr() + p * Ho * Wo;
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        const double s = S[(i + K) * (W + 1) + j + K] - S[i * (W + 1) + j + K] - S[(i + K) * (W + 1) + j] +
                         S[i * (W + 1) + j];
        dst[i * Wo + j] = s * inv;
      }
    }
  }
  const NodeId xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, H, W, K, Ho, Wo, planes, inv](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    double* gx = t.grad_accum(xid).ptr();
    std::vector<double> S((Ho + 1) * (Wo + 1));
    for (std::size_t p = 0; p < planes; ++p) {
      const double* gy = g.ptr() + p * Ho * Wo;
      for (std::size_t i = 0; i < Ho; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < Wo; ++j) {
          row += gy[i * Wo + j];
          S[(i + 1) * (Wo + 1) + j + 1] = S[i * (Wo + 1) + j + 1] + row;
        }
      }
      // Input pixel (i, j) is covered by windows with top-left in
      // [i-K+1, i] x [j-K+1, j] clipped to the output grid.
      for (std::size_t i = 0; i < H; ++i) {
        const std::size_t r0 = i + 1 >= K ? i + 1 - K : 0;
        const std::size_t r1 = std::min(i, Ho - 1) + 1;
        if (r0 >= r1) continue;
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t c0 = j + 1 >= K ? j + 1 - K : 0;
          const std::size_t c1 = std::min(j, Wo - 1) + 1;
          if (c0 >= c1) continue;
          const double s = S[r1 * (Wo + 1) + c1] - S[r0 * (Wo + 1) + c1] - S[r1 * (Wo + 1) + c0] +
                           S[r0 * (Wo + 1) + c0];
          gx[p * H * W + i * W + j] += s * inv;
        }
      }
    }
  });
}

namespace {

struct ResizeTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w;  // weight of the `hi` tap
};

ResizeTaps resize_taps(std::size_t in, std::size_t out) {
  ResizeTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.w.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto l = static_cast<std::size_t>(std::floor(s));
    taps.lo[o] = l;
    taps.hi[o] = std::min(l + 1, in - 1);
    taps.w[o] = s - static_cast<double>(l);
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width) {
  const Shape& in = x.shape();
  if (in.size() < 2) throw ShapeError("resize_bilinear: rank must be at least 2");
  const std::size_t h = in[in.size() - 2], w = in[in.size() - 1];
  const std::size_t planes = numel(in) / (h * w);
  const ResizeTaps ty = resize_taps(h, height), tx = resize_taps(w, width);
  Shape out_shape = in;
  out_shape[in.size() - 2] = height;
  out_shape[in.size() - 1] = width;
  Tensor out(out_shape);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.ptr() + p * h * w;
    double* dst = out.ptr() + p * height * width;
    for (std::size_t i = 0; i < height; ++i) {
      const double wy = ty.w[i];
      const double* r0 = src + ty.lo[i] * w;
      const double* r1 = src + ty.hi[i] * w;
      for (std::size_t j = 0; j < width; ++j) {
        const double wx = tx.w[j];
        const double top = (1.0 - wx) * r0[tx.lo[j]] + wx * r0[tx.hi[j]];
        const double bot = (1.0 - wx) * r1[tx.lo[j]] + wx * r1[tx.hi[j]];
        dst[i * width + j] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Var resize_bilinear(Var x, std::size_t height, std::size_t width) {
  Tensor out = resize_bilinear(x.value(), height, width);
  const Shape& in = x.shape();
  const std::size_t h = in[in.size() - 2], w = in[in.size() - 1];
  const std::size_t planes = numel(in) / (h * w);
  const NodeId xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, h, w, height, width, planes](Tape& t, NodeId self) {
    const ResizeTaps ty = resize_taps(h, height), tx = resize_taps(w, width);
    const Tensor& g = t.grad(self);
    double* gx = t.grad_accum(xid).ptr();
    for (std::size_t p = 0; p < planes; ++p) {
      const double* gy = g.ptr() + p * height * width;
      double* dst = gx + p * h * w;
      for (std::size_t i = 0; i < height; ++i) {
        const double wy = ty.w[i];
        for (std::size_t j = 0; j < width; ++j) {
          const double wx = tx.w[j];
          const double v = gy[i * width + j];
          dst[ty.lo[i] * w + tx.lo[j]] += (1.0 - wy) * (1.0 - wx) * v;
          dst[ty.lo[i] * w + tx.hi[j]] += (1.0 - wy) * wx * v;
          dst[ty.hi[i] * w + tx.lo[j]] += wy * (1.0 - wx) * v;
          dst[ty.hi[i] * w + tx.hi[j]] += wy * wx * v;
        }
      }
    }
  });
}

Var detach(Var x) { return x.tape().constant(x.value()); }

}  // namespace seqvo::ad

namespace seqvo::ad {

Var batched_matmul(Var a, Var b) {
  if (a.shape().size() != 3 || b.shape().size() != 3) throw ShapeError("batched_matmul expects rank 3");
  const std::size_t B = a.shape()[0], M = a.shape()[1], K = a.shape()[2], N = b.shape()[2];
  if (b.shape()[0] != B || b.shape()[1] != K) {
    throw ShapeError("batched_matmul: " + to_string(a.shape()) + " . " + to_string(b.shape()));
  }
  Tensor out({B, M, N});
  for (std::size_t i = 0; i < B; ++i) {
    MapRM(out.ptr() + i * M * N, M, N).noalias() =
        CMapRM(a.value().ptr() + i * M * K, M, K) * CMapRM(b.value().ptr() + i * K * N, K, N);
  }
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, B, M, K, N](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < B; ++i) {
      CMapRM gi(g.ptr() + i * M * N, M, N);
      if (t.requires_grad(aid)) {
        MapRM(t.grad_accum(aid).ptr() + i * M * K, M, K).noalias() +=
            gi * CMapRM(t.value(bid).ptr() + i * K * N, K, N).transpose();
      }
      if (t.requires_grad(bid)) {
        MapRM(t.grad_accum(bid).ptr() + i * K * N, K, N).noalias() +=
            CMapRM(t.value(aid).ptr() + i * M * K, M, K).transpose() * gi;
      }
    }
  });
}

}  // namespace seqvo::ad
