#include "seqvo/optim.hpp"

#include <cmath>

#include "seqvo/errors.hpp"

namespace seqvo::optim {

namespace {

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

void check_aligned(const net::ParamStore& store, const GradList& grads) {
  if (grads.size() != store.size()) throw ShapeError("gradient list does not match the parameter store");
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (grads[i].is_allocated() && grads[i].shape() != store.value(i).shape()) {
      throw ShapeError("gradient shape mismatch for " + store.name(i));
    }
  }
}

}  // namespace

AdamState AdamState::zeros_like(const net::ParamStore& store) {
  AdamState s;
  for (std::size_t i = 0; i < store.size(); ++i) {
    s.m.push_back(Tensor::like(store.value(i)));
    s.v.push_back(Tensor::like(store.value(i)));
  }
  return s;
}

void check_finite(const net::ParamStore& store, const GradList& grads) {
  check_aligned(store, grads);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient for parameter " + store.name(i));
    }
  }
}

void adam_step(net::ParamStore& store, const GradList& grads, AdamState& state, double lr, double weight_decay,
               const AdamConfig& cfg) {
  check_finite(store, grads);
  if (state.m.size() != store.size()) throw ShapeError("Adam state does not match the parameter store");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!grads[i].is_allocated()) continue;
    Tensor& theta = store.value(i);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grads[i][j];
      double x = theta[j] - lr * weight_decay * theta[j];
      m[j] = to_float(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g);
      v[j] = to_float(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g);
      x -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
      theta[j] = to_float(x);
    }
  }
}

void sgd_step(net::ParamStore& store, const GradList& grads, double lr) {
  check_finite(store, grads);
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!grads[i].is_allocated()) continue;
    Tensor& theta = store.value(i);
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] = to_float(theta[j] - lr * grads[i][j]);
  }
}

double lr_at(std::uint64_t step, double lr0, std::uint64_t halve_every) {
  if (halve_every == 0) return lr0;
  return lr0 * std::ldexp(1.0, -static_cast<int>(step / halve_every));
}

}  // namespace seqvo::optim
