#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seqvo/networks.hpp"

namespace seqvo::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam moments for every parameter of a store (same order and shapes);
// entries for parameters the optimizer never touches stay zero.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const net::ParamStore& store);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Gradients aligned with the store; an unallocated tensor means "no update".
using GradList = std::vector<Tensor>;

// Throws NumericalError naming the parameter when any gradient is not finite.
// Nothing is modified in that case.
void check_finite(const net::ParamStore& store, const GradList& grads);

// Bias-corrected Adam with decoupled weight decay applied first:
//   theta <- theta - lr wd theta;  m, v updates;  theta <- theta - lr mhat / (sqrt(vhat) + eps)
// Parameters without a gradient are untouched. Results are rounded to float.
void adam_step(net::ParamStore& store, const GradList& grads, AdamState& state, double lr, double weight_decay,
               const AdamConfig& config = {});

// theta <- theta - lr g, rounded to float.
void sgd_step(net::ParamStore& store, const GradList& grads, double lr);

// lr0 * 0.5^floor(step / halve_every)
double lr_at(std::uint64_t step, double lr0, std::uint64_t halve_every);

}  // namespace seqvo::optim
