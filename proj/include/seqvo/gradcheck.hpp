#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "seqvo/autodiff.hpp"

namespace seqvo::ad {

// Builds a scalar from leaf variables created for `inputs` on `tape`.
using ScalarFn = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct GradCheckOptions {
  double eps = 1e-3;
  // Perturbation for coordinate i is eps * max(1, |x_i|).
  bool scale_eps = true;
  // 0 checks every coordinate; otherwise at most this many per input,
  // chosen with `seed`.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  // Further step sizes tried per coordinate; the smallest error counts. A
  // step that straddles a kink of a piecewise-smooth function is then
  // retried instead of reported.
  std::vector<double> fallback_eps;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
double relative_error(double analytic, double numeric);

// Compares tape gradients against central differences, evaluating f on
// fresh 64-bit tapes.
GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace seqvo::ad
