#include "seqvo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seqvo/errors.hpp"

namespace seqvo::ad {
namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape(Precision::kFloat64);
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, false));
  return f(tape, leaves).value().item();
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor> grads;
  {
    Tape tape(Precision::kFloat64);
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var out = f(tape, leaves);
    if (out.value().size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
    tape.backward(out);
    for (const Var& v : leaves) grads.push_back(v.grad());
  }

  GradCheckResult result;
  std::vector<Tensor> work(inputs.begin(), inputs.end());
  std::mt19937_64 rng(options.seed);
  for (std::size_t k = 0; k < work.size(); ++k) {
    std::vector<std::size_t> coords(work[k].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double x0 = work[k][i];
      const double analytic = grads[k][i];
      double numeric = 0.0, err = 0.0;
      for (std::size_t s = 0; s <= options.fallback_eps.size(); ++s) {
        const double eps = s == 0 ? options.eps : options.fallback_eps[s - 1];
        const double h = options.scale_eps ? eps * std::max(1.0, std::abs(x0)) : eps;
        work[k][i] = x0 + h;
        const double fp = evaluate(f, work);
        work[k][i] = x0 - h;
        const double fm = evaluate(f, work);
        work[k][i] = x0;
        const double n = (fp - fm) / (2.0 * h);
        const double e = relative_error(analytic, n);
        if (s == 0 || e < err) {
          numeric = n;
          err = e;
        }
      }
      ++result.coords_checked;
      if (result.coords_checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace seqvo::ad
