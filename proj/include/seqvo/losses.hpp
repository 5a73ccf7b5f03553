#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "seqvo/autodiff.hpp"

namespace seqvo::loss {

struct LossWeights {
  double lambda_a = 0.75;
  double lambda_s = 0.1;
  double lambda_t = 0.14;
  double lambda_g = 0.01;
  double alpha = 0.85;
  int ssim_window = 10;

  void validate() const;
};

struct LossReport {
  double pho = 0.0, reg = 0.0, ssim = 0.0, ap = 0.0;
  double smo = 0.0, tc = 0.0, g_adv = 0.0, d_adv = 0.0;
  double total = 0.0;
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPhotometricEps = 1e-8;
// Probabilities are clamped to [kProbEps, 1 - kProbEps] before the log.
inline constexpr double kProbEps = 1e-6;
inline constexpr std::array<std::size_t, 3> kTcSpans = {2, 4, 8};

// Images B x C x H x W, valid B x 1 x H x W in {0,1}, mask B x 1 x H x W.
// sum(M * valid * sum_c |warped - target|) / (sum(M * valid) + 1e-8)
ad::Var photometric_masked(ad::Var target, ad::Var warped, const Tensor& valid, ad::Var mask);

// -mean(log(M + 1e-12))
ad::Var mask_regularization(ad::Var mask);

// Per-channel SSIM map over window x window uniform windows, stride 1, no
// padding: B x C x (H - window + 1) x (W - window + 1).
ad::Var ssim(ad::Var a, ad::Var b, int window);

struct AppearanceTerms {
  ad::Var pho;
  ad::Var reg;
  ad::Var ssim;  // mean((1 - SSIM) / 2)
  ad::Var ap;    // reg + (1 - alpha) pho + alpha ssim
};

AppearanceTerms appearance_loss(ad::Var target, ad::Var warped, const Tensor& valid, ad::Var mask,
                                const LossWeights& weights);

// Edge-aware smoothness of depth B x 1 x H x W against image B x C x H x W.
// Depth is divided by its per-sample mean first.
ad::Var smoothness(ad::Var depth, ad::Var image);

// Window start i and span t of one direct pose for the consistency loss.
struct SpanPair {
  std::size_t start;
  std::size_t span;
};

// Windows start at 0 .. frames - 9; each contributes spans {2, 4, 8}.
// Throws ShapeError when frames < 9.
std::vector<SpanPair> tc_pairs(std::size_t frames);

// one_step[k] holds B x 6 poses for the pair (k, k+1); direct[j] holds the
// B x 6 pose for tc_pairs(one_step.size() + 1)[j]. All poses map the
// earlier frame into the later one. Returns
// (1 / N) sum_windows sum_spans mean_batch |p_direct - p_chain|_1.
ad::Var trajectory_consistency(std::span<const ad::Var> one_step, std::span<const ad::Var> direct);

struct GanTerms {
  ad::Var d_loss;  // -mean(log D(real) + log(1 - D(fake)))
  ad::Var g_loss;  // -mean(log D(fake))
};

GanTerms gan_losses(ad::Var d_real, ad::Var d_fake);

// lambda_a ap + lambda_s smo + lambda_t tc + lambda_g g_adv. Terms with zero
// weight or without a value are left out of the graph.
ad::Var weighted_total(ad::Var ap, ad::Var smo, std::optional<ad::Var> tc, std::optional<ad::Var> g_adv,
                       const LossWeights& weights);

// Plain-number form of the weighted sum; fills report.total.
LossReport total_loss(LossReport components, const LossWeights& weights);

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, std::size_t step, const LossReport& report);

}  // namespace seqvo::loss
