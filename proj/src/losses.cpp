#include "seqvo/losses.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "seqvo/errors.hpp"
#include "seqvo/ops.hpp"
#include "seqvo/pose_ops.hpp"

namespace seqvo::loss {

using ad::Var;

void LossWeights::validate() const {
  for (double w : {lambda_a, lambda_s, lambda_t, lambda_g}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and nonnegative");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (ssim_window < 1) throw ConfigError("ssim_window must be positive");
}

namespace {

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

Var photometric_masked(Var target, Var warped, const Tensor& valid, Var mask) {
  require_same(target.shape(), warped.shape(), "photometric_masked");
  const Shape& s = target.shape();
  const Shape mask_shape{s.at(0), 1, s.at(2), s.at(3)};
  require_same(mask.shape(), mask_shape, "photometric_masked mask");
  require_same(valid.shape(), mask_shape, "photometric_masked valid");
  Var err = ad::sum(ad::abs(warped - target), {1}, true);
  Var w = mask * target.tape().constant(valid);
  return ad::sum_all(w * err) / ad::add_scalar(ad::sum_all(w), kPhotometricEps);
}

Var mask_regularization(Var mask) { return ad::neg(ad::mean_all(ad::log(ad::add_scalar(mask, 1e-12)))); }

Var ssim(Var a, Var b, int window) {
  require_same(a.shape(), b.shape(), "ssim");
  Var mu_a = ad::box_filter(a, window);
  Var mu_b = ad::box_filter(b, window);
  Var mu_aa = mu_a * mu_a;
  Var mu_bb = mu_b * mu_b;
  Var mu_ab = mu_a * mu_b;
  Var var_a = ad::box_filter(a * a, window) - mu_aa;
  Var var_b = ad::box_filter(b * b, window) - mu_bb;
  Var cov = ad::box_filter(a * b, window) - mu_ab;
  Var num = ad::add_scalar(ad::scale(mu_ab, 2.0), kSsimC1) * ad::add_scalar(ad::scale(cov, 2.0), kSsimC2);
  Var den = ad::add_scalar(mu_aa + mu_bb, kSsimC1) * ad::add_scalar(var_a + var_b, kSsimC2);
  return num / den;
}

AppearanceTerms appearance_loss(Var target, Var warped, const Tensor& valid, Var mask, const LossWeights& weights) {
  AppearanceTerms t;
  t.pho = photometric_masked(target, warped, valid, mask);
  t.reg = mask_regularization(mask);
  Var s = ssim(warped, target, weights.ssim_window);
  t.ssim = ad::scale(ad::mean_all(ad::add_scalar(ad::neg(s), 1.0)), 0.5);
  t.ap = t.reg + ad::scale(t.pho, 1.0 - weights.alpha) + ad::scale(t.ssim, weights.alpha);
  return t;
}

Var smoothness(Var depth, Var image) {
  const Shape& d = depth.shape();
  const Shape& im = image.shape();
  if (d.size() != 4 || d[1] != 1 || im.size() != 4 || im[0] != d[0] || im[2] != d[2] || im[3] != d[3]) {
    throw ShapeError("smoothness: depth " + to_string(d) + " and image " + to_string(im) + " are incompatible");
  }
  const std::size_t H = d[2], W = d[3];
  Var norm = depth / ad::mean(depth, {1, 2, 3}, true);
  auto term = [&](int axis, std::size_t n) {
    Var dd = ad::narrow(norm, axis, 1, n - 1) - ad::narrow(norm, axis, 0, n - 1);
    Var di = ad::sum(ad::abs(ad::narrow(image, axis, 1, n - 1) - ad::narrow(image, axis, 0, n - 1)), {1}, true);
    return ad::mean_all(ad::abs(dd) * ad::exp(ad::neg(di)));
  };
  std::optional<Var> total;
  if (W > 1) total = term(3, W);
  if (H > 1) total = total ? *total + term(2, H) : term(2, H);
  return total ? *total : depth.tape().constant(Tensor::scalar(0.0));
}

std::vector<SpanPair> tc_pairs(std::size_t frames) {
  const std::size_t longest = kTcSpans.back();
  if (frames < longest + 1) {
    throw ShapeError("trajectory consistency needs at least " + std::to_string(longest + 1) + " frames, got " +
                     std::to_string(frames));
  }
  std::vector<SpanPair> pairs;
  for (std::size_t i = 0; i + longest < frames; ++i) {
    for (std::size_t t : kTcSpans) pairs.push_back({i, t});
  }
  return pairs;
}

Var trajectory_consistency(std::span<const Var> one_step, std::span<const Var> direct) {
  const auto pairs = tc_pairs(one_step.size() + 1);
  if (direct.size() != pairs.size()) {
    throw ShapeError("trajectory_consistency: expected " + std::to_string(pairs.size()) + " direct poses, got " +
                     std::to_string(direct.size()));
  }
  std::vector<Var> mats;
  mats.reserve(one_step.size());
  for (const Var& p : one_step) mats.push_back(geometry::pose_to_matrix(p));
  const double batch = static_cast<double>(one_step.front().shape().at(0));
  const double windows = static_cast<double>(pairs.size() / kTcSpans.size());
  std::optional<Var> acc;
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const auto [i, t] = pairs[j];
    Var chain = mats[i];
    for (std::size_t k = i + 1; k < i + t; ++k) chain = geometry::compose(mats[k], chain);
    Var diff = ad::sum_all(ad::abs(direct[j] - geometry::matrix_to_pose(chain)));
    acc = acc ? *acc + diff : diff;
  }
  return ad::scale(*acc, 1.0 / (batch * windows));
}

GanTerms gan_losses(Var d_real, Var d_fake) {
  Var real = ad::clamp(d_real, kProbEps, 1.0 - kProbEps);
  Var fake = ad::clamp(d_fake, kProbEps, 1.0 - kProbEps);
  Var one_minus_fake = ad::add_scalar(ad::neg(fake), 1.0);
  GanTerms g;
  g.d_loss = ad::neg(ad::mean_all(ad::log(real) + ad::log(one_minus_fake)));
  g.g_loss = ad::neg(ad::mean_all(ad::log(fake)));
  return g;
}

Var weighted_total(Var ap, Var smo, std::optional<Var> tc, std::optional<Var> g_adv, const LossWeights& weights) {
  std::optional<Var> total;
  auto add = [&](std::optional<Var> term, double w) {
    if (!term || w == 0.0) return;
    Var scaled = ad::scale(*term, w);
    total = total ? *total + scaled : scaled;
  };
  add(ap, weights.lambda_a);
  add(smo, weights.lambda_s);
  add(tc, weights.lambda_t);
  add(g_adv, weights.lambda_g);
  return total ? *total : ap.tape().constant(Tensor::scalar(0.0));
}

LossReport total_loss(LossReport r, const LossWeights& w) {
  r.total = w.lambda_a * r.ap + w.lambda_s * r.smo + w.lambda_t * r.tc + w.lambda_g * r.g_adv;
  return r;
}

void write_csv_header(std::ostream& out) { out << "step,pho,reg,ssim,ap,smo,tc,g_adv,d_adv,total\n"; }

void write_csv_row(std::ostream& out, std::size_t step, const LossReport& r) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(9) << step << ',' << r.pho << ',' << r.reg << ',' << r.ssim << ',' << r.ap << ','
      << r.smo << ',' << r.tc << ',' << r.g_adv << ',' << r.d_adv << ',' << r.total << '\n';
  out.flags(flags);
  out.precision(prec);
}

}  // namespace seqvo::loss
