#include "seqvo/pipeline.hpp"

#include <cmath>

#include "seqvo/errors.hpp"
#include "seqvo/ops.hpp"
#include "seqvo/pose_ops.hpp"
#include "seqvo/view_synthesis.hpp"

namespace seqvo::pipeline {

using ad::Var;

BatchTensors stack(const std::vector<data::Snippet>& batch, const net::NetworkConfig& c) {
  if (batch.empty()) throw ShapeError("empty batch");
  const std::size_t B = batch.size(), L = batch[0].length(), H = c.input_h, W = c.input_w;
  BatchTensors out{B, L, Tensor({L * B, 3, H, W}), Tensor({L * B, 2, H, W}), {}};
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = batch[b];
    if (s.length() != L || s.flows.size() != L) throw ShapeError("snippets in a batch must share one length");
    if (s.intrinsics.width != W || s.intrinsics.height != H) {
      throw ShapeError("snippet intrinsics do not match the network input size");
    }
    out.intrinsics.push_back(s.intrinsics);
    for (std::size_t t = 0; t < L; ++t) {
      const Tensor& img = s.images[t];
      if (img.shape() != Shape{3, H, W}) {
        throw ShapeError("snippet image " + to_string(img.shape()) + " does not match the network input " +
                         std::to_string(H) + " x " + std::to_string(W));
      }
      std::copy(img.data().begin(), img.data().end(), out.images.ptr() + (t * B + b) * 3 * H * W);
      const FlowField& f = s.flows[t];
      if (f.height() != H || f.width() != W) throw ShapeError("snippet flow does not match the network input size");
      const Tensor chw = f.to_chw();
      std::copy(chw.data().begin(), chw.data().end(), out.flows.ptr() + (t * B + b) * 2 * H * W);
    }
  }
  return out;
}

namespace {

// Refined codes for every frame, L B x code_dim.
Var codes(const net::Bound& p, const Config& cfg, ad::Tape& tape, const BatchTensors& bt) {
  const auto& nc = cfg.network;
  const std::size_t B = bt.batch, L = bt.length;
  if (!cfg.train.use_code) return tape.constant(Tensor({L * B, nc.code_dim}));
  Var raw = net::flow_encoder(p, nc, tape.constant(bt.flows));
  if (!cfg.train.use_lstm) return raw;
  net::LstmState state = net::lstm_zero_state(tape, nc, B);
  std::vector<Var> refined;
  for (std::size_t t = 0; t < L; ++t) {
    auto out = net::lstm_step(p, nc, ad::narrow(raw, 0, t * B, B), state);
    refined.push_back(out.code);
    state = out.state;
  }
  return ad::concat(refined, 0);
}

std::vector<geometry::Intrinsics> pair_intrinsics(const BatchTensors& bt) {
  std::vector<geometry::Intrinsics> k;
  for (std::size_t t = 1; t < bt.length; ++t) k.insert(k.end(), bt.intrinsics.begin(), bt.intrinsics.end());
  return k;
}

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite loss term: ") + term);
}

}  // namespace

GeneratorOutput generator_forward(const net::Bound& p, const Config& cfg, const BatchTensors& bt) {
  ad::Tape& tape = p.tape();
  const auto& nc = cfg.network;
  const auto& w = cfg.weights;
  const std::size_t B = bt.batch, L = bt.length, H = nc.input_h, W = nc.input_w;
  if (L < 2) throw ShapeError("snippets need at least 2 frames");
  const std::size_t P = (L - 1) * B;
  const bool use_tc = w.lambda_t > 0.0;
  if (use_tc && L < loss::kTcSpans.back() + 1) throw ShapeError("trajectory consistency needs 9-frame snippets");

  Var images = tape.constant(bt.images);
  GeneratorOutput out;
  out.depths = net::depthnet(p, nc, images, codes(p, cfg, tape, bt));
  const std::size_t S = out.depths.size();

  Var rgbd = net::make_rgbd(images, out.depths.back());
  auto pm = net::posemask(p, nc, ad::narrow(rgbd, 0, 0, P), ad::narrow(rgbd, 0, B, P));
  out.pose = pm.pose;
  Var target_to_source = geometry::rigid_inverse(geometry::pose_to_matrix(pm.pose));
  Var sources = ad::narrow(images, 0, 0, P);
  Var targets = ad::narrow(images, 0, B, P);
  const auto ks = pair_intrinsics(bt);

  // Appearance terms at full resolution for every scale, averaged.
  std::optional<Var> pho, reg, ssim, ap, smo, finest;
  auto accumulate = [](std::optional<Var>& acc, Var v) { acc = acc ? *acc + v : v; };
  for (std::size_t s = 0; s < S; ++s) {
    Var depth = ad::resize_bilinear(ad::narrow(out.depths[s], 0, B, P), H, W);
    Var mask = ad::resize_bilinear(pm.masks[s], H, W);
    auto warp = view::synthesize(sources, depth, target_to_source, ks);
    auto terms = loss::appearance_loss(targets, warp.image, warp.valid, mask, w);
    accumulate(pho, terms.pho);
    accumulate(reg, terms.reg);
    accumulate(ssim, terms.ssim);
    accumulate(ap, terms.ap);
    if (s + 1 == S) finest = warp.image;

    const Shape& ds = out.depths[s].shape();
    Var scaled_images = tape.constant(ad::resize_bilinear(bt.images, ds[2], ds[3]));
    accumulate(smo, loss::smoothness(out.depths[s], scaled_images));
  }
  const double inv_s = 1.0 / static_cast<double>(S);
  Var ap_mean = ad::scale(*ap, inv_s);
  Var smo_mean = ad::scale(*smo, inv_s);
  out.target = targets.value();
  out.fake = finest->value();

  std::optional<Var> tc;
  if (use_tc) {
    const auto pairs = loss::tc_pairs(L);
    std::vector<std::size_t> ia, ib;
    for (const auto& [i, t] : pairs) {
      for (std::size_t b = 0; b < B; ++b) {
        ia.push_back(i * B + b);
        ib.push_back((i + t) * B + b);
      }
    }
    auto direct = net::posemask(p, nc, ad::index_select(rgbd, ia), ad::index_select(rgbd, ib), false).pose;
    std::vector<Var> one_step, spans;
    for (std::size_t k = 0; k + 1 < L; ++k) one_step.push_back(ad::narrow(pm.pose, 0, k * B, B));
    for (std::size_t j = 0; j < pairs.size(); ++j) spans.push_back(ad::narrow(direct, 0, j * B, B));
    tc = loss::trajectory_consistency(one_step, spans);
  }

  std::optional<Var> g_adv;
  if (w.lambda_g > 0.0) {
    // The finest-scale synthesized targets stay attached to the generator.
    Var d_fake = net::discriminator(p, nc, *finest, targets);
    g_adv = loss::gan_losses(d_fake, d_fake).g_loss;
  }

  out.total = loss::weighted_total(ap_mean, smo_mean, tc, g_adv, w);
  auto& r = out.report;
  r.pho = pho->value().item() * inv_s;
  r.reg = reg->value().item() * inv_s;
  r.ssim = ssim->value().item() * inv_s;
  r.ap = ap_mean.value().item();
  r.smo = smo_mean.value().item();
  r.tc = tc ? tc->value().item() : 0.0;
  r.g_adv = g_adv ? g_adv->value().item() : 0.0;
  r.total = out.total.value().item();
  require_finite(r.pho, "pho");
  require_finite(r.reg, "reg");
  require_finite(r.ssim, "ssim");
  require_finite(r.smo, "smo");
  require_finite(r.tc, "tc");
  require_finite(r.g_adv, "g_adv");
  require_finite(r.total, "total");
  return out;
}

namespace {

struct DiscPass {
  Var loss;
  Var real;
  Var fake;
};

DiscPass disc_pass(const net::Bound& p, const Config& cfg, const Tensor& target, const Tensor& fake) {
  ad::Tape& tape = p.tape();
  Var cond = tape.constant(target);
  Var d_real = net::discriminator(p, cfg.network, cond, cond);
  Var d_fake = net::discriminator(p, cfg.network, tape.constant(fake), cond);
  return {loss::gan_losses(d_real, d_fake).d_loss, d_real, d_fake};
}

}  // namespace

double discriminator_step(net::ParamStore& params, const Config& cfg, const Tensor& target, const Tensor& fake) {
  ad::Tape tape(ad::Precision::kFloat32);
  net::Bound p(tape, params, net::is_discriminator_param);
  auto pass = disc_pass(p, cfg, target, fake);
  const double value = pass.loss.value().item();
  require_finite(value, "d_adv");
  tape.backward(pass.loss);
  optim::GradList grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (net::is_discriminator_param(params.name(i))) grads[i] = tape.grad(p[params.name(i)].id());
  }
  optim::sgd_step(params, grads, cfg.train.d_lr);
  return value;
}

DiscriminatorScores discriminator_scores(const net::ParamStore& params, const Config& cfg, const Tensor& target,
                                         const Tensor& fake) {
  ad::Tape tape(ad::Precision::kFloat32);
  net::Bound p(tape, params, [](const std::string&) { return false; });
  auto pass = disc_pass(p, cfg, target, fake);
  return {pass.loss.value().item(), ad::mean_all(pass.real).value().item(), ad::mean_all(pass.fake).value().item()};
}

SnippetPrediction predict_snippet(const net::ParamStore& params, const Config& cfg, const data::Snippet& snippet) {
  ad::Tape tape(ad::Precision::kFloat32);
  net::Bound p(tape, params, [](const std::string&) { return false; });
  const BatchTensors bt = stack({snippet}, cfg.network);
  const std::size_t L = bt.length, H = cfg.network.input_h, W = cfg.network.input_w;
  Var images = tape.constant(bt.images);
  auto depths = net::depthnet(p, cfg.network, images, codes(p, cfg, tape, bt));
  SnippetPrediction out;
  const Tensor& fine = depths.back().value();
  for (std::size_t t = 0; t < L; ++t) {
    Tensor d({H, W});
    std::copy(fine.ptr() + t * H * W, fine.ptr() + (t + 1) * H * W, d.ptr());
    out.depths.push_back(std::move(d));
  }
  if (L >= 2) {
    Var rgbd = net::make_rgbd(images, depths.back());
    const Tensor pose = net::posemask(p, cfg.network, ad::narrow(rgbd, 0, 0, L - 1), ad::narrow(rgbd, 0, 1, L - 1), false)
                            .pose.value();
    for (std::size_t t = 0; t + 1 < L; ++t) {
      std::array<double, 6> a{};
      for (std::size_t j = 0; j < 6; ++j) a[j] = pose[t * 6 + j];
      out.poses.push_back(geometry::Pose6::from_array(a));
    }
  }
  return out;
}

SnippetPrediction predict_sequence(const net::ParamStore& params, const Config& cfg,
                                   const data::SequenceDataset& dataset) {
  const auto ds = data::resized(dataset, cfg.network.input_h, cfg.network.input_w);
  const std::size_t N = ds.size();
  const std::size_t L = std::max<std::size_t>(2, cfg.train.snippet_len);
  SnippetPrediction out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t len = std::min(L, N - start);
    auto part = predict_snippet(params, cfg, data::make_snippet(ds, start, len));
    const std::size_t skip = start == 0 ? 0 : 1;
    out.depths.insert(out.depths.end(), part.depths.begin() + static_cast<std::ptrdiff_t>(skip), part.depths.end());
    out.poses.insert(out.poses.end(), part.poses.begin(), part.poses.end());
    if (start + len >= N) break;
    start += len - 1;
  }
  return out;
}

}  // namespace seqvo::pipeline
