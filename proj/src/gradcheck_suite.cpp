#include "seqvo/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "seqvo/gradcheck.hpp"
#include "seqvo/losses.hpp"
#include "seqvo/ops.hpp"
#include "seqvo/pipeline.hpp"
#include "seqvo/pose_ops.hpp"
#include "seqvo/synth.hpp"
#include "seqvo/view_synthesis.hpp"

namespace seqvo::verify {

using ad::Tape;
using ad::Var;

std::optional<Scope> parse_scope(const std::string& text) {
  if (text == "ops") return Scope::kOps;
  if (text == "losses") return Scope::kLosses;
  if (text == "end2end") return Scope::kEnd2End;
  return std::nullopt;
}

namespace {

class Rand {
 public:
  explicit Rand(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  }
  Tensor tensor(Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (double& v : t.data()) v = uniform(lo, hi);
    return t;
  }
  // Values with |v| in [gap, 1], away from kinks at zero.
  Tensor away_from_zero(Shape s, double gap = 0.1) {
    Tensor t(std::move(s));
    for (double& v : t.data()) v = (uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0) * uniform(gap, 1.0);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

struct Runner {
  std::vector<CheckItem>& items;
  double threshold;

  void check(const std::string& name, const ad::ScalarFn& f, std::vector<Tensor> inputs,
             const ad::GradCheckOptions& opts = {}) {
    const auto r = ad::grad_check(f, inputs, opts);
    items.push_back({name, r.max_rel_error, threshold, r.coords_checked});
  }
};

// Contracts an arbitrary output against fixed random weights so that every
// output coordinate contributes with a distinct factor.
Var contract(Var y, std::uint64_t seed) {
  Rand r(seed);
  return ad::sum_all(y * y.tape().constant(r.tensor(y.shape())));
}

// x^2 with a backward rule that is off by a factor of two.
Var faulty_square(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= v;
  const ad::NodeId id = x.id();
  return x.tape().record(std::move(out), {x}, [id](Tape& t, ad::NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(id);
    Tensor& gx = t.grad_accum(id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * xv[i];
  });
}

void op_checks(std::vector<CheckItem>& items, const SuiteOptions& o) {
  Runner run{items, kOpThreshold};
  Rand r(o.seed);
  const std::uint64_t w = o.seed + 1000;
  using U = std::function<Var(Var)>;
  const std::vector<std::pair<std::string, U>> unary = {
      {"relu", [](Var x) { return ad::relu(x); }},
      {"sigmoid", [](Var x) { return ad::sigmoid(x); }},
      {"tanh", [](Var x) { return ad::tanh(x); }},
      {"exp", [](Var x) { return ad::exp(x); }},
      {"abs", [](Var x) { return ad::abs(x); }},
      {"neg", [](Var x) { return ad::neg(x); }},
      {"scale", [](Var x) { return ad::scale(x, -2.5); }},
      {"add_scalar", [](Var x) { return ad::add_scalar(x, 0.75); }},
      {"clamp", [](Var x) { return ad::clamp(x, -0.5, 0.5); }},
  };
  for (const auto& [name, f] : unary) {
    // Avoid the clamp bounds by keeping |x| away from 0.5 as well.
    Tensor x = r.away_from_zero({3, 4});
    if (name == "clamp") {
      for (double& v : x.data()) v = std::abs(std::abs(v) - 0.5) < 0.05 ? v * 0.5 : v;
    }
    run.check(name, [f = f, w](Tape&, std::span<const Var> in) { return contract(f(in[0]), w); }, {x});
  }
  run.check("log", [w](Tape&, std::span<const Var> in) { return contract(ad::log(in[0]), w); },
            {r.tensor({3, 4}, 0.2, 2.0)});
  run.check("pow_const", [w](Tape&, std::span<const Var> in) { return contract(ad::pow_const(in[0], -1.5), w); },
            {r.tensor({3, 4}, 0.2, 2.0)});

  using B = std::function<Var(Var, Var)>;
  const std::vector<std::pair<std::string, B>> binary = {
      {"add", [](Var a, Var b) { return a + b; }},
      {"sub", [](Var a, Var b) { return a - b; }},
      {"mul", [](Var a, Var b) { return a * b; }},
      {"div", [](Var a, Var b) { return a / b; }},
  };
  for (const auto& [name, f] : binary) {
    run.check(name, [f = f, w](Tape&, std::span<const Var> in) { return contract(f(in[0], in[1]), w); },
              {r.tensor({2, 3, 4}), r.away_from_zero({2, 3, 4}, 0.3)});
    run.check(name + "_broadcast", [f = f, w](Tape&, std::span<const Var> in) { return contract(f(in[0], in[1]), w); },
              {r.tensor({2, 3, 4}), r.away_from_zero({1, 3, 1}, 0.3)});
  }

  run.check("matmul", [w](Tape&, std::span<const Var> in) { return contract(ad::matmul(in[0], in[1]), w); },
            {r.tensor({4, 5}), r.tensor({5, 3})});
  run.check("batched_matmul",
            [w](Tape&, std::span<const Var> in) { return contract(ad::batched_matmul(in[0], in[1]), w); },
            {r.tensor({2, 3, 4}), r.tensor({2, 4, 2})});
  run.check("conv2d", [w](Tape&, std::span<const Var> in) { return contract(ad::conv2d(in[0], in[1], in[2], 1, 1), w); },
            {r.tensor({2, 3, 8, 8}), r.tensor({4, 3, 3, 3}), r.tensor({4})});
  run.check("conv2d_stride2",
            [w](Tape&, std::span<const Var> in) { return contract(ad::conv2d(in[0], in[1], std::nullopt, 2, 1), w); },
            {r.tensor({2, 3, 7, 9}), r.tensor({4, 3, 3, 3})});
  run.check("conv_transpose2d",
            [w](Tape&, std::span<const Var> in) {
              return contract(ad::conv_transpose2d(in[0], in[1], in[2], 2, 0), w);
            },
            {r.tensor({2, 4, 3, 5}), r.tensor({4, 3, 2, 2}), r.tensor({3})});
  run.check("sum_axes", [w](Tape&, std::span<const Var> in) { return contract(ad::sum(in[0], {0, 2}), w); },
            {r.tensor({2, 3, 4})});
  run.check("mean_keepdims", [w](Tape&, std::span<const Var> in) { return contract(ad::mean(in[0], {1}, true), w); },
            {r.tensor({2, 3, 4})});
  run.check("concat",
            [w](Tape&, std::span<const Var> in) { return contract(ad::concat({in[0], in[1]}, 1), w); },
            {r.tensor({2, 3}), r.tensor({2, 5})});
  run.check("global_avg_pool",
            [w](Tape&, std::span<const Var> in) { return contract(ad::global_avg_pool(in[0]), w); },
            {r.tensor({2, 3, 4, 5})});
  run.check("narrow", [w](Tape&, std::span<const Var> in) { return contract(ad::narrow(in[0], 2, 1, 2), w); },
            {r.tensor({2, 3, 4})});
  run.check("index_select",
            [w](Tape&, std::span<const Var> in) {
              const std::size_t idx[] = {2, 0, 2};
              return contract(ad::index_select(in[0], idx), w);
            },
            {r.tensor({3, 4})});
  run.check("expand_reshape",
            [w](Tape&, std::span<const Var> in) {
              return contract(ad::expand(ad::reshape(in[0], {2, 3, 1}), {2, 3, 4}), w);
            },
            {r.tensor({6})});
  run.check("box_filter", [w](Tape&, std::span<const Var> in) { return contract(ad::box_filter(in[0], 3), w); },
            {r.tensor({1, 2, 6, 7})});
  run.check("resize_bilinear",
            [w](Tape&, std::span<const Var> in) { return contract(ad::resize_bilinear(in[0], 7, 11), w); },
            {r.tensor({1, 2, 4, 5})});

  // Geometry: poses away from gimbal lock.
  Tensor poses({3, 6});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 6; ++j) poses[i * 6 + j] = r.uniform(-0.6, 0.6);
  }
  run.check("pose_to_matrix",
            [w](Tape&, std::span<const Var> in) { return contract(geometry::pose_to_matrix(in[0]), w); }, {poses});
  run.check("matrix_to_pose",
            [w](Tape&, std::span<const Var> in) {
              return contract(geometry::matrix_to_pose(geometry::pose_to_matrix(in[0])), w);
            },
            {poses});
  run.check("rigid_inverse",
            [w](Tape&, std::span<const Var> in) {
              return contract(geometry::rigid_inverse(geometry::pose_to_matrix(in[0])), w);
            },
            {poses});
  run.check("compose",
            [w](Tape&, std::span<const Var> in) {
              return contract(geometry::compose(geometry::pose_to_matrix(in[0]), geometry::pose_to_matrix(in[1])), w);
            },
            {poses, r.tensor({3, 6}, -0.6, 0.6)});

  // Correspondence with respect to depth and the transform.
  geometry::Intrinsics k{9.0, 8.0, 4.3, 3.1, 9, 7};
  Tensor depth = r.tensor({2, 1, 7, 9}, 2.0, 4.0);
  run.check("correspondence",
            [w, k](Tape&, std::span<const Var> in) {
              const geometry::Intrinsics ks[] = {k};
              return contract(view::correspondence(in[0], geometry::pose_to_matrix(in[1]), ks).coords, w);
            },
            {depth, r.tensor({2, 6}, -0.1, 0.1)});

  // Bilinear sampling of a smooth image at coordinates away from integers.
  Tensor image({1, 2, 8, 8});
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        image[(c * 8 + y) * 8 + x] = std::sin(0.7 * static_cast<double>(x) + 0.3 * static_cast<double>(c)) *
                                     std::cos(0.5 * static_cast<double>(y));
      }
    }
  }
  Tensor coords({1, 2, 5, 5});
  for (double& v : coords.data()) v = std::floor(r.uniform(0.0, 6.0)) + r.uniform(0.2, 0.8);
  run.check("bilinear_sample",
            [w](Tape&, std::span<const Var> in) { return contract(view::bilinear_sample(in[0], in[1]), w); },
            {image, coords});

  // LSTM gradient through 15 unrolled steps, from the first input.
  {
    net::NetworkConfig c;
    c.code_dim = 6;
    c.lstm_hidden = 5;
    auto params = net::init_params(c, o.seed);
    std::vector<Tensor> inputs;
    inputs.push_back(r.tensor({1, 6}));
    for (const char* n : {"lstm.wx", "lstm.wh", "lstm.b", "lstm.wp", "lstm.bp"}) inputs.push_back(params.at(n));
    inputs[3] = r.tensor(inputs[3].shape(), -0.2, 0.2);
    run.check("lstm_unroll15",
              [c, w](Tape& tape, std::span<const Var> in) {
                net::ParamStore store;
                const char* names[] = {"lstm.wx", "lstm.wh", "lstm.b", "lstm.wp", "lstm.bp"};
                std::vector<Var> vars;
                for (std::size_t i = 0; i < 5; ++i) {
                  store.add(names[i], in[i + 1].value());
                  vars.push_back(in[i + 1]);
                }
                net::Bound p(store, vars);
                auto state = net::lstm_zero_state(tape, c, 1);
                Var out = in[0];
                Var x = in[0];
                for (int t = 0; t < 15; ++t) {
                  auto step = net::lstm_step(p, c, x, state);
                  state = step.state;
                  out = step.code;
                  x = tape.constant(Tensor({1, 6}, 0.1 * t));
                }
                return contract(out, w);
              },
              inputs);
  }

  if (o.inject_fault) {
    run.check("fault_injection", [w](Tape&, std::span<const Var> in) { return contract(faulty_square(in[0]), w); },
              {r.away_from_zero({3, 3})});
  }
}

void loss_checks(std::vector<CheckItem>& items, const SuiteOptions& o) {
  Runner run{items, kLossThreshold};
  Rand r(o.seed + 7);
  const loss::LossWeights weights;
  const Tensor target = r.tensor({1, 3, 16, 16}, 0.1, 0.9);
  Tensor warped = target;
  for (double& v : warped.data()) v = std::clamp(v + r.away_from_zero({1})[0] * 0.2, 0.0, 1.0);
  Tensor valid({1, 1, 16, 16}, 1.0);
  for (std::size_t i = 0; i < 30; ++i) valid[i * 7] = 0.0;
  const Tensor mask = r.tensor({1, 1, 16, 16}, 0.2, 0.95);

  run.check("photometric_masked",
            [valid](Tape&, std::span<const Var> in) { return loss::photometric_masked(in[0], in[1], valid, in[2]); },
            {target, warped, mask});
  run.check("mask_regularization", [](Tape&, std::span<const Var> in) { return loss::mask_regularization(in[0]); },
            {mask});
  run.check("ssim_map", [w = o.seed](Tape&, std::span<const Var> in) { return contract(loss::ssim(in[0], in[1], 10), w); },
            {target, warped});
  run.check("appearance_loss",
            [valid, weights](Tape&, std::span<const Var> in) {
              return loss::appearance_loss(in[0], in[1], valid, in[2], weights).ap;
            },
            {target, warped, mask});
  // Neighbouring random pixels can sit within 1e-3 of each other, so the
  // |dI| kinks need a smaller step.
  ad::GradCheckOptions fine;
  fine.eps = 1e-6;
  run.check("smoothness", [](Tape&, std::span<const Var> in) { return loss::smoothness(in[0], in[1]); },
            {r.tensor({2, 1, 9, 11}, 1.0, 5.0), r.tensor({2, 3, 9, 11}, 0.0, 1.0)}, fine);

  // Trajectory consistency on a random 9-frame chain with noisy direct poses.
  {
    std::vector<Tensor> inputs;
    for (int k = 0; k < 8; ++k) inputs.push_back(r.tensor({2, 6}, -0.3, 0.3));
    for (std::size_t j = 0; j < loss::tc_pairs(9).size(); ++j) inputs.push_back(r.tensor({2, 6}, -0.5, 0.5));
    run.check("trajectory_consistency",
              [](Tape&, std::span<const Var> in) {
                return loss::trajectory_consistency(in.subspan(0, 8), in.subspan(8));
              },
              inputs);
  }

  const Tensor d_real = r.tensor({4, 1}, 0.1, 0.9), d_fake = r.tensor({4, 1}, 0.1, 0.9);
  run.check("gan_d_loss", [](Tape&, std::span<const Var> in) { return loss::gan_losses(in[0], in[1]).d_loss; },
            {d_real, d_fake});
  run.check("gan_g_loss", [](Tape&, std::span<const Var> in) { return loss::gan_losses(in[0], in[1]).g_loss; },
            {d_real, d_fake});
  run.check("weighted_total",
            [weights](Tape&, std::span<const Var> in) {
              return loss::weighted_total(in[0], in[1], in[2], in[3], weights);
            },
            {Tensor::scalar(0.7), Tensor::scalar(0.3), Tensor::scalar(1.1), Tensor::scalar(0.6)});

  // Masked photometric loss through view synthesis, with respect to the
  // pose, the depth and the source image, on a rendered synthetic pair.
  {
    synth::SceneOptions so;
    so.height = 16;
    so.width = 24;
    so.focal = 14.0;
    auto ds = synth::synth_scene(o.seed + 3, 2, synth::MotionSpec{}, so);
    const auto rel = data::network_poses(*ds.gt_poses);
    Tensor pose({1, 6});
    const auto a = rel[0].as_array();
    // Off the true motion so that no residual sits on the |.| kink.
    for (std::size_t j = 0; j < 6; ++j) pose[j] = a[j] + (j % 2 ? 0.01 : -0.01);
    const Tensor src = ds.frames[0].reshaped({1, 3, 16, 24});
    const Tensor tgt = ds.frames[1].reshaped({1, 3, 16, 24});
    const Tensor depth = (*ds.gt_depths)[1].reshaped({1, 1, 16, 24});
    const geometry::Intrinsics k = ds.intrinsics;
    const Tensor m = r.tensor({1, 1, 16, 24}, 0.3, 0.9);
    // One input at a time: a pose step moves every pixel, so it needs a much
    // smaller step than depth to stay inside the bilinear cells.
    const std::vector<Tensor> all = {pose, depth, src};
    const std::pair<const char*, double> parts[] = {{"photometric_through_warp_pose", 1e-8},
                                                    {"photometric_through_warp_depth", 1e-5},
                                                    {"photometric_through_warp_src", 1e-7}};
    for (std::size_t which = 0; which < 3; ++which) {
      ad::GradCheckOptions warp_opts;
      warp_opts.eps = parts[which].second;
      run.check(parts[which].first,
                [tgt, m, k, all, which](Tape& tape, std::span<const Var> in) {
                  Var v[3];
                  for (std::size_t j = 0; j < 3; ++j) v[j] = j == which ? in[0] : tape.constant(all[j]);
                  const geometry::Intrinsics ks[] = {k};
                  Var t = geometry::rigid_inverse(geometry::pose_to_matrix(v[0]));
                  auto warp = view::synthesize(v[2], v[1], t, ks);
                  return loss::photometric_masked(tape.constant(tgt), warp.image, warp.valid, tape.constant(m));
                },
                {all[which]}, warp_opts);
    }
  }
}

// Moves every bias and zero-initialized head off exact zeros so that no
// ReLU sits on its kink and no |p_direct - p_chain| is exactly zero.
void jitter(net::ParamStore& store, std::uint64_t seed) {
  Rand r(seed);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& n = store.name(i);
    const bool bias = n.ends_with(".bias") || n.ends_with(".b") || n.ends_with("bp");
    const bool pose_head = n.rfind("pose.rot", 0) == 0 || n.rfind("pose.trans", 0) == 0;
    if (!bias && !pose_head) continue;
    for (double& v : store.value(i).data()) v = r.uniform(-0.05, 0.05);
  }
}

void end_to_end(std::vector<CheckItem>& items, const std::string& name, const Config& cfg, std::size_t frames,
                std::uint64_t seed, std::size_t coords_per_input) {
  synth::SceneOptions so;
  so.height = cfg.network.input_h;
  so.width = cfg.network.input_w;
  so.focal = 60.0 * static_cast<double>(so.width) / 104.0;
  const auto ds = synth::synth_scene(seed, frames, synth::MotionSpec{}, so);
  const auto batch = pipeline::stack({data::make_snippet(ds, 0, frames)}, cfg.network);
  auto params = net::init_params(cfg.network, seed);
  jitter(params, seed + 1);
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params.value(i));
  ad::GradCheckOptions opts;
  // Pose parameters move every warped pixel, so some steps straddle a
  // bilinear cell edge or an |r| kink; those get a second, smaller step.
  opts.eps = 1e-5;
  opts.fallback_eps = {1e-7};
  opts.max_coords_per_input = coords_per_input;
  opts.seed = seed;
  Runner run{items, kEnd2EndThreshold};
  run.check(name,
            [&params, &cfg, &batch](Tape&, std::span<const Var> in) {
              net::Bound p(params, in);
              return pipeline::generator_forward(p, cfg, batch).total;
            },
            inputs, opts);
}

}  // namespace

std::vector<CheckItem> run_suite(Scope scope, const SuiteOptions& o) {
  std::vector<CheckItem> items;
  switch (scope) {
    case Scope::kOps:
      op_checks(items, o);
      break;
    case Scope::kLosses:
      loss_checks(items, o);
      break;
    case Scope::kEnd2End: {
      // Two frames at desk scale: every term except trajectory consistency.
      Config desk = Config::desk();
      desk.weights.lambda_t = 0.0;
      desk.train.snippet_len = 2;
      end_to_end(items, "total_2frame_desk", desk, 2, o.seed, 2);
      // Nine frames on a tiny network: the full weighted total.
      Config tiny = Config::desk();
      tiny.network.input_h = 16;
      tiny.network.input_w = 48;
      tiny.network.base_channels = 4;
      tiny.network.code_dim = 16;
      tiny.network.lstm_hidden = 16;
      end_to_end(items, "total_9frame_tiny", tiny, 9, o.seed + 11, 2);
      break;
    }
  }
  return items;
}

}  // namespace seqvo::verify
