// seqvo command-line front end.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "seqvo/checkpoint.hpp"
#include "seqvo/errors.hpp"
#include "seqvo/eval.hpp"
#include "seqvo/gradcheck_suite.hpp"
#include "seqvo/image_io.hpp"
#include "seqvo/pipeline.hpp"
#include "seqvo/plot.hpp"
#include "seqvo/synth.hpp"
#include "seqvo/train.hpp"

namespace fs = std::filesystem;
using namespace seqvo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitNumerical = 2;

std::vector<std::string> sequence_ids(const fs::path& root) {
  const fs::path dir = root / "sequences";
  if (!fs::is_directory(dir)) throw IoError("missing data directory " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw IoError("no sequences under " + dir.string());
  return ids;
}

std::vector<geometry::Pose6> load_relative(const fs::path& path) {
  std::vector<geometry::Pose6> rel;
  for (const auto& t : data::load_poses(path)) rel.push_back(geometry::transform_to_pose(t));
  return rel;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

struct SynthArgs {
  std::uint64_t seed = 7;
  std::size_t frames = 30;
  std::string motion = "default";
  fs::path out;
  std::size_t height = 32, width = 104;
  double focal = 60.0;
  bool no_flow = false;
};

int cmd_synth(const SynthArgs& a) {
  synth::SceneOptions o;
  o.height = a.height;
  o.width = a.width;
  o.focal = a.focal;
  const auto ds = synth::synth_scene(a.seed, a.frames, synth::MotionSpec::parse(a.motion), o);
  data::write_sequence(a.out, ds, !a.no_flow);
  std::cout << "wrote sequence " << ds.id << " (" << ds.size() << " frames) to " << a.out.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  fs::path config, data, out, resume;
  std::vector<std::string> seqs;
  std::uint64_t steps = 0;
  std::size_t print_every = 10;
};

int cmd_train(const TrainArgs& a) {
  Config cfg = a.config.empty() ? Config::desk() : load_config(a.config);
  train::TrainState state;
  if (!a.resume.empty()) {
    auto ck = load_checkpoint(a.resume);
    if (!a.config.empty() && !(ck.config == cfg)) throw ConfigError("--config differs from the checkpoint's config");
    cfg = ck.config;
    state = train::from_checkpoint(std::move(ck));
  } else {
    state = train::init_state(cfg);
  }
  const auto ids = a.seqs.empty() ? sequence_ids(a.data) : a.seqs;
  std::vector<data::SequenceDataset> datasets;
  for (const auto& id : ids) datasets.push_back(data::load_sequence(a.data, id));
  train::RunOptions opts;
  opts.out_dir = a.out;
  opts.until_step = a.steps;
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_step = [&](std::uint64_t step, const loss::LossReport& r) {
    if (a.print_every && step % a.print_every == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "step " << step << " total " << fmt(r.total) << " ap " << fmt(r.ap) << " tc " << fmt(r.tc)
                << " d_adv " << fmt(r.d_adv) << " (" << fmt(secs) << " s)\n"
                << std::flush;
    }
  };
  state = train::run(cfg, datasets, std::move(state), opts);
  std::cout << "finished at step " << state.step << "; checkpoint " << (a.out / train::kLastCheckpoint).string()
            << "\n";
  return kExitOk;
}

struct InferArgs {
  fs::path ckpt, data, out;
  std::string seq;
  bool oracle = false;
};

int cmd_infer(const InferArgs& a) {
  const auto ds = data::load_sequence(a.data, a.seq);
  std::vector<Tensor> depths;
  std::vector<geometry::Pose6> rel;
  if (a.oracle) {
    if (!ds.gt_poses || !ds.gt_depths) throw IoError("--oracle needs ground-truth poses and depths for " + a.seq);
    depths = *ds.gt_depths;
    rel = data::network_poses(*ds.gt_poses);
  } else {
    const auto ck = load_checkpoint(a.ckpt);
    const auto& nc = ck.config.network;
    const double ry = static_cast<double>(nc.input_h) / static_cast<double>(ds.height());
    const double rx = static_cast<double>(nc.input_w) / static_cast<double>(ds.width());
    if (std::abs(ry / rx - 1.0) > 0.05) {
      throw ConfigError("checkpoint input " + std::to_string(nc.input_h) + "x" + std::to_string(nc.input_w) +
                        " does not match the aspect ratio of " + std::to_string(ds.height()) + "x" +
                        std::to_string(ds.width()) + " images");
    }
    auto pred = pipeline::predict_sequence(ck.params, ck.config, ds);
    depths = std::move(pred.depths);
    rel = std::move(pred.poses);
  }
  fs::create_directories(a.out / "depth");
  for (std::size_t i = 0; i < depths.size(); ++i) {
    io::write_depth_pgm(a.out / "depth" / (data::frame_name(i) + ".pgm"), depths[i]);
  }
  std::vector<geometry::Transform> lines;
  for (const auto& p : rel) lines.push_back(geometry::pose_to_transform(p));
  data::write_poses(a.out / "poses.txt", lines);
  std::cout << "wrote " << depths.size() << " depth maps and " << lines.size() << " relative poses to "
            << a.out.string() << "\n";
  return kExitOk;
}

struct EvalDepthArgs {
  fs::path pred, data, per_frame;
  std::string seq, crop;
  double cap = 80.0;
  bool no_median = false;
  bool header = false;
};

int cmd_eval_depth(const EvalDepthArgs& a) {
  const auto ds = data::load_sequence(a.data, a.seq);
  if (!ds.gt_depths) throw IoError("sequence " + a.seq + " has no ground-truth depth");
  std::optional<eval::Crop> crop;
  if (!a.crop.empty()) {
    eval::Crop c{};
    char sep = 0;
    std::istringstream in(a.crop);
    if (!(in >> c.row0 >> sep >> c.row1 >> sep >> c.col0 >> sep >> c.col1)) {
      throw ParseError("--crop expects row0,row1,col0,col1");
    }
    crop = c;
  }
  std::ofstream per_frame;
  if (!a.per_frame.empty()) {
    per_frame.open(a.per_frame);
    if (!per_frame) throw IoError("cannot write " + a.per_frame.string());
    per_frame << "frame,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3\n";
  }
  eval::DepthMetrics mean;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto path = a.pred / "depth" / (data::frame_name(i) + ".pgm");
    if (!fs::exists(path)) throw IoError("missing predicted depth " + path.string());
    const auto m = eval::depth_metrics(io::read_depth_pgm(path), (*ds.gt_depths)[i], a.cap, !a.no_median, crop);
    if (per_frame.is_open()) {
      per_frame << i << ',' << fmt(m.abs_rel) << ',' << fmt(m.sq_rel) << ',' << fmt(m.rmse) << ',' << fmt(m.rmse_log)
                << ',' << fmt(m.delta1) << ',' << fmt(m.delta2) << ',' << fmt(m.delta3) << '\n';
    }
    mean.abs_rel += m.abs_rel;
    mean.sq_rel += m.sq_rel;
    mean.rmse += m.rmse;
    mean.rmse_log += m.rmse_log;
    mean.delta1 += m.delta1;
    mean.delta2 += m.delta2;
    mean.delta3 += m.delta3;
    ++n;
  }
  const double k = 1.0 / static_cast<double>(n);
  if (a.header) std::cout << "cap,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3\n";
  std::cout << fmt(a.cap) << ',' << fmt(mean.abs_rel * k) << ',' << fmt(mean.sq_rel * k) << ','
            << fmt(mean.rmse * k) << ',' << fmt(mean.rmse_log * k) << ',' << fmt(mean.delta1 * k) << ','
            << fmt(mean.delta2 * k) << ',' << fmt(mean.delta3 * k) << '\n';
  return kExitOk;
}

struct EvalOdomArgs {
  fs::path pred, gt, per_snippet;
  std::size_t snippet = 5;
  bool header = false;
};

int cmd_eval_odom(const EvalOdomArgs& a) {
  const auto rel = load_relative(a.pred);
  const auto gt = data::load_poses(a.gt);
  const auto res = eval::snippet_ate(rel, gt, a.snippet);
  if (!a.per_snippet.empty()) {
    std::ofstream out(a.per_snippet);
    if (!out) throw IoError("cannot write " + a.per_snippet.string());
    out << "snippet,ate,scale\n";
    for (std::size_t i = 0; i < res.per_snippet.size(); ++i) {
      out << i << ',' << fmt(res.per_snippet[i]) << ',' << fmt(res.scales[i]) << '\n';
    }
  }
  if (a.header) std::cout << "ate_mean,ate_std,snippets,degenerate\n";
  std::cout << fmt(res.mean) << ',' << fmt(res.std) << ',' << res.per_snippet.size() << ',' << res.degenerate << '\n';
  return kExitOk;
}

struct GradcheckArgs {
  std::string scope = "ops";
  std::uint64_t seed = 1;
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto scope = verify::parse_scope(a.scope);
  if (!scope) throw ParseError("unknown scope " + a.scope + " (expected ops, losses or end2end)");
  verify::SuiteOptions o;
  o.seed = a.seed;
  o.inject_fault = a.inject_fault;
  const auto items = verify::run_suite(*scope, o);
  std::vector<std::string> failed;
  for (const auto& item : items) {
    std::cout << std::left << std::setw(28) << item.name << " max_rel_error " << std::setw(12) << fmt(item.max_rel_error)
              << " threshold " << std::setw(8) << fmt(item.threshold) << " coords " << std::setw(8) << item.coords
              << (item.passed() ? " ok" : " FAILED") << '\n';
    if (!item.passed()) failed.push_back(item.name);
  }
  if (!failed.empty()) {
    std::cout << failed.size() << " gradient check(s) failed:";
    for (const auto& f : failed) std::cout << ' ' << f;
    std::cout << '\n';
    return kExitNumerical;
  }
  std::cout << "all " << items.size() << " gradient checks passed\n";
  return kExitOk;
}

struct PlotArgs {
  fs::path poses, gt, out;
};

int cmd_plot(const PlotArgs& a) {
  const auto t = plot::align(load_relative(a.poses), data::load_poses(a.gt));
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  std::ofstream svg(a.out.string() + ".svg"), csv(a.out.string() + ".csv");
  if (!svg || !csv) throw IoError("cannot write plot files with prefix " + a.out.string());
  plot::write_svg(svg, t);
  plot::write_csv(csv, t);
  std::cout << "wrote " << a.out.string() << ".svg and .csv (scale " << fmt(t.scale) << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised visual odometry with sequential code aggregation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Render a synthetic sequence with ground truth");
  synth_cmd->add_option("--seed", synth_args.seed, "Scene seed");
  synth_cmd->add_option("--frames", synth_args.frames, "Number of frames")->check(CLI::Range(2, 100000));
  synth_cmd->add_option("--motion", synth_args.motion, "default, identity or key=value list");
  synth_cmd->add_option("--out", synth_args.out, "Dataset root")->required();
  synth_cmd->add_option("--height", synth_args.height, "Image height");
  synth_cmd->add_option("--width", synth_args.width, "Image width");
  synth_cmd->add_option("--focal", synth_args.focal, "Focal length in pixels");
  synth_cmd->add_flag("--no-flow", synth_args.no_flow, "Skip writing .flo files");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset root");
  train_cmd->add_option("--config", train_args.config, "key=value config file (desk preset when omitted)");
  train_cmd->add_option("--data", train_args.data, "Dataset root")->required();
  train_cmd->add_option("--seq", train_args.seqs, "Sequence ids (all when omitted)");
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--resume", train_args.resume, "Checkpoint to resume from");
  train_cmd->add_option("--steps", train_args.steps, "Stop after this many completed steps");
  train_cmd->add_option("--print-every", train_args.print_every, "Progress interval");

  InferArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer", "Predict depth maps and relative poses");
  infer_cmd->add_option("--ckpt", infer_args.ckpt, "Checkpoint");
  infer_cmd->add_option("--data", infer_args.data, "Dataset root")->required();
  infer_cmd->add_option("--seq", infer_args.seq, "Sequence id")->required();
  infer_cmd->add_option("--out", infer_args.out, "Output directory")->required();
  infer_cmd->add_flag("--oracle", infer_args.oracle, "Emit ground truth instead of predictions");

  EvalDepthArgs depth_args;
  auto* depth_cmd = app.add_subcommand("eval-depth", "Depth metrics against ground truth");
  depth_cmd->add_option("--pred", depth_args.pred, "Directory written by infer")->required();
  depth_cmd->add_option("--data", depth_args.data, "Dataset root")->required();
  depth_cmd->add_option("--seq", depth_args.seq, "Sequence id")->required();
  depth_cmd->add_option("--cap", depth_args.cap, "Depth cap in meters");
  depth_cmd->add_flag("--no-median", depth_args.no_median, "Disable median scaling");
  depth_cmd->add_option("--crop", depth_args.crop, "row0,row1,col0,col1");
  depth_cmd->add_option("--per-frame", depth_args.per_frame, "Per-frame CSV output");
  depth_cmd->add_flag("--header", depth_args.header, "Print a header line");

  EvalOdomArgs odom_args;
  auto* odom_cmd = app.add_subcommand("eval-odom", "Snippet ATE against ground truth");
  odom_cmd->add_option("--pred", odom_args.pred, "Relative pose file written by infer")->required();
  odom_cmd->add_option("--gt", odom_args.gt, "Ground-truth pose file")->required();
  odom_cmd->add_option("--snippet", odom_args.snippet, "Snippet length");
  odom_cmd->add_option("--per-snippet", odom_args.per_snippet, "Per-snippet CSV output");
  odom_cmd->add_flag("--header", odom_args.header, "Print a header line");

  GradcheckArgs grad_args;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--scope", grad_args.scope, "ops, losses or end2end");
  grad_cmd->add_option("--seed", grad_args.seed, "Seed");
  grad_cmd->add_flag("--inject-fault", grad_args.inject_fault, "Include an operator with a broken backward rule");

  PlotArgs plot_args;
  auto* plot_cmd = app.add_subcommand("plot", "Trajectory SVG and CSV");
  plot_cmd->add_option("--poses", plot_args.poses, "Relative pose file")->required();
  plot_cmd->add_option("--gt", plot_args.gt, "Ground-truth pose file")->required();
  plot_cmd->add_option("--out", plot_args.out, "Output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (infer_cmd->parsed()) {
      if (!infer_args.oracle && infer_args.ckpt.empty()) throw ConfigError("infer needs --ckpt or --oracle");
      return cmd_infer(infer_args);
    }
    if (depth_cmd->parsed()) return cmd_eval_depth(depth_args);
    if (odom_cmd->parsed()) return cmd_eval_odom(odom_args);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_args);
    if (plot_cmd->parsed()) return cmd_plot(plot_args);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}
