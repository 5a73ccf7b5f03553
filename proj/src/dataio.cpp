#include "seqvo/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "seqvo/errors.hpp"
#include "seqvo/image_io.hpp"
#include "seqvo/ops.hpp"

namespace seqvo::data {

namespace fs = std::filesystem;
using geometry::Intrinsics;
using geometry::Transform;

void SequenceDataset::validate() const {
  if (frames.empty()) throw ShapeError("dataset " + id + " has no frames");
  for (const Tensor& f : frames) {
    if (f.shape() != frames[0].shape()) throw ShapeError("dataset " + id + ": frames differ in size");
  }
  if (gt_poses && gt_poses->size() != frames.size()) throw ShapeError("dataset " + id + ": pose count mismatch");
  if (gt_depths && gt_depths->size() != frames.size()) throw ShapeError("dataset " + id + ": depth count mismatch");
}

std::vector<Transform> parse_poses(const std::string& text, const std::string& source) {
  std::vector<Transform> poses;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    std::istringstream tokens(line);
    std::vector<double> v;
    std::string tok;
    while (tokens >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": not a number: " + tok);
      }
    }
    if (v.empty()) continue;
    if (v.size() != 12) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected 12 values, got " + std::to_string(v.size()));
    }
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
    }
    Transform t(m);
    if (t.rigidity_error() > 1e-3) {
      throw GeometryError(source + ":" + std::to_string(lineno) + ": rotation is not orthonormal");
    }
    poses.push_back(t);
  }
  return poses;
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

}  // namespace

std::vector<Transform> load_poses(const fs::path& path) { return parse_poses(read_text(path), path.string()); }

void write_poses(const fs::path& path, std::span<const Transform> poses) {
  auto out = open_out(path);
  for (const Transform& t : poses) {
    const auto rt = geometry::to_row_major_3x4(t);
    for (std::size_t i = 0; i < 12; ++i) out << (i ? " " : "") << rt[i];
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Intrinsics parse_intrinsics(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  Intrinsics k;
  k.width = 0;
  k.height = 0;
  std::string extra;
  if (!(in >> k.fx >> k.fy >> k.cx >> k.cy)) throw ParseError(source + ": expected \"fx fy cx cy\"");
  if (in >> extra) throw ParseError(source + ": unexpected trailing token " + extra);
  if (!(k.fx > 0.0) || !(k.fy > 0.0)) throw ParseError(source + ": focal lengths must be positive");
  return k;
}

Intrinsics load_intrinsics(const fs::path& path) { return parse_intrinsics(read_text(path), path.string()); }

void write_intrinsics(const fs::path& path, const Intrinsics& k) {
  auto out = open_out(path);
  out << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << '\n';
}

std::string frame_name(std::size_t frame) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << frame;
  return s.str();
}

SequenceDataset load_sequence(const fs::path& root, const std::string& id) {
  const fs::path seq = root / "sequences" / id;
  const fs::path image_dir = seq / "image";
  if (!fs::is_directory(image_dir)) throw IoError("missing image directory " + image_dir.string());
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    const auto ext = e.path().extension();
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw IoError("no images in " + image_dir.string());

  SequenceDataset ds;
  ds.id = id;
  for (const auto& p : images) ds.frames.push_back(io::load_image(p));
  ds.intrinsics = load_intrinsics(seq / "calib.txt");
  ds.intrinsics.height = ds.height();
  ds.intrinsics.width = ds.width();
  ds.intrinsics.validate();

  const fs::path pose_file = root / "poses" / (id + ".txt");
  if (fs::exists(pose_file)) ds.gt_poses = load_poses(pose_file);
  const fs::path depth_dir = seq / "depth";
  if (fs::is_directory(depth_dir)) {
    std::vector<Tensor> depths;
    for (std::size_t i = 0; i < ds.size(); ++i) depths.push_back(io::read_depth_pgm(depth_dir / (frame_name(i) + ".pgm")));
    ds.gt_depths = std::move(depths);
  }
  const fs::path flow_dir = root / "flow" / id;
  if (fs::is_directory(flow_dir) || !ds.gt_poses || !ds.gt_depths) {
    ds.flow_source = flow::FileFlowSource{flow_dir};
  } else {
    ds.flow_source = flow::SyntheticFlowSource{*ds.gt_depths, *ds.gt_poses, ds.intrinsics};
  }
  ds.validate();
  return ds;
}

void write_sequence(const fs::path& root, const SequenceDataset& ds, bool with_flow) {
  ds.validate();
  const fs::path seq = root / "sequences" / ds.id;
  fs::create_directories(seq / "image");
  for (std::size_t i = 0; i < ds.size(); ++i) io::write_png(seq / "image" / (frame_name(i) + ".png"), ds.frames[i]);
  write_intrinsics(seq / "calib.txt", ds.intrinsics);
  if (ds.gt_poses) {
    fs::create_directories(root / "poses");
    write_poses(root / "poses" / (ds.id + ".txt"), *ds.gt_poses);
  }
  if (ds.gt_depths) {
    fs::create_directories(seq / "depth");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      io::write_depth_pgm(seq / "depth" / (frame_name(i) + ".pgm"), (*ds.gt_depths)[i]);
    }
  }
  if (with_flow) {
    const fs::path flow_dir = root / "flow" / ds.id;
    fs::create_directories(flow_dir);
    for (std::size_t t = 1; t < ds.size(); ++t) flow::write_flo(flow::flo_path(flow_dir, t), flow::flow_for(ds.flow_source, t));
  }
}

std::vector<Transform> relative_motion(std::span<const Transform> poses) {
  std::vector<Transform> rel;
  for (std::size_t i = 0; i + 1 < poses.size(); ++i) rel.push_back(geometry::invert(poses[i]) * poses[i + 1]);
  return rel;
}

std::vector<geometry::Pose6> network_poses(std::span<const Transform> poses) {
  std::vector<geometry::Pose6> out;
  for (const Transform& m : relative_motion(poses)) out.push_back(geometry::transform_to_pose(geometry::invert(m)));
  return out;
}

SequenceDataset resized(const SequenceDataset& ds, std::size_t height, std::size_t width) {
  if (ds.height() == height && ds.width() == width) return ds;
  SequenceDataset out = ds;
  for (Tensor& f : out.frames) f = ad::resize_bilinear(f, height, width);
  out.intrinsics = ds.intrinsics.resized(height, width);
  return out;
}

Snippet make_snippet(const SequenceDataset& ds, std::size_t start, std::size_t length) {
  if (length == 0 || start + length > ds.size()) {
    throw ShapeError("snippet [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds sequence " + ds.id + " of " + std::to_string(ds.size()) + " frames");
  }
  Snippet s;
  s.intrinsics = ds.intrinsics;
  const std::size_t h = ds.height(), w = ds.width();
  for (std::size_t i = start; i < start + length; ++i) {
    s.images.push_back(ds.frames[i]);
    s.flows.push_back(i == start ? FlowField::zeros(h, w) : flow::flow_for(ds.flow_source, i).resized(h, w));
    if (ds.gt_depths && (*ds.gt_depths)[i].dim(0) == h && (*ds.gt_depths)[i].dim(1) == w) {
      s.depths.push_back((*ds.gt_depths)[i]);
    }
    if (ds.gt_poses) s.poses.push_back((*ds.gt_poses)[i]);
  }
  if (s.depths.size() != length) s.depths.clear();
  return s;
}

}  // namespace seqvo::data
