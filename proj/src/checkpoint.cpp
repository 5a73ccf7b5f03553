#include "seqvo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "seqvo/errors.hpp"

namespace seqvo {
namespace {

constexpr char kMagic[8] = {'S', 'E', 'Q', 'V', 'O', 'C', 'K', 'P'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void floats(const Tensor& t) {
    for (double v : t.data()) u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<unsigned char> bytes, std::string name) : b_(std::move(bytes)), name_(std::move(name)) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError(name_ + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool magic() {
    if (b_.size() < sizeof(kMagic)) return false;
    const bool ok = std::memcmp(b_.data(), kMagic, sizeof(kMagic)) == 0;
    pos_ = sizeof(kMagic);
    return ok;
  }
  Tensor floats(const Shape& shape) {
    Tensor t(shape);
    need(4 * t.size());
    for (double& v : t.data()) v = static_cast<double>(std::bit_cast<float>(u32()));
    return t;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::vector<unsigned char> b_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (ck.adam.m.size() != ck.params.size() || ck.adam.v.size() != ck.params.size()) {
    throw ShapeError("checkpoint: Adam state does not match the parameters");
  }
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.str(to_text(ck.config));
  w.u64(ck.params.seed());
  w.u64(ck.step);
  w.u64(ck.adam.step);
  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const Tensor& t = ck.params.value(i);
    w.str(ck.params.name(i));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.floats(t);
    w.floats(ck.adam.m[i]);
    w.floats(ck.adam.v[i]);
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());
  if (!r.magic()) throw VersionError(path.string() + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  ck.config = parse_config(r.str());
  ck.params = net::ParamStore(r.u64());
  ck.step = r.u64();
  ck.adam.step = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    ck.params.add(name, r.floats(shape));
    ck.adam.m.push_back(r.floats(shape));
    ck.adam.v.push_back(r.floats(shape));
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after checkpoint payload");
  return ck;
}

}  // namespace seqvo
