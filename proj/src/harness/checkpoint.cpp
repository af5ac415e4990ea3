#include "adamix/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace adamix {

namespace {
constexpr char kMagic[4] = {'A', 'A', 'M', 'X'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back((unsigned char)(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back((unsigned char)(v >> (8 * i)));
  }
  void values(std::span<const double> v) {
    u64(v.size());
    for (double x : v) u64(std::bit_cast<std::uint64_t>(x));
  }
  std::vector<unsigned char> take() { return std::move(bytes_); }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}
  std::uint64_t uint(int width) {
    if (pos_ + std::size_t(width) > bytes_.size()) throw IoError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::vector<double> values() {
    const std::uint64_t n = uint(8);
    if (n > (bytes_.size() - pos_) / 8) throw IoError("checkpoint: truncated tensor");
    std::vector<double> v(n);
    for (auto& x : v) x = std::bit_cast<double>(uint(8));
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

void write_network(Writer& w, const std::vector<Tensor>& params,
                   const std::vector<const ops::BatchNormStats*>& stats) {
  w.u64(params.size());
  for (const auto& p : params) w.values(p.data());
  w.u64(stats.size());
  for (const auto* s : stats) {
    w.values(s->running_mean);
    w.values(s->running_var);
  }
}

std::vector<std::vector<double>> read_network(Reader& r) {
  std::vector<std::vector<double>> out;
  const std::uint64_t params = r.uint(8);
  for (std::uint64_t i = 0; i < params; ++i) out.push_back(r.values());
  const std::uint64_t stats = r.uint(8);
  for (std::uint64_t i = 0; i < 2 * stats; ++i) out.push_back(r.values());
  return out;
}

// Fills parameters then batch-norm statistics from `values` in write order.
void fill(const std::vector<Tensor>& params, const std::vector<ops::BatchNormStats*>& stats,
          const std::vector<std::vector<double>>& values, const char* what) {
  if (values.size() != params.size() + 2 * stats.size()) {
    throw ShapeError(std::string("checkpoint: ") + what + " has " +
                     std::to_string(values.size()) + " tensors, expected " +
                     std::to_string(params.size() + 2 * stats.size()));
  }
  std::size_t i = 0;
  const auto copy = [&](std::span<double> dst, const std::vector<double>& src) {
    if (dst.size() != src.size()) {
      throw ShapeError(std::string("checkpoint: ") + what + " tensor " + std::to_string(i) +
                       " has " + std::to_string(src.size()) + " values, expected " +
                       std::to_string(dst.size()));
    }
    std::copy(src.begin(), src.end(), dst.begin());
    ++i;
  };
  for (auto p : params) copy(p.mutable_data(), values[i]);
  for (auto* s : stats) {
    copy(s->running_mean, values[i]);
    copy(s->running_var, values[i]);
  }
}
}  // namespace

std::vector<unsigned char> encode_checkpoint(const ModelState& state, std::size_t layer) {
  Writer w;
  w.bytes().insert(w.bytes().end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kVersion);
  const ArchDescriptor& a = state.net.descriptor();
  w.u64(a.input.channels);
  w.u64(a.input.height);
  w.u64(a.input.width);
  w.u64(a.num_classes);
  w.u64(a.blocks_per_stage);
  w.u64(a.widths.size());
  for (auto width : a.widths) w.u64(width);
  w.u64(layer);
  w.u64(state.step);
  write_network(w, state.net.parameters(), state.net.batch_norm_stats());
  write_network(w, state.teacher.parameters(), state.teacher.batch_norm_stats());
  const Classifier& enc = state.encoder.network();
  auto enc_stats = enc.batch_norm_stats();
  enc_stats.resize(enc.prefix_batch_norm_count(layer));
  write_network(w, state.encoder.parameters(), enc_stats);
  write_network(w, state.theta.parameters(), {});
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw IoError("checkpoint: bad magic");
  }
  Reader r(bytes);
  r.uint(4);
  const auto version = r.uint(4);
  if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.arch.input.channels = r.uint(8);
  c.arch.input.height = r.uint(8);
  c.arch.input.width = r.uint(8);
  c.arch.num_classes = r.uint(8);
  c.arch.blocks_per_stage = r.uint(8);
  const std::uint64_t stages = r.uint(8);
  if (stages > 64) throw IoError("checkpoint: implausible stage count");
  c.arch.widths.clear();
  for (std::uint64_t i = 0; i < stages; ++i) c.arch.widths.push_back(r.uint(8));
  c.layer = r.uint(8);
  c.step = r.uint(8);
  c.classifier = read_network(r);
  c.teacher = read_network(r);
  c.encoder = read_network(r);
  c.generator = read_network(r);
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return c;
}

void restore(ModelState& state, const Checkpoint& c) {
  if (!(state.net.descriptor() == c.arch)) throw ShapeError("checkpoint: architecture mismatch");
  if (c.layer != state.encoder.layers()) throw ShapeError("checkpoint: encoder depth mismatch");
  fill(state.net.parameters(), state.net.batch_norm_stats(), c.classifier, "classifier");
  fill(state.teacher.parameters(), state.teacher.batch_norm_stats(), c.teacher, "teacher");
  Classifier& enc = state.encoder.network();
  auto enc_stats = enc.batch_norm_stats();
  enc_stats.resize(enc.prefix_batch_norm_count(c.layer));
  fill(state.encoder.parameters(), enc_stats, c.encoder, "encoder");
  fill(state.theta.parameters(), {}, c.generator, "generator");
  state.step = c.step;
}

void save_checkpoint(const std::string& path, const ModelState& state, std::size_t layer) {
  const auto bytes = encode_checkpoint(state, layer);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

namespace {
std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

std::uint64_t fnv1a64(const std::vector<unsigned char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_digest(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)digest);
  return buf;
}

std::string file_digest(const std::string& path) { return hex_digest(fnv1a64(read_file(path))); }

}  // namespace adamix
