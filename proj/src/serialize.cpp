// SPDX-License-Identifier: Apache-2.0
#include "skullnet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "skullnet/error.hpp"

namespace skullnet {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

enum BlockKind : std::uint32_t {
  kConvKernels = 1,
  kConvBias = 2,
  kDenseWeights = 3,
  kDenseBias = 4,
};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void magic(const char* m) { out_.insert(out_.end(), m, m + 4); }
  void patch_u64(std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  std::size_t size() const { return out_.size(); }

  std::vector<std::uint8_t> finish() {
    u64(fnv1a64(out_));
    return std::move(out_);
  }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError(source_ + ": " + what);
  }

  /// Verifies magic and trailing checksum; afterwards reads stop before it.
  void open(const char* magic) {
    if (bytes_.size() < 12 || std::memcmp(bytes_.data(), magic, 4) != 0) {
      fail(std::string("not a ") + magic + " file (bad magic)");
    }
    const auto body = bytes_.first(bytes_.size() - 8);
    pos_ = body.size();
    end_ = bytes_.size();
    if (u64() != fnv1a64(body)) fail("checksum mismatch (file is corrupt)");
    pos_ = 4;
    end_ = body.size();
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  void need(std::uint64_t n) const {
    if (n > end_ - pos_) fail("truncated data");
  }
  std::size_t pos() const { return pos_; }
  void seek(std::uint64_t p) {
    if (p > end_) fail("offset out of range");
    pos_ = p;
  }
  bool at_end() const { return pos_ == end_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

struct Block {
  std::uint32_t kind;
  Shape shape;
  std::vector<float> values;
};

Block read_block(Reader& r, std::uint32_t expected_kind) {
  Block b;
  b.kind = r.u32();
  if (b.kind != expected_kind) r.fail("unexpected block kind " + std::to_string(b.kind));
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 4) r.fail("invalid block rank");
  std::uint64_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0) r.fail("zero block dimension");
    b.shape.push_back(d);
    numel *= d;
  }
  const std::uint64_t count = r.u64();
  if (count != numel) r.fail("block element count does not match its shape");
  r.need(count * 4);
  b.values.resize(count);
  for (auto& v : b.values) v = r.f32();
  return b;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const ModelParams& params) {
  struct Item {
    std::uint32_t kind;
    Shape shape;
    std::span<const float> values;
  };
  std::vector<Item> items;
  for (const auto& layer : params.conv) {
    items.push_back({kConvKernels, layer.kernels.shape(), layer.kernels.data()});
    items.push_back({kConvBias, {layer.bias.size()}, layer.bias});
  }
  items.push_back({kDenseWeights, params.head.weights.shape(), params.head.weights.data()});
  items.push_back({kDenseBias, {params.head.bias.size()}, params.head.bias});

  Writer w;
  w.magic("SKN1");
  w.u32(kModelFileVersion);
  w.f32(params.leaky_slope);
  w.u32(static_cast<std::uint32_t>(params.input_shape.size()));
  for (auto d : params.input_shape) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(items.size()));
  const std::size_t table_at = w.size();
  for (const auto& it : items) {
    w.u32(it.kind);
    w.u64(0);
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    w.patch_u64(table_at + i * 12 + 4, w.size());
    w.u32(items[i].kind);
    w.u32(static_cast<std::uint32_t>(items[i].shape.size()));
    for (auto d : items[i].shape) w.u32(static_cast<std::uint32_t>(d));
    w.u64(items[i].values.size());
    for (float v : items[i].values) w.f32(v);
  }
  return w.finish();
}

ModelParams decode_model(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  r.open("SKN1");
  const std::uint32_t version = r.u32();
  if (version != kModelFileVersion) r.fail("unsupported version " + std::to_string(version));

  ModelParams p;
  p.leaky_slope = r.f32();
  const std::uint32_t rank = r.u32();
  if (rank != 3) r.fail("input shape must have rank 3");
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0) r.fail("zero input dimension");
    p.input_shape.push_back(d);
  }
  const std::uint32_t count = r.u32();
  if (count < 2 || count % 2 != 0) r.fail("invalid block count");
  std::vector<std::pair<std::uint32_t, std::uint64_t>> table(count);
  for (auto& [kind, offset] : table) {
    kind = r.u32();
    offset = r.u64();
  }

  const std::size_t n_conv = (count - 2) / 2;
  std::size_t cin = p.input_shape[2];
  for (std::size_t i = 0; i < count; ++i) {
    r.seek(table[i].second);
    const bool is_head = i >= 2 * n_conv;
    const std::uint32_t kind = is_head ? (i % 2 == 0 ? kDenseWeights : kDenseBias)
                                       : (i % 2 == 0 ? kConvKernels : kConvBias);
    if (table[i].first != kind) r.fail("section table kind mismatch");
    Block b = read_block(r, kind);
    switch (kind) {
      case kConvKernels:
        if (b.shape.size() != 4 || b.shape[0] != 3 || b.shape[1] != 3 || b.shape[2] != cin) {
          r.fail("conv kernel " + std::to_string(i / 2) + " has shape " + shape_to_string(b.shape));
        }
        cin = b.shape[3];
        p.conv.push_back({Tensor(b.shape, std::move(b.values)), {}});
        break;
      case kConvBias:
        if (b.values.size() != p.conv.back().out_channels()) r.fail("conv bias length mismatch");
        p.conv.back().bias = std::move(b.values);
        break;
      case kDenseWeights:
        if (b.shape.size() != 2) r.fail("dense weights must have rank 2");
        p.head.weights = Tensor(b.shape, std::move(b.values));
        break;
      case kDenseBias:
        if (b.values.size() != p.head.out_dim()) r.fail("dense bias length mismatch");
        p.head.bias = std::move(b.values);
        break;
    }
  }
  if (p.conv.size() % 2 != 0) r.fail("convolutions must come in pairs");
  const auto fs = p.feature_shape();
  if (fs[0] == 0 || fs[1] == 0 || shape_numel(fs) != p.head.in_dim()) {
    r.fail("dense head input does not match the flattened feature size");
  }
  return p;
}

std::vector<std::uint8_t> encode_knn(const MlknnModel& m) {
  Writer w;
  w.magic("SKK1");
  w.u32(kKnnFileVersion);
  w.u32(static_cast<std::uint32_t>(m.k));
  w.f64(m.s);
  w.u8(m.l2_normalize ? 1 : 0);
  w.u64(m.features.rows());
  w.u64(m.features.cols());
  w.u32(static_cast<std::uint32_t>(m.labels.cols()));
  for (float v : m.features.data()) w.f32(v);
  for (auto v : m.labels.data()) w.u8(v);
  for (double v : m.prior1) w.f64(v);
  for (double v : m.prior0) w.f64(v);
  for (auto v : m.counts1.data()) w.u32(v);
  for (auto v : m.counts0.data()) w.u32(v);
  for (double v : m.post1.data()) w.f64(v);
  for (double v : m.post0.data()) w.f64(v);
  return w.finish();
}

MlknnModel decode_knn(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  r.open("SKK1");
  const std::uint32_t version = r.u32();
  if (version != kKnnFileVersion) r.fail("unsupported version " + std::to_string(version));
  MlknnModel m;
  m.k = r.u32();
  m.s = r.f64();
  const auto flag = r.u8();
  if (flag > 1) r.fail("invalid normalization flag");
  m.l2_normalize = flag == 1;
  const std::uint64_t rows = r.u64(), dim = r.u64();
  const std::uint32_t L = r.u32();
  if (m.k == 0 || m.k > (1u << 20)) r.fail("invalid k");
  if (dim == 0 || L == 0) r.fail("empty feature or label dimension");
  if (rows > (std::uint64_t{1} << 32) || dim > (std::uint64_t{1} << 32)) r.fail("implausible size");
  r.need(rows * dim * 4 + rows * L);

  m.features = FeatureMatrix(rows, dim);
  for (auto& v : m.features.data()) v = r.f32();
  m.labels = LabelMatrix(rows, L);
  for (auto& v : m.labels.data()) v = r.u8();
  m.prior1.resize(L);
  m.prior0.resize(L);
  for (auto& v : m.prior1) v = r.f64();
  for (auto& v : m.prior0) v = r.f64();
  const std::size_t cols = m.k + 1;
  m.counts1 = Matrix<std::uint32_t>(L, cols);
  m.counts0 = Matrix<std::uint32_t>(L, cols);
  m.post1 = ScoreMatrix(L, cols);
  m.post0 = ScoreMatrix(L, cols);
  r.need(std::uint64_t{L} * cols * 24);
  for (auto& v : m.counts1.data()) v = r.u32();
  for (auto& v : m.counts0.data()) v = r.u32();
  for (auto& v : m.post1.data()) v = r.f64();
  for (auto& v : m.post0.data()) v = r.f64();
  if (!r.at_end()) r.fail("trailing bytes before checksum");
  try {
    validate_model(m);
  } catch (const ValidationError& e) {
    r.fail(e.what());
  }
  return m;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("cannot write " + path.string());
}

void save_model(const std::filesystem::path& path, const ModelParams& params) {
  write_file_bytes(path, encode_model(params));
}

ModelParams load_model(const std::filesystem::path& path) {
  return decode_model(read_file_bytes(path), path.string());
}

void save_knn(const std::filesystem::path& path, const MlknnModel& model) {
  write_file_bytes(path, encode_knn(model));
}

MlknnModel load_knn(const std::filesystem::path& path) {
  return decode_knn(read_file_bytes(path), path.string());
}

}  // namespace skullnet
