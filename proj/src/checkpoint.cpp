#include "cigl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "cigl/error.hpp"

namespace cigl {
namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T le() {
    const auto b = bytes(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{b[i]} << (8 * i));
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> pack_mask(const Mask& mask) {
  std::vector<std::uint8_t> out((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out[i / 8] = static_cast<std::uint8_t>(out[i / 8] | (1u << (i % 8)));
  }
  return out;
}

Mask unpack_mask(std::span<const std::uint8_t> packed, std::size_t size) {
  if (packed.size() != (size + 7) / 8) throw FormatError("mask bitmap has the wrong length");
  Mask m(size);
  for (std::size_t i = 0; i < size; ++i) m[i] = static_cast<std::uint8_t>((packed[i / 8] >> (i % 8)) & 1u);
  return m;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.model.validate();
  if (ckpt.masks.size() != ckpt.model.layers.size()) throw ShapeError("checkpoint: one mask per layer required");
  Writer w;
  w.bytes("CIGL", 4);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint8_t>(ckpt.method));
  w.le(ckpt.seed);
  w.le(static_cast<std::uint32_t>(ckpt.model.layers.size()));
  for (std::size_t l = 0; l < ckpt.model.layers.size(); ++l) {
    const auto& layer = ckpt.model.layers[l];
    if (ckpt.masks[l].size() != layer.weight.numel()) throw ShapeError("checkpoint: mask size mismatch");
    w.le(static_cast<std::uint32_t>(layer.weight.rank()));
    for (auto d : layer.weight.shape) w.le(static_cast<std::uint32_t>(d));
    for (float v : layer.weight.data) w.f32(v);
    const auto packed = pack_mask(ckpt.masks[l]);
    w.bytes(packed.data(), packed.size());
    w.le(static_cast<std::uint32_t>(layer.bias.numel()));
    for (float v : layer.bias.data) w.f32(v);
  }
  w.le(ckpt.n_models);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "CIGL", 4) != 0) throw FormatError("not a checkpoint: bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const auto tag = r.le<std::uint8_t>();
  if (tag > static_cast<std::uint8_t>(Method::cigl_no_wma)) {
    throw FormatError("unknown method tag " + std::to_string(tag));
  }
  ckpt.method = static_cast<Method>(tag);
  ckpt.seed = r.le<std::uint64_t>();
  const auto n_layers = r.le<std::uint32_t>();
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto rank = r.le<std::uint32_t>();
    if (rank != 2) throw FormatError("layer " + std::to_string(l) + ": expected a rank-2 weight");
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.le<std::uint32_t>();
      if (d == 0) throw FormatError("layer " + std::to_string(l) + ": zero dimension");
      shape.push_back(d);
    }
    DenseLayer layer;
    layer.weight = Tensor(shape);
    for (float& v : layer.weight.data) v = r.f32();
    ckpt.masks.push_back(unpack_mask(r.bytes((layer.weight.numel() + 7) / 8), layer.weight.numel()));
    const auto bias_len = r.le<std::uint32_t>();
    if (bias_len != shape[0]) throw FormatError("layer " + std::to_string(l) + ": bias length mismatch");
    layer.bias = Tensor({bias_len});
    for (float& v : layer.bias.data) v = r.f32();
    ckpt.model.layers.push_back(std::move(layer));
  }
  ckpt.n_models = r.le<std::uint32_t>();
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  ckpt.model.validate();
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace cigl
