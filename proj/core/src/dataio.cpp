#include "deepstamp/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "byte_io.hpp"

namespace deepstamp {

void ImageBatch::validate(std::size_t num_classes) const {
  if (data.rank() != 4) {
    throw DimensionError("image batch must be rank 4, got " + shape_to_string(data.shape()));
  }
  if (labels.empty()) throw DimensionError("image batch must hold at least one image");
  if (data.dim(0) != labels.size()) {
    throw DimensionError("image batch has " + std::to_string(data.dim(0)) + " images but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float v = data[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw RangeError("pixel value " + std::to_string(v) + " at element " + std::to_string(i) +
                       " outside [0,1]");
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw RangeError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                       " outside [0," + std::to_string(num_classes - 1) + "]");
    }
  }
}

ImageBatch ImageBatch::select(std::span<const std::size_t> indices) const {
  const std::size_t per = image_elements();
  Shape shape = data.shape();
  shape[0] = indices.size();
  ImageBatch out{Tensor<float>(shape), {}};
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= size()) throw DimensionError("index " + std::to_string(i) + " out of batch");
    std::memcpy(out.data.data() + k * per, data.data() + i * per, per * sizeof(float));
    out.labels.push_back(labels[i]);
  }
  return out;
}

ImageBatch ImageBatch::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw DimensionError("slice out of batch range");
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return select(idx);
}

ImageBatch concat(std::span<const ImageBatch> batches) {
  if (batches.empty()) throw DimensionError("concat of zero batches");
  Shape shape = batches.front().data.shape();
  std::size_t total = 0;
  for (const auto& b : batches) {
    if (b.data.rank() != 4 || b.data.dim(1) != shape[1] || b.data.dim(2) != shape[2] ||
        b.data.dim(3) != shape[3]) {
      throw DimensionError("concat of batches with different image shapes");
    }
    total += b.size();
  }
  shape[0] = total;
  ImageBatch out{Tensor<float>(shape), {}};
  out.labels.reserve(total);
  std::size_t offset = 0;
  for (const auto& b : batches) {
    std::memcpy(out.data.data() + offset, b.data.data(), b.data.size() * sizeof(float));
    offset += b.data.size();
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  }
  return out;
}

void Watermark::validate() const {
  if (rgb.rank() != 3 || rgb.dim(0) != 3 || alpha.rank() != 3 || alpha.dim(0) != 1) {
    throw DimensionError("watermark planes must be [3,H,W] and [1,H,W], got " +
                         shape_to_string(rgb.shape()) + " and " + shape_to_string(alpha.shape()));
  }
  if (rgb.dim(1) != alpha.dim(1) || rgb.dim(2) != alpha.dim(2)) {
    throw DimensionError("watermark rgb " + shape_to_string(rgb.shape()) + " and alpha " +
                         shape_to_string(alpha.shape()) + " differ in H,W");
  }
  for (const auto* plane : {&rgb, &alpha}) {
    for (float v : plane->values()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw RangeError("watermark value outside [0,1]");
    }
  }
}

Tensor<float> Watermark::to_tensor() const {
  Tensor<float> out({4, height(), width()});
  std::copy(rgb.values().begin(), rgb.values().end(), out.data());
  std::copy(alpha.values().begin(), alpha.values().end(), out.data() + rgb.size());
  return out;
}

Watermark Watermark::from_tensor(const Tensor<float>& rgba) {
  if (rgba.rank() != 3 || rgba.dim(0) != 4) {
    throw DimensionError("watermark tensor must be [4,H,W], got " + shape_to_string(rgba.shape()));
  }
  const std::size_t h = rgba.dim(1), w = rgba.dim(2), plane = h * w;
  Watermark out{Tensor<float>({3, h, w}), Tensor<float>({1, h, w})};
  std::copy(rgba.data(), rgba.data() + 3 * plane, out.rgb.data());
  std::copy(rgba.data() + 3 * plane, rgba.data() + 4 * plane, out.alpha.data());
  return out;
}

void NetworkParams::validate() const {
  std::set<std::string_view> names;
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) throw FormatError("duplicate parameter name '" + e.name + "'");
    if (shape_size(e.shape) != e.values.size()) {
      throw DimensionError("parameter '" + e.name + "' shape " + shape_to_string(e.shape) +
                           " does not match " + std::to_string(e.values.size()) + " values");
    }
  }
}

const ParamEntry& NetworkParams::at(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw DimensionError("no parameter named '" + std::string(name) + "'");
}

ParamEntry& NetworkParams::at(std::string_view name) {
  return const_cast<ParamEntry&>(std::as_const(*this).at(name));
}

namespace dataio {

using detail::ByteReader;
using detail::ByteWriter;

std::uint8_t quantize_pixel(float value) noexcept {
  float v = std::nearbyint(value * 255.0f);  // default rounding mode: half to even
  if (!(v >= 0.0f)) v = 0.0f;
  if (v > 255.0f) v = 255.0f;
  return static_cast<std::uint8_t>(v);
}

ImageBatch decode_cifar(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t plane = kImageSide * kImageSide;
  if (bytes.size() % kCifarRecordBytes != 0 || bytes.empty()) {
    throw FormatError("CIFAR batch truncated: " + std::to_string(bytes.size()) +
                          " bytes is not a positive multiple of " +
                          std::to_string(kCifarRecordBytes),
                      bytes.size());
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  ImageBatch out{Tensor<float>({n, kImageChannels, kImageSide, kImageSide}), std::vector<int>(n)};
  float* dst = out.data.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] >= kNumClasses) {
      throw RangeError("label byte " + std::to_string(rec[0]) + " > 9 at byte offset " +
                       std::to_string(i * kCifarRecordBytes));
    }
    out.labels[i] = rec[0];
    for (std::size_t k = 0; k < kImageChannels * plane; ++k) *dst++ = dequantize_pixel(rec[1 + k]);
  }
  return out;
}

std::vector<std::uint8_t> encode_cifar(const ImageBatch& batch) {
  if (batch.data.rank() != 4 || batch.data.dim(1) != kImageChannels ||
      batch.data.dim(2) != kImageSide || batch.data.dim(3) != kImageSide) {
    throw DimensionError("CIFAR encoding needs [N,3,32,32], got " +
                         shape_to_string(batch.data.shape()));
  }
  if (batch.data.dim(0) != batch.labels.size()) throw DimensionError("label count mismatch");
  const std::size_t per = batch.image_elements();
  std::vector<std::uint8_t> out(batch.size() * kCifarRecordBytes);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::uint8_t* rec = out.data() + i * kCifarRecordBytes;
    const int label = batch.labels[i];
    if (label < 0 || label > 255) throw RangeError("label does not fit in one byte");
    rec[0] = static_cast<std::uint8_t>(label);
    const float* src = batch.data.data() + i * per;
    for (std::size_t k = 0; k < per; ++k) rec[1 + k] = quantize_pixel(src[k]);
  }
  return out;
}

ImageBatch load_cifar_batch(const std::filesystem::path& path) {
  return decode_cifar(read_file(path));
}

void save_cifar_batch(const ImageBatch& batch, const std::filesystem::path& path) {
  write_file_atomic(path, encode_cifar(batch));
}

namespace {

constexpr char kTensorMagic[4] = {'D', 'S', 'T', 'N'};
constexpr char kCheckpointMagic[4] = {'D', 'S', 'C', 'K'};

}  // namespace

std::vector<std::uint8_t> encode_raw_tensor(const Tensor<float>& tensor) {
  if (tensor.rank() > 255) throw DimensionError("tensor rank exceeds 255");
  ByteWriter w;
  w.bytes(kTensorMagic, 4);
  w.u8(1);
  w.u8(0);
  w.u8(static_cast<std::uint8_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw DimensionError("dimension exceeds u32");
    w.u32(static_cast<std::uint32_t>(d));
  }
  w.f32_array(tensor.values());
  return w.take();
}

Tensor<float> decode_raw_tensor(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.magic(kTensorMagic)) throw FormatError("not a DSTN tensor file (bad magic)", 0);
  const auto version = r.u8();
  if (version != 1) throw FormatError("unsupported DSTN version " + std::to_string(version), 4);
  const auto dtype = r.u8();
  if (dtype != 0) throw FormatError("unsupported DSTN dtype " + std::to_string(dtype), 5);
  const auto rank = r.u8();
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  const std::size_t count = r.checked_count(shape, sizeof(float));
  std::vector<float> values(count);
  r.f32_array(values);
  if (!r.at_end()) throw FormatError("trailing bytes after DSTN payload", r.offset());
  return Tensor<float>(std::move(shape), std::move(values));
}

void save_raw_tensor(const Tensor<float>& tensor, const std::filesystem::path& path) {
  write_file_atomic(path, encode_raw_tensor(tensor));
}

Tensor<float> load_raw_tensor(const std::filesystem::path& path) {
  return decode_raw_tensor(read_file(path));
}

std::vector<std::uint8_t> encode_checkpoint(const NetworkParams& params) {
  params.validate();
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u8(kCheckpointVersion);
  w.str(params.metadata.architecture);
  w.u64(params.metadata.seed);
  w.u64(params.metadata.step);
  w.u32(static_cast<std::uint32_t>(params.entries.size()));
  for (const auto& e : params.entries) {
    w.str(e.name);
    if (e.shape.size() > 255) throw DimensionError("parameter rank exceeds 255");
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    w.f32_array(e.values);
  }
  return w.take();
}

NetworkParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  auto truncated = [](const FormatError& e, std::uint64_t offset) {
    return CheckpointError(CheckpointErrorCode::truncated,
                           std::string("truncated checkpoint: ") + e.what(), offset);
  };
  ByteReader r(bytes);
  if (!r.magic(kCheckpointMagic)) {
    throw CheckpointError(CheckpointErrorCode::bad_magic, "not a DSCK checkpoint (bad magic)", 0);
  }
  NetworkParams out;
  try {
    const auto version = r.u8();
    if (version != kCheckpointVersion) {
      throw CheckpointError(CheckpointErrorCode::bad_version,
                            "unsupported checkpoint version " + std::to_string(version), 4);
    }
    out.metadata.architecture = r.str();
    out.metadata.seed = r.u64();
    out.metadata.step = r.u64();
    const std::uint32_t count = r.u32();
    // Each entry needs at least 5 bytes; reject absurd counts before reserving.
    if (count > r.remaining() / 5 + 1) {
      throw CheckpointError(CheckpointErrorCode::truncated,
                            "entry count " + std::to_string(count) + " exceeds file size",
                            r.offset());
    }
    out.entries.reserve(count);
    std::set<std::string> names;
    for (std::uint32_t i = 0; i < count; ++i) {
      ParamEntry e;
      e.name = r.str();
      const auto rank = r.u8();
      e.shape.resize(rank);
      for (auto& d : e.shape) d = r.u32();
      e.values.resize(r.checked_count(e.shape, sizeof(float)));
      r.f32_array(e.values);
      if (!names.insert(e.name).second) {
        throw CheckpointError(CheckpointErrorCode::malformed,
                              "duplicate parameter name '" + e.name + "'", r.offset());
      }
      out.entries.push_back(std::move(e));
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const FormatError& e) {
    throw truncated(e, r.offset());
  }
  if (!r.at_end()) {
    throw CheckpointError(CheckpointErrorCode::malformed, "trailing bytes after checkpoint",
                          r.offset());
  }
  return out;
}

void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(params));
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading '" + path.string() + "'");
  }
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename onto '" + path.string() + "': " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t checksum(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dataio
}  // namespace deepstamp
