#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deepstamp/tensor.hpp"

namespace deepstamp {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kNumClasses = 10;

/// N x 3 x H x W images in [0,1] with one label per image.
struct ImageBatch {
  Tensor<float> data;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t height() const { return data.dim(2); }
  std::size_t width() const { return data.dim(3); }
  std::size_t image_elements() const { return data.dim(1) * data.dim(2) * data.dim(3); }

  std::span<const float> image(std::size_t i) const {
    return data.values().subspan(i * image_elements(), image_elements());
  }
  std::span<float> image(std::size_t i) {
    return data.values().subspan(i * image_elements(), image_elements());
  }

  /// Throws if any invariant (value range, label range, N >= 1, layout) is broken.
  void validate(std::size_t num_classes = kNumClasses) const;

  /// Rows at the given indices, in order.
  ImageBatch select(std::span<const std::size_t> indices) const;
  ImageBatch slice(std::size_t begin, std::size_t end) const;
};

ImageBatch concat(std::span<const ImageBatch> batches);

/// Color planes plus alpha matte; both in [0,1].
struct Watermark {
  Tensor<float> rgb;    // [3, H, W]
  Tensor<float> alpha;  // [1, H, W]

  std::size_t height() const { return alpha.dim(1); }
  std::size_t width() const { return alpha.dim(2); }

  void validate() const;

  /// Packs as [4, H, W] (rgb planes then alpha).
  Tensor<float> to_tensor() const;
  static Watermark from_tensor(const Tensor<float>& rgba);

  friend bool operator==(const Watermark&, const Watermark&) = default;
};

struct ParamEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

struct ParamMetadata {
  std::string architecture;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  friend bool operator==(const ParamMetadata&, const ParamMetadata&) = default;
};

/// Named parameter tensors in the architecture's definition order.
struct NetworkParams {
  std::vector<ParamEntry> entries;
  ParamMetadata metadata;

  /// Unique names, value counts match shapes.
  void validate() const;
  const ParamEntry& at(std::string_view name) const;
  ParamEntry& at(std::string_view name);

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

namespace dataio {

inline constexpr std::size_t kCifarRecordBytes = 1 + kImageChannels * kImageSide * kImageSide;

ImageBatch decode_cifar(std::span<const std::uint8_t> bytes);
/// Re-quantizes to 8 bit with round-half-to-even.
std::vector<std::uint8_t> encode_cifar(const ImageBatch& batch);

ImageBatch load_cifar_batch(const std::filesystem::path& path);
void save_cifar_batch(const ImageBatch& batch, const std::filesystem::path& path);

std::uint8_t quantize_pixel(float value) noexcept;
inline float dequantize_pixel(std::uint8_t value) noexcept {
  return static_cast<float>(value) / 255.0f;
}

// RawTensorFile: "DSTN", u8 version=1, u8 dtype=0 (float32), u8 rank,
// u32 dims[rank], float32 payload; all little-endian.
std::vector<std::uint8_t> encode_raw_tensor(const Tensor<float>& tensor);
Tensor<float> decode_raw_tensor(std::span<const std::uint8_t> bytes);
void save_raw_tensor(const Tensor<float>& tensor, const std::filesystem::path& path);
Tensor<float> load_raw_tensor(const std::filesystem::path& path);

/// RGBA PNG or a [4,H,W] RawTensorFile. Sizes must equal expected_side exactly.
Watermark decode_watermark(std::span<const std::uint8_t> bytes,
                           std::size_t expected_side = kImageSide);
Watermark load_watermark(const std::filesystem::path& path,
                         std::size_t expected_side = kImageSide);
std::vector<std::uint8_t> encode_watermark_png(const Watermark& w);
void save_watermark_png(const Watermark& w, const std::filesystem::path& path);

/// PNG helpers (8-bit). Pixels are interleaved, `channels` is 3 or 4.
std::vector<std::uint8_t> encode_png(std::span<const std::uint8_t> pixels, std::size_t width,
                                     std::size_t height, std::size_t channels);

enum class CheckpointErrorCode { bad_magic = 1, bad_version = 2, truncated = 3, malformed = 4 };

class CheckpointError : public FormatError {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& message, std::uint64_t offset)
      : FormatError(message, offset), code_(code) {}
  CheckpointErrorCode code() const noexcept { return code_; }

 private:
  CheckpointErrorCode code_;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

// Checkpoint: "DSCK", u8 version, metadata block (u32 len + architecture id,
// u64 seed, u64 step), u32 entry count, then per entry: u32 name length, name
// bytes, u8 rank, u32 dims[rank], float32 payload; all little-endian.
std::vector<std::uint8_t> encode_checkpoint(const NetworkParams& params);
NetworkParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a over raw bytes, used in dataset manifests.
std::uint64_t checksum(std::span<const std::uint8_t> bytes) noexcept;

}  // namespace dataio
}  // namespace deepstamp
