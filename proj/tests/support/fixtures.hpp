#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "deepstamp/dataio.hpp"
#include "deepstamp/rng.hpp"

namespace deepstamp::testing {

// Images on the 8-bit grid so that CIFAR round trips are exact.
inline ImageBatch random_batch(std::size_t n, std::uint64_t seed, std::size_t side = kImageSide,
                               bool quantized = true) {
  Rng rng(seed);
  ImageBatch b;
  b.data = Tensor<float>({n, kImageChannels, side, side});
  for (auto& v : b.data.values()) {
    v = quantized ? dataio::dequantize_pixel(static_cast<std::uint8_t>(rng.uniform_int(0, 255)))
                  : static_cast<float>(rng.uniform01());
  }
  b.labels.resize(n);
  for (auto& l : b.labels) l = static_cast<int>(rng.uniform_int(0, kNumClasses - 1));
  return b;
}

inline Watermark random_mark(std::uint64_t seed, std::size_t side = kImageSide) {
  Rng rng(seed);
  Watermark w;
  w.rgb = Tensor<float>({3, side, side});
  w.alpha = Tensor<float>({1, side, side});
  for (auto& v : w.rgb.values()) v = static_cast<float>(rng.uniform01());
  for (auto& v : w.alpha.values()) v = static_cast<float>(rng.uniform01());
  return w;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("deepstamp-" + tag + "-" + std::to_string(Rng(fnv1a(tag) ^ reinterpret_cast<std::uintptr_t>(this)).next_u64()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace deepstamp::testing
