#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "deepstamp/error.hpp"
#include "deepstamp/tensor.hpp"

namespace deepstamp::detail {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

/// Bounds-checked little-endian reader; every overrun is a FormatError at the offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

  bool magic(const char (&expected)[4]) {
    if (remaining() < 4 || std::memcmp(bytes_.data(), expected, 4) != 0) return false;
    pos_ += 4;
    return true;
  }

  std::uint8_t u8() { return take<std::uint8_t>(); }
  std::uint32_t u32() { return take<std::uint32_t>(); }
  std::uint64_t u64() { return take<std::uint64_t>(); }

  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  /// Element count for `shape`, rejected before allocation if the payload cannot fit.
  std::size_t checked_count(const Shape& shape, std::size_t elem_bytes) const {
    std::size_t count = 1;
    for (std::size_t d : shape) {
      if (d != 0 && count > std::numeric_limits<std::size_t>::max() / d) {
        throw FormatError("tensor dimensions overflow", pos_);
      }
      count *= d;
    }
    if (count > remaining() / elem_bytes) {
      throw FormatError("payload of " + std::to_string(count) + " elements exceeds remaining " +
                            std::to_string(remaining()) + " bytes",
                        bytes_.size());
    }
    return count;
  }

  void f32_array(std::span<float> out) {
    need(out.size() * sizeof(float));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(float));
    pos_ += out.size() * sizeof(float);
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw FormatError("unexpected end of data (needed " + std::to_string(n) + " bytes)",
                        bytes_.size());
    }
  }

  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32_array(std::span<const float> v) { bytes(v.data(), v.size() * sizeof(float)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

}  // namespace deepstamp::detail
