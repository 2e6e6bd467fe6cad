#include <png.h>

#include <cstring>

#include "deepstamp/dataio.hpp"

namespace deepstamp::dataio {

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

bool looks_like_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0;
}

void check_side(std::size_t width, std::size_t height, std::size_t expected) {
  if (width != expected || height != expected) {
    throw DimensionError("watermark is " + std::to_string(width) + "x" + std::to_string(height) +
                         " but images are " + std::to_string(expected) + "x" +
                         std::to_string(expected) + "; resize it offline");
  }
}

Watermark decode_png_watermark(std::span<const std::uint8_t> bytes, std::size_t expected_side) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("invalid PNG: " + msg, 0);
  }
  if ((image.format & PNG_FORMAT_FLAG_ALPHA) == 0) {
    png_image_free(&image);
    throw FormatError("watermark PNG has no alpha channel (RGBA required)", 0);
  }
  const std::size_t width = image.width, height = image.height;
  if (width != expected_side || height != expected_side) {
    png_image_free(&image);
    check_side(width, height, expected_side);
  }
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("invalid PNG: " + msg, 0);
  }
  const std::size_t plane = width * height;
  Watermark w{Tensor<float>({3, height, width}), Tensor<float>({1, height, width})};
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) w.rgb[c * plane + p] = dequantize_pixel(pixels[4 * p + c]);
    w.alpha[p] = dequantize_pixel(pixels[4 * p + 3]);
  }
  return w;
}

}  // namespace

Watermark decode_watermark(std::span<const std::uint8_t> bytes, std::size_t expected_side) {
  if (looks_like_png(bytes)) return decode_png_watermark(bytes, expected_side);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "DSTN", 4) == 0) {
    const auto t = decode_raw_tensor(bytes);
    if (t.rank() != 3 || t.dim(0) != 4) {
      if (t.rank() == 3 && t.dim(0) == 3) {
        throw FormatError("watermark tensor has no alpha channel (shape " +
                          shape_to_string(t.shape()) + ")");
      }
      throw DimensionError("watermark tensor must be [4,H,W], got " + shape_to_string(t.shape()));
    }
    check_side(t.dim(2), t.dim(1), expected_side);
    auto w = Watermark::from_tensor(t);
    w.validate();
    return w;
  }
  throw FormatError("watermark is neither PNG nor a DSTN tensor", 0);
}

Watermark load_watermark(const std::filesystem::path& path, std::size_t expected_side) {
  return decode_watermark(read_file(path), expected_side);
}

std::vector<std::uint8_t> encode_png(std::span<const std::uint8_t> pixels, std::size_t width,
                                     std::size_t height, std::size_t channels) {
  if (channels != 3 && channels != 4) throw DimensionError("PNG channels must be 3 or 4");
  if (pixels.size() != width * height * channels) throw DimensionError("PNG pixel buffer size");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_watermark_png(const Watermark& w) {
  w.validate();
  const std::size_t h = w.height(), wd = w.width(), plane = h * wd;
  std::vector<std::uint8_t> pixels(plane * 4);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) pixels[4 * p + c] = quantize_pixel(w.rgb[c * plane + p]);
    pixels[4 * p + 3] = quantize_pixel(w.alpha[p]);
  }
  return encode_png(pixels, wd, h, 4);
}

void save_watermark_png(const Watermark& w, const std::filesystem::path& path) {
  write_file_atomic(path, encode_watermark_png(w));
}

}  // namespace deepstamp::dataio
