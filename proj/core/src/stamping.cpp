#include "deepstamp/stamping.hpp"

#include <algorithm>
#include <cmath>

#include "deepstamp/parallel.hpp"
#include "deepstamp/rng.hpp"

namespace deepstamp {

const char* to_string(StampScheme scheme) noexcept {
  switch (scheme) {
    case StampScheme::static_mark: return "static";
    case StampScheme::opacity: return "opacity";
    case StampScheme::displacement: return "displacement";
    case StampScheme::learned: return "learned";
  }
  return "unknown";
}

StampScheme parse_scheme(std::string_view name) {
  if (name == "static") return StampScheme::static_mark;
  if (name == "opacity") return StampScheme::opacity;
  if (name == "displacement") return StampScheme::displacement;
  if (name == "learned") return StampScheme::learned;
  throw SpecError("unknown stamping scheme '" + std::string(name) + "'");
}

OpacityRange StampSpec::resolved_opacity_range() const {
  if (opacity_range) return *opacity_range;
  return {0.3 * blend, blend};
}

void StampSpec::validate(std::size_t height, std::size_t width) const {
  if (!(blend >= 0.0 && blend <= 1.0)) {
    throw SpecError("blend factor " + std::to_string(blend) + " outside [0,1]");
  }
  const auto range = resolved_opacity_range();
  if (!(range.lo >= 0.0 && range.hi <= 1.0)) {
    throw SpecError("opacity range must lie within [0,1]");
  }
  if (range.lo > range.hi) {
    throw SpecError("opacity range lo " + std::to_string(range.lo) + " > hi " +
                    std::to_string(range.hi));
  }
  const auto& d = displacement_range;
  if (d.dx_max < 0 || d.dy_max < 0) throw SpecError("displacement range must be non-negative");
  if (static_cast<std::size_t>(d.dx_max) >= width || static_cast<std::size_t>(d.dy_max) >= height) {
    throw SpecError("displacement range (" + std::to_string(d.dx_max) + "," +
                    std::to_string(d.dy_max) + ") must be smaller than image size " +
                    std::to_string(width) + "x" + std::to_string(height));
  }
}

namespace stamping {

namespace {

void check_dims(const ImageBatch& x, const Watermark& w) {
  if (x.data.rank() != 4 || x.data.dim(1) != 3) {
    throw DimensionError("stamping needs [N,3,H,W] images, got " + shape_to_string(x.data.shape()));
  }
  if (w.rgb.rank() != 3 || w.alpha.rank() != 3 || w.height() != x.height() ||
      w.width() != x.width() || w.rgb.dim(1) != w.height() || w.rgb.dim(2) != w.width()) {
    throw DimensionError("watermark " + shape_to_string(w.rgb.shape()) + " does not match images " +
                         shape_to_string(x.data.shape()));
  }
}

void check_beta(double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw SpecError("blend factor " + std::to_string(beta) + " outside [0,1]");
  }
}

// Composites one image in place into `out`.
void composite(std::span<const float> x, const Watermark& w, float beta, std::span<float> out) {
  const std::size_t plane = w.alpha.size();
  const float* a = w.alpha.data();
  const float* rgb = w.rgb.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      const float k = beta * a[p];
      const float v = (1.0f - k) * x[c * plane + p] + k * rgb[c * plane + p];
      out[c * plane + p] = std::clamp(v, 0.0f, 1.0f);
    }
  }
}

}  // namespace

ImageBatch stamp(const ImageBatch& x, const Watermark& w, double beta) {
  check_dims(x, w);
  check_beta(beta);
  ImageBatch out{Tensor<float>(x.data.shape()), x.labels};
  const float b = static_cast<float>(beta);
  parallel_for(x.size(), [&](std::size_t i) { composite(x.image(i), w, b, out.image(i)); });
  return out;
}

ImageBatch stamp_static(const ImageBatch& x, const Watermark& w, const StampSpec& spec) {
  spec.validate(x.height(), x.width());
  return stamp(x, w, spec.blend);
}

std::vector<double> draw_opacities(const StampSpec& spec, std::size_t count) {
  const auto range = spec.resolved_opacity_range();
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(spec.rng_seed, static_cast<std::uint64_t>(i)));
    out[i] = range.lo + (range.hi - range.lo) * rng.uniform01();
  }
  return out;
}

std::vector<Offset> draw_offsets(const StampSpec& spec, std::size_t count) {
  const auto& d = spec.displacement_range;
  std::vector<Offset> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(spec.rng_seed, static_cast<std::uint64_t>(i)));
    out[i].dx = static_cast<int>(rng.uniform_int(-d.dx_max, d.dx_max));
    out[i].dy = static_cast<int>(rng.uniform_int(-d.dy_max, d.dy_max));
  }
  return out;
}

OpacityResult stamp_opacity(const ImageBatch& x, const Watermark& w, const StampSpec& spec) {
  check_dims(x, w);
  spec.validate(x.height(), x.width());
  OpacityResult result{ImageBatch{Tensor<float>(x.data.shape()), x.labels},
                       draw_opacities(spec, x.size())};
  parallel_for(x.size(), [&](std::size_t i) {
    composite(x.image(i), w, static_cast<float>(result.opacities[i]), result.images.image(i));
  });
  return result;
}

Watermark translate(const Watermark& w, Offset offset) {
  const std::size_t h = w.height(), wd = w.width(), plane = h * wd;
  Watermark out{Tensor<float>(w.rgb.shape(), 0.0f), Tensor<float>(w.alpha.shape(), 0.0f)};
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(wd);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    const std::ptrdiff_t sy = y - offset.dy;
    if (sy < 0 || sy >= H) continue;
    for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
      const std::ptrdiff_t sx = xx - offset.dx;
      if (sx < 0 || sx >= W) continue;
      const auto dst = static_cast<std::size_t>(y * W + xx);
      const auto src = static_cast<std::size_t>(sy * W + sx);
      out.alpha[dst] = w.alpha[src];
      for (std::size_t c = 0; c < 3; ++c) out.rgb[c * plane + dst] = w.rgb[c * plane + src];
    }
  }
  return out;
}

DisplacementResult stamp_displaced(const ImageBatch& x, const Watermark& w, const StampSpec& spec) {
  check_dims(x, w);
  spec.validate(x.height(), x.width());
  DisplacementResult result{ImageBatch{Tensor<float>(x.data.shape()), x.labels},
                            draw_offsets(spec, x.size())};
  const float b = static_cast<float>(spec.blend);
  parallel_for(x.size(), [&](std::size_t i) {
    const Watermark shifted = translate(w, result.offsets[i]);
    composite(x.image(i), shifted, b, result.images.image(i));
  });
  return result;
}

ImageBatch stamp_learned(const ImageBatch& x, std::span<const Watermark> per_image, double beta) {
  check_beta(beta);
  if (per_image.size() != x.size()) {
    throw DimensionError("stamp_learned got " + std::to_string(per_image.size()) +
                         " watermarks for " + std::to_string(x.size()) + " images");
  }
  for (const auto& w : per_image) check_dims(x, w);
  ImageBatch out{Tensor<float>(x.data.shape()), x.labels};
  const float b = static_cast<float>(beta);
  parallel_for(x.size(), [&](std::size_t i) { composite(x.image(i), per_image[i], b, out.image(i)); });
  return out;
}

}  // namespace stamping
}  // namespace deepstamp
