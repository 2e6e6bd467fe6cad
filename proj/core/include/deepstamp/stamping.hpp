#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepstamp/dataio.hpp"

namespace deepstamp {

enum class StampScheme { static_mark, opacity, displacement, learned };

const char* to_string(StampScheme scheme) noexcept;
/// Accepts "static", "opacity", "displacement", "learned"; throws SpecError otherwise.
StampScheme parse_scheme(std::string_view name);

struct OpacityRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct DisplacementRange {
  int dx_max = 4;
  int dy_max = 4;
};

struct StampSpec {
  double blend = 0.5;  // beta
  StampScheme scheme = StampScheme::static_mark;
  /// Unset means the default (0.3*beta, beta).
  std::optional<OpacityRange> opacity_range;
  DisplacementRange displacement_range;
  std::uint64_t rng_seed = 0;

  OpacityRange resolved_opacity_range() const;
  /// Checks ranges against the image size the spec is applied to.
  void validate(std::size_t height, std::size_t width) const;
};

struct Offset {
  int dx = 0;
  int dy = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

namespace stamping {

/// out = (1 - beta*alpha) * x + beta*alpha*rgb, per pixel, clamped to [0,1].
ImageBatch stamp(const ImageBatch& x, const Watermark& w, double beta);

/// Same watermark for every image.
ImageBatch stamp_static(const ImageBatch& x, const Watermark& w, const StampSpec& spec);

struct OpacityResult {
  ImageBatch images;
  std::vector<double> opacities;
};
/// Per-image blend drawn uniformly from the opacity range; stream id = image index.
OpacityResult stamp_opacity(const ImageBatch& x, const Watermark& w, const StampSpec& spec);

struct DisplacementResult {
  ImageBatch images;
  std::vector<Offset> offsets;
};
/// Per-image translation of the watermark; uncovered pixels get alpha 0.
DisplacementResult stamp_displaced(const ImageBatch& x, const Watermark& w, const StampSpec& spec);

/// Image i composited with its own synthesized watermark.
ImageBatch stamp_learned(const ImageBatch& x, std::span<const Watermark> per_image, double beta);

/// Watermark shifted by (dx, dy); content moves right/down for positive offsets.
Watermark translate(const Watermark& w, Offset offset);

std::vector<double> draw_opacities(const StampSpec& spec, std::size_t count);
std::vector<Offset> draw_offsets(const StampSpec& spec, std::size_t count);

}  // namespace stamping
}  // namespace deepstamp
