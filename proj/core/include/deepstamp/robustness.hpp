#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "deepstamp/dataio.hpp"

namespace deepstamp::robustness {

/// Spread of a batch of synthesized watermarks (rgb and alpha planes).
struct RandomnessReport {
  /// Mean over image pairs of the per-element RMS difference.
  double mean_pairwise_l2 = 0.0;
  /// Population variance across the batch, averaged over elements.
  double per_pixel_variance = 0.0;
  std::size_t n_samples = 0;  // watermarks measured
  std::size_t n_pairs = 0;    // pairs averaged

  std::string to_json() const;
};

/// All pairs when there are at most `max_pairs`, otherwise a seeded sample.
inline constexpr std::size_t kMaxPairs = 20000;

RandomnessReport randomness(std::span<const Watermark> marks, std::uint64_t seed = 0);

inline constexpr std::size_t kMinAttackSamples = 8;

struct AttackResult {
  Watermark estimated;          // alpha is the estimated matte alpha (not scaled by beta)
  ImageBatch recovered;         // attacker's reconstruction of the clean images
  std::optional<double> residual;  // mean per-image RMS error; needs the clean reference

  std::string to_json() const;
};

/// Mean-estimation removal probe. With a clean reference the per-pixel blend
/// factor is the least-squares slope of stamped on clean (pooled over
/// channels) and the common term is the mean of stamped - (1 - beta*alpha)*clean.
/// Without one, the common term is the deviation of the batch mean from the
/// per-channel median of the mean image, and alpha is that deviation's
/// magnitude normalized to [0,1]. Throws RangeError for fewer than 8 images.
AttackResult mean_estimate_attack(const ImageBatch& stamped, const ImageBatch* clean_ref,
                                  double beta);

/// Per-image RMS difference, averaged over the batch.
double mean_rms_error(const ImageBatch& a, const ImageBatch& b);

}  // namespace deepstamp::robustness
