#include "deepstamp/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "deepstamp/error.hpp"
#include "deepstamp/parallel.hpp"
#include "deepstamp/rng.hpp"

namespace deepstamp::robustness {

namespace {

// Below this transmission (1 - beta*alpha) a pixel carries no usable
// information about the clean image.
constexpr double kMinTransmission = 1e-3;

std::vector<double> flatten(const Watermark& w) {
  std::vector<double> out(w.rgb.data(), w.rgb.data() + w.rgb.size());
  out.insert(out.end(), w.alpha.data(), w.alpha.data() + w.alpha.size());
  return out;
}

double rms_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

std::string RandomnessReport::to_json() const {
  return nlohmann::json{{"mean_pairwise_l2", mean_pairwise_l2},
                        {"per_pixel_variance", per_pixel_variance},
                        {"n_samples", n_samples},
                        {"n_pairs", n_pairs}}
      .dump(2);
}

RandomnessReport randomness(std::span<const Watermark> marks, std::uint64_t seed) {
  if (marks.size() < 2) throw RangeError("randomness needs at least 2 watermarks, got " + std::to_string(marks.size()));
  std::vector<std::vector<double>> flat;
  flat.reserve(marks.size());
  for (const auto& m : marks) {
    m.validate();
    flat.push_back(flatten(m));
    if (flat.back().size() != flat.front().size()) throw DimensionError("watermarks differ in size");
  }
  const std::size_t n = flat.size(), e = flat.front().size();

  RandomnessReport r;
  r.n_samples = n;
  const std::size_t all_pairs = n * (n - 1) / 2;
  double sum = 0.0;
  if (all_pairs <= kMaxPairs) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) sum += rms_diff(flat[i], flat[j]);
    }
    r.n_pairs = all_pairs;
  } else {
    Rng rng(derive_seed(seed, "randomness-pairs"));
    for (std::size_t k = 0; k < kMaxPairs; ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 2));
      if (j >= i) ++j;
      sum += rms_diff(flat[i], flat[j]);
    }
    r.n_pairs = kMaxPairs;
  }
  r.mean_pairwise_l2 = sum / static_cast<double>(r.n_pairs);

  double var_sum = 0.0;
  for (std::size_t k = 0; k < e; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += flat[i][k];
    mean /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (flat[i][k] - mean) * (flat[i][k] - mean);
    var_sum += v / static_cast<double>(n);
  }
  r.per_pixel_variance = var_sum / static_cast<double>(e);
  return r;
}

double mean_rms_error(const ImageBatch& a, const ImageBatch& b) {
  if (a.data.shape() != b.data.shape()) {
    throw DimensionError("shape mismatch: " + shape_to_string(a.data.shape()) + " vs " +
                         shape_to_string(b.data.shape()));
  }
  if (a.size() == 0) throw DimensionError("empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a.image(i), y = b.image(i);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = static_cast<double>(x[k]) - static_cast<double>(y[k]);
      s += d * d;
    }
    total += std::sqrt(s / static_cast<double>(x.size()));
  }
  return total / static_cast<double>(a.size());
}

std::string AttackResult::to_json() const {
  nlohmann::json j;
  j["method"] = "mean-estimate";
  j["alpha_estimate"] = "least-squares slope of stamped on clean when a clean reference is given; "
                        "otherwise normalized deviation magnitude from the batch median";
  j["n_images"] = recovered.size();
  if (residual) {
    j["residual"] = *residual;
  } else {
    j["residual"] = nullptr;
  }
  return j.dump(2);
}

AttackResult mean_estimate_attack(const ImageBatch& stamped, const ImageBatch* clean_ref,
                                  double beta) {
  if (stamped.size() < kMinAttackSamples) {
    throw RangeError("insufficient samples for mean_estimate_attack: need >= " +
                     std::to_string(kMinAttackSamples) + ", got " + std::to_string(stamped.size()));
  }
  if (!(beta >= 0.0 && beta <= 1.0)) throw RangeError("beta must lie in [0,1]");
  if (clean_ref && clean_ref->data.shape() != stamped.data.shape()) {
    throw DimensionError("clean reference " + shape_to_string(clean_ref->data.shape()) +
                         " does not match stamped " + shape_to_string(stamped.data.shape()));
  }
  const std::size_t n = stamped.size(), h = stamped.height(), w = stamped.width();
  const std::size_t plane = h * w, per_image = 3 * plane;
  const float* s = stamped.data.data();
  const float* x = clean_ref ? clean_ref->data.data() : nullptr;

  // a[p] = beta * alpha_hat, c[ch][p] = a * r: the common term.
  std::vector<double> a(plane, 0.0), common(3 * plane, 0.0);
  std::vector<double> mean_s(3 * plane, 0.0), mean_x(3 * plane, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < per_image; ++k) {
      mean_s[k] += s[i * per_image + k];
      if (x) mean_x[k] += x[i * per_image + k];
    }
  }
  for (std::size_t k = 0; k < per_image; ++k) {
    mean_s[k] /= static_cast<double>(n);
    mean_x[k] /= static_cast<double>(n);
  }

  if (x) {
    parallel_for(plane, [&](std::size_t p) {
      double sxy = 0.0, sxx = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t k = c * plane + p;
        for (std::size_t i = 0; i < n; ++i) {
          const double dx = x[i * per_image + k] - mean_x[k];
          sxy += dx * (s[i * per_image + k] - mean_s[k]);
          sxx += dx * dx;
        }
      }
      const double slope = sxx > 1e-12 ? sxy / sxx : 1.0;
      a[p] = std::clamp(1.0 - slope, 0.0, beta);
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t k = c * plane + p;
        common[k] = mean_s[k] - (1.0 - a[p]) * mean_x[k];
      }
    });
  } else {
    std::vector<double> median(3);
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> v(mean_s.begin() + static_cast<std::ptrdiff_t>(c * plane),
                            mean_s.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane));
      std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
      median[c] = v[v.size() / 2];
    }
    double peak = 0.0;
    std::vector<double> mag(plane, 0.0);
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) mag[p] = std::max(mag[p], std::abs(mean_s[c * plane + p] - median[c]));
      peak = std::max(peak, mag[p]);
    }
    for (std::size_t p = 0; p < plane; ++p) {
      a[p] = peak > 0.0 ? beta * mag[p] / peak : 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t k = c * plane + p;
        mean_x[k] = median[c];  // the attacker's stand-in for the clean mean
        common[k] = mean_s[k] - (1.0 - a[p]) * median[c];
      }
    }
  }

  AttackResult out;
  out.estimated.rgb = Tensor<float>({3, h, w}, 0.0f);
  out.estimated.alpha = Tensor<float>({1, h, w}, 0.0f);
  for (std::size_t p = 0; p < plane; ++p) {
    const double alpha = beta > 0.0 ? std::clamp(a[p] / beta, 0.0, 1.0) : 0.0;
    out.estimated.alpha[p] = static_cast<float>(alpha);
    for (std::size_t c = 0; c < 3; ++c) {
      const double rgb = a[p] > 1e-6 ? common[c * plane + p] / a[p] : 0.0;
      out.estimated.rgb[c * plane + p] = static_cast<float>(std::clamp(rgb, 0.0, 1.0));
    }
  }

  out.recovered.data = Tensor<float>(stamped.data.shape());
  out.recovered.labels = stamped.labels;
  float* r = out.recovered.data.data();
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t k = c * plane + p;
        const double t = 1.0 - a[p];
        const double v = t >= kMinTransmission ? (s[i * per_image + k] - common[k]) / t : mean_x[k];
        r[i * per_image + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  });
  if (clean_ref) out.residual = mean_rms_error(out.recovered, *clean_ref);
  return out;
}

}  // namespace deepstamp::robustness
