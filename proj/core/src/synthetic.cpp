#include "deepstamp/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "deepstamp/parallel.hpp"
#include "deepstamp/rng.hpp"

namespace deepstamp::synthetic {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Shape2 {
  int kind;
  double cx, cy, r, angle;
};

double seg_dist(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(px - ax - t * vx, py - ay - t * vy);
}

// Signed distance (negative inside) of the class shape at pixel centre (x, y).
double shape_sd(const Shape2& s, double x, double y) {
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double dx = x - s.cx, dy = y - s.cy;
  const double u = c * dx + sn * dy, v = -sn * dx + c * dy;  // rotated frame
  const double r = s.r;
  switch (s.kind) {
    case 0:  // disk
      return std::hypot(dx, dy) - r;
    case 1: {  // square
      const double qx = std::abs(u) - 0.8 * r, qy = std::abs(v) - 0.8 * r;
      return std::max(qx, qy);
    }
    case 2: {  // triangle
      double d = -1e9;
      for (int k = 0; k < 3; ++k) {
        const double a = s.angle + k * 2.0 * kPi / 3.0;
        d = std::max(d, dx * std::cos(a) + dy * std::sin(a) - 0.5 * r);
      }
      return d;
    }
    case 3:  // ring
      return std::abs(std::hypot(dx, dy) - 0.75 * r) - 0.22 * r;
    case 4:  // plus
      return std::min(std::max(std::abs(u) - 0.25 * r, std::abs(v) - r),
                      std::max(std::abs(v) - 0.25 * r, std::abs(u) - r));
    case 5: {  // X
      const double d1 = seg_dist(u, v, -r, -r, r, r), d2 = seg_dist(u, v, -r, r, r, -r);
      return std::min(d1, d2) - 0.22 * r;
    }
    case 6: {  // horizontal bars
      const double box = std::max(std::abs(u) - r, std::abs(v) - r);
      const double bars = std::abs(std::fmod(v + 10.0 * r, 0.66 * r) - 0.33 * r) - 0.12 * r;
      return std::max(box, bars);
    }
    case 7: {  // vertical bars
      const double box = std::max(std::abs(u) - r, std::abs(v) - r);
      const double bars = std::abs(std::fmod(u + 10.0 * r, 0.66 * r) - 0.33 * r) - 0.12 * r;
      return std::max(box, bars);
    }
    case 8: {  // two disks
      const double d1 = std::hypot(u - 0.6 * r, v) - 0.45 * r;
      const double d2 = std::hypot(u + 0.6 * r, v) - 0.45 * r;
      return std::min(d1, d2);
    }
    default: {  // hollow square
      const double q = std::max(std::abs(u), std::abs(v));
      return std::abs(q - 0.75 * r) - 0.18 * r;
    }
  }
}

double smooth_cover(double sd) { return std::clamp(0.5 - sd, 0.0, 1.0); }

float on_grid(double v) {
  return dataio::dequantize_pixel(dataio::quantize_pixel(static_cast<float>(std::clamp(v, 0.0, 1.0))));
}

void render(float* img, int label, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t side = kImageSide, plane = side * side;
  std::array<double, 3> bg0, bg1, fg;
  for (auto& c : bg0) c = rng.uniform(0.0, 1.0);
  for (std::size_t k = 0; k < 3; ++k) bg1[k] = std::clamp(bg0[k] + rng.uniform(-0.3, 0.3), 0.0, 1.0);
  // Foreground luminance pushed away from the background's.
  const double bg_lum = (bg0[0] + bg0[1] + bg0[2]) / 3.0;
  const double shift = bg_lum > 0.5 ? -rng.uniform(0.3, 0.6) : rng.uniform(0.3, 0.6);
  for (std::size_t k = 0; k < 3; ++k) fg[k] = std::clamp(bg0[k] + shift + rng.uniform(-0.25, 0.25), 0.0, 1.0);
  const double grad_angle = rng.uniform(0.0, 2.0 * kPi);

  Shape2 s{label, rng.uniform(9.0, 23.0), rng.uniform(9.0, 23.0), rng.uniform(5.0, 9.0),
           rng.uniform(-0.4, 0.4)};
  if (label == 2) s.angle = rng.uniform(0.0, 2.0 * kPi);
  const double noise = rng.uniform(0.02, 0.06);

  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double t = std::clamp(0.5 + ((px - 16.0) * std::cos(grad_angle) + (py - 16.0) * std::sin(grad_angle)) / 32.0, 0.0, 1.0);
      const double cover = smooth_cover(shape_sd(s, px, py));
      for (std::size_t k = 0; k < 3; ++k) {
        const double bg = (1.0 - t) * bg0[k] + t * bg1[k];
        const double v = (1.0 - cover) * bg + cover * fg[k] + noise * rng.normal();
        img[k * plane + y * side + x] = on_grid(v);
      }
    }
  }
}

}  // namespace

ImageBatch make_shapes(std::size_t n, std::uint64_t seed) {
  ImageBatch out;
  out.data = Tensor<float>({n, kImageChannels, kImageSide, kImageSide});
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(i % kNumClasses);
  Rng order(derive_seed(seed, "label-order"));
  order.shuffle(out.labels.begin(), out.labels.end());
  const std::size_t per_image = kImageChannels * kImageSide * kImageSide;
  parallel_for(n, [&](std::size_t i) {
    render(out.data.data() + i * per_image, out.labels[i], derive_seed(seed, static_cast<std::uint64_t>(i)));
  });
  return out;
}

Watermark builtin_logo(std::size_t side) {
  Watermark w;
  w.rgb = Tensor<float>({3, side, side});
  w.alpha = Tensor<float>({1, side, side});
  const double c = static_cast<double>(side) / 2.0, unit = static_cast<double>(side) / 32.0;
  const std::size_t plane = side * side;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double px = static_cast<double>(x) + 0.5 - c, py = static_cast<double>(y) + 0.5 - c;
      const double ring = std::abs(std::hypot(px, py) - 10.0 * unit) - 1.6 * unit;
      const double bar = std::max(std::abs(px + py) / std::sqrt(2.0) - 1.6 * unit, std::hypot(px, py) - 9.0 * unit);
      const double sd = std::min(ring, bar);
      const double a = std::clamp(0.5 - sd / unit, 0.0, 1.0);
      const std::size_t p = y * side + x;
      w.alpha[p] = a;
      const double t = (py / c + 1.0) / 2.0;  // top-to-bottom tint
      w.rgb[p] = static_cast<float>(0.95 - 0.15 * t);
      w.rgb[plane + p] = static_cast<float>(0.85 - 0.45 * t);
      w.rgb[2 * plane + p] = static_cast<float>(0.25 + 0.55 * t);
    }
  }
  return w;
}

}  // namespace deepstamp::synthetic
