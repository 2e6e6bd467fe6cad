#include "layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <utility>
#include <vector>

namespace deepstamp::nets::kernels {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const Mat<T>>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using StridedC = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using StridedM = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;

// Column buffers are capped at this many elements; larger batches are chunked.
constexpr std::size_t kColumnBudget = std::size_t{1} << 23;

std::size_t chunk_images(std::size_t rows, std::size_t cols_per_image, std::size_t batch) {
  const std::size_t per = std::max<std::size_t>(1, rows * cols_per_image);
  return std::clamp<std::size_t>(kColumnBudget / per, 1, std::max<std::size_t>(batch, 1));
}

// Output columns [lo, hi) whose input column ox*S - P + k falls inside [0, W).
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t grid, std::ptrdiff_t W,
                                                              std::ptrdiff_t S, std::ptrdiff_t P,
                                                              std::ptrdiff_t k) {
  const std::ptrdiff_t off = P - k;  // need ox*S >= off and ox*S < W + off
  const std::ptrdiff_t lo = off <= 0 ? 0 : (off + S - 1) / S;
  const std::ptrdiff_t hi = W + off <= 0 ? 0 : (W + off + S - 1) / S;
  return {std::min(lo, grid), std::clamp(hi, std::min(lo, grid), grid)};
}

// im2col with an explicit row stride so several images can share one buffer.
template <typename T>
void im2col_ld(const T* image, std::size_t channels, std::size_t h, std::size_t w,
               std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t grid_h,
               std::size_t grid_w, T* columns, std::size_t ld) {
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const auto P = static_cast<std::ptrdiff_t>(padding), S = static_cast<std::ptrdiff_t>(stride);
  const auto GW = static_cast<std::ptrdiff_t>(grid_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image + c * h * w;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx, ++row) {
        T* dst = columns + row * ld;
        const auto k = static_cast<std::ptrdiff_t>(kx);
        const auto [lo, hi] = valid_range(GW, W, S, P, k);
        for (std::size_t oy = 0; oy < grid_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * S - P + static_cast<std::ptrdiff_t>(ky);
          T* out_row = dst + oy * grid_w;
          if (iy < 0 || iy >= H) {
            std::fill(out_row, out_row + grid_w, T(0));
            continue;
          }
          const T* src = plane + iy * W;
          std::fill(out_row, out_row + lo, T(0));
          if (S == 1) {
            std::copy(src + lo - P + k, src + hi - P + k, out_row + lo);
          } else {
            for (std::ptrdiff_t ox = lo; ox < hi; ++ox) out_row[ox] = src[ox * S - P + k];
          }
          std::fill(out_row + hi, out_row + GW, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_ld(const T* columns, std::size_t channels, std::size_t h, std::size_t w,
               std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t grid_h,
               std::size_t grid_w, T* image, std::size_t ld) {
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const auto P = static_cast<std::ptrdiff_t>(padding), S = static_cast<std::ptrdiff_t>(stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = image + c * h * w;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx, ++row) {
        const T* src = columns + row * ld;
        const auto k = static_cast<std::ptrdiff_t>(kx);
        const auto [lo, hi] = valid_range(static_cast<std::ptrdiff_t>(grid_w), W, S, P, k);
        for (std::size_t oy = 0; oy < grid_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * S - P + static_cast<std::ptrdiff_t>(ky);
          if (iy < 0 || iy >= H) continue;
          T* dst = plane + iy * W;
          const T* in_row = src + oy * grid_w;
          for (std::ptrdiff_t ox = lo; ox < hi; ++ox) dst[ox * S - P + k] += in_row[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t grid_h,
            std::size_t grid_w, T* columns) {
  im2col_ld(image, channels, h, w, kernel, stride, padding, grid_h, grid_w, columns,
            grid_h * grid_w);
}

template <typename T>
void col2im(const T* columns, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t grid_h,
            std::size_t grid_w, T* image) {
  col2im_ld(columns, channels, h, w, kernel, stride, padding, grid_h, grid_w, image,
            grid_h * grid_w);
}

template <typename T>
void conv_forward(const ConvGeometry& g, std::size_t batch, const T* in, const T* weight,
                  const T* bias, T* out) {
  const std::size_t rows = g.in_channels * g.kernel * g.kernel;
  const std::size_t grid = g.out_h * g.out_w;
  const std::size_t in_size = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_size = g.out_channels * grid;
  const std::size_t chunk = chunk_images(rows, grid, batch);
  const MapC<T> wmat(weight, static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(rows));
  std::vector<T> cols(rows * grid * chunk);
  Mat<T> result;
  for (std::size_t first = 0; first < batch; first += chunk) {
    const std::size_t n = std::min(chunk, batch - first);
    const std::size_t ld = n * grid;
    for (std::size_t i = 0; i < n; ++i) {
      im2col_ld(in + (first + i) * in_size, g.in_channels, g.in_h, g.in_w, g.kernel, g.stride,
                g.padding, g.out_h, g.out_w, cols.data() + i * grid, ld);
    }
    const MapC<T> cmat(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ld));
    result.noalias() = wmat * cmat;
    for (std::size_t i = 0; i < n; ++i) {
      T* dst = out + (first + i) * out_size;
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const T b = bias ? bias[co] : T(0);
        const T* src = result.data() + co * ld + i * grid;
        for (std::size_t q = 0; q < grid; ++q) dst[co * grid + q] = src[q] + b;
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvGeometry& g, std::size_t batch, const T* in, const T* weight,
                   const T* grad_out, T* grad_weight, T* grad_bias, T* grad_in) {
  const std::size_t rows = g.in_channels * g.kernel * g.kernel;
  const std::size_t grid = g.out_h * g.out_w;
  const std::size_t in_size = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_size = g.out_channels * grid;
  const std::size_t chunk = chunk_images(rows, grid, batch);
  const auto R = static_cast<Eigen::Index>(rows), Co = static_cast<Eigen::Index>(g.out_channels);
  const MapC<T> wmat(weight, Co, R);
  MapM<T> gw(grad_weight, Co, R);
  std::vector<T> cols(rows * grid * chunk);
  Mat<T> dout, dcols;
  if (grad_in) std::fill(grad_in, grad_in + batch * in_size, T(0));
  for (std::size_t first = 0; first < batch; first += chunk) {
    const std::size_t n = std::min(chunk, batch - first);
    const std::size_t ld = n * grid;
    dout.resize(Co, static_cast<Eigen::Index>(ld));
    for (std::size_t i = 0; i < n; ++i) {
      im2col_ld(in + (first + i) * in_size, g.in_channels, g.in_h, g.in_w, g.kernel, g.stride,
                g.padding, g.out_h, g.out_w, cols.data() + i * grid, ld);
      const T* src = grad_out + (first + i) * out_size;
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        std::copy(src + co * grid, src + (co + 1) * grid, dout.data() + co * ld + i * grid);
      }
    }
    const MapC<T> cmat(cols.data(), R, static_cast<Eigen::Index>(ld));
    gw.noalias() += dout * cmat.transpose();
    if (grad_bias) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        grad_bias[co] += dout.row(static_cast<Eigen::Index>(co)).sum();
      }
    }
    if (grad_in) {
      dcols.noalias() = wmat.transpose() * dout;
      for (std::size_t i = 0; i < n; ++i) {
        col2im_ld(dcols.data() + i * grid, g.in_channels, g.in_h, g.in_w, g.kernel, g.stride,
                  g.padding, g.out_h, g.out_w, grad_in + (first + i) * in_size, ld);
      }
    }
  }
}

// A transposed conv with geometry (in -> out) is the adjoint of a conv from
// out (as the image) to in (as the grid). Columns index the small input grid.
template <typename T>
void transposed_conv_forward(const ConvGeometry& g, std::size_t batch, const T* in,
                             const T* weight, const T* bias, T* out) {
  const std::size_t rows = g.out_channels * g.kernel * g.kernel;
  const std::size_t grid = g.in_h * g.in_w;
  const std::size_t in_size = g.in_channels * grid;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t out_size = g.out_channels * out_plane;
  const std::size_t chunk = chunk_images(rows, grid, batch);
  const MapC<T> wmat(weight, static_cast<Eigen::Index>(g.in_channels), static_cast<Eigen::Index>(rows));
  Mat<T> xin, cols;
  for (std::size_t first = 0; first < batch; first += chunk) {
    const std::size_t n = std::min(chunk, batch - first);
    const std::size_t ld = n * grid;
    xin.resize(static_cast<Eigen::Index>(g.in_channels), static_cast<Eigen::Index>(ld));
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = in + (first + i) * in_size;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        std::copy(src + c * grid, src + (c + 1) * grid, xin.data() + c * ld + i * grid);
      }
    }
    cols.noalias() = wmat.transpose() * xin;
    for (std::size_t i = 0; i < n; ++i) {
      T* dst = out + (first + i) * out_size;
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        std::fill(dst + co * out_plane, dst + (co + 1) * out_plane, bias ? bias[co] : T(0));
      }
      col2im_ld(cols.data() + i * grid, g.out_channels, g.out_h, g.out_w, g.kernel, g.stride,
                g.padding, g.in_h, g.in_w, dst, ld);
    }
  }
}

template <typename T>
void transposed_conv_backward(const ConvGeometry& g, std::size_t batch, const T* in,
                              const T* weight, const T* grad_out, T* grad_weight, T* grad_bias,
                              T* grad_in) {
  const std::size_t rows = g.out_channels * g.kernel * g.kernel;
  const std::size_t grid = g.in_h * g.in_w;
  const std::size_t in_size = g.in_channels * grid;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t out_size = g.out_channels * out_plane;
  const std::size_t chunk = chunk_images(rows, grid, batch);
  const auto Ci = static_cast<Eigen::Index>(g.in_channels), R = static_cast<Eigen::Index>(rows);
  const MapC<T> wmat(weight, Ci, R);
  MapM<T> gw(grad_weight, Ci, R);
  std::vector<T> cols(rows * grid * chunk);
  Mat<T> xin, dx;
  for (std::size_t first = 0; first < batch; first += chunk) {
    const std::size_t n = std::min(chunk, batch - first);
    const std::size_t ld = n * grid;
    xin.resize(Ci, static_cast<Eigen::Index>(ld));
    for (std::size_t i = 0; i < n; ++i) {
      const T* go = grad_out + (first + i) * out_size;
      im2col_ld(go, g.out_channels, g.out_h, g.out_w, g.kernel, g.stride, g.padding, g.in_h,
                g.in_w, cols.data() + i * grid, ld);
      const T* src = in + (first + i) * in_size;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        std::copy(src + c * grid, src + (c + 1) * grid, xin.data() + c * ld + i * grid);
      }
      if (grad_bias) {
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          T s = 0;
          for (std::size_t q = 0; q < out_plane; ++q) s += go[co * out_plane + q];
          grad_bias[co] += s;
        }
      }
    }
    const MapC<T> cmat(cols.data(), R, static_cast<Eigen::Index>(ld));
    gw.noalias() += xin * cmat.transpose();
    if (grad_in) {
      dx.noalias() = wmat * cmat;
      for (std::size_t i = 0; i < n; ++i) {
        T* dst = grad_in + (first + i) * in_size;
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          const T* src = dx.data() + c * ld + i * grid;
          std::copy(src, src + grid, dst + c * grid);
        }
      }
    }
  }
}

template <typename T>
void dense_forward(std::size_t batch, std::size_t in_features, std::size_t out_features,
                   const T* in, const T* weight, const T* bias, T* out) {
  const auto N = static_cast<Eigen::Index>(batch), I = static_cast<Eigen::Index>(in_features),
             O = static_cast<Eigen::Index>(out_features);
  const MapC<T> x(in, N, I);
  const MapC<T> w(weight, O, I);
  MapM<T> y(out, N, O);
  y.noalias() = x * w.transpose();
  if (bias) {
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias, O);
    y.rowwise() += b;
  }
}

template <typename T>
void dense_backward(std::size_t batch, std::size_t in_features, std::size_t out_features,
                    const T* in, const T* weight, const T* grad_out, T* grad_weight, T* grad_bias,
                    T* grad_in) {
  const auto N = static_cast<Eigen::Index>(batch), I = static_cast<Eigen::Index>(in_features),
             O = static_cast<Eigen::Index>(out_features);
  const MapC<T> x(in, N, I);
  const MapC<T> w(weight, O, I);
  const MapC<T> dy(grad_out, N, O);
  MapM<T> gw(grad_weight, O, I);
  gw.noalias() += dy.transpose() * x;
  if (grad_bias) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(grad_bias, O);
    gb += dy.colwise().sum();
  }
  if (grad_in) {
    MapM<T> dx(grad_in, N, I);
    dx.noalias() = dy * w;
  }
}

template <typename T>
void maxpool_forward(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                     std::size_t window, std::size_t stride, std::size_t out_h, std::size_t out_w,
                     const T* in, T* out, std::uint32_t* argmax) {
  const std::size_t plane = h * w, out_plane = out_h * out_w;
  for (std::size_t nc = 0; nc < batch * channels; ++nc) {
    const T* src = in + nc * plane;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool first = true;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (oy * stride + ky) * w + ox * stride + kx;
            if (first || src[idx] > best) {
              best = src[idx];
              best_idx = idx;
              first = false;
            }
          }
        }
        out[nc * out_plane + oy * out_w + ox] = best;
        argmax[nc * out_plane + oy * out_w + ox] = static_cast<std::uint32_t>(nc * plane + best_idx);
      }
    }
  }
}

#define DEEPSTAMP_INSTANTIATE(T)                                                                 \
  template void im2col<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t,          \
                          std::size_t, std::size_t, std::size_t, std::size_t, T*);               \
  template void col2im<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t,          \
                          std::size_t, std::size_t, std::size_t, std::size_t, T*);               \
  template void conv_forward<T>(const ConvGeometry&, std::size_t, const T*, const T*, const T*,  \
                                T*);                                                             \
  template void conv_backward<T>(const ConvGeometry&, std::size_t, const T*, const T*, const T*, \
                                 T*, T*, T*);                                                    \
  template void transposed_conv_forward<T>(const ConvGeometry&, std::size_t, const T*, const T*, \
                                           const T*, T*);                                        \
  template void transposed_conv_backward<T>(const ConvGeometry&, std::size_t, const T*,          \
                                            const T*, const T*, T*, T*, T*);                     \
  template void dense_forward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,      \
                                 const T*, T*);                                                  \
  template void dense_backward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,     \
                                  const T*, T*, T*, T*);                                         \
  template void maxpool_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t,           \
                                   std::size_t, std::size_t, std::size_t, std::size_t, const T*, \
                                   T*, std::uint32_t*);

DEEPSTAMP_INSTANTIATE(float)
DEEPSTAMP_INSTANTIATE(double)

#undef DEEPSTAMP_INSTANTIATE

}  // namespace deepstamp::nets::kernels
