#pragma once

// Batched layer kernels. Images are NCHW row-major; every function handles
// the whole batch. Backward kernels accumulate (+=) into parameter gradients
// and overwrite input gradients.

#include <cstddef>
#include <cstdint>

namespace deepstamp::nets::kernels {

struct ConvGeometry {
  std::size_t in_channels, in_h, in_w;
  std::size_t out_channels, out_h, out_w;
  std::size_t kernel, stride, padding;
};

/// Columns [C*k*k, grid_h*grid_w] of a [C, H, W] image sampled on a conv grid.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t grid_h,
            std::size_t grid_w, T* columns);

/// Adjoint of im2col: scatters columns back, accumulating into image.
template <typename T>
void col2im(const T* columns, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t grid_h,
            std::size_t grid_w, T* image);

// weight [Cout, Cin, k, k]
template <typename T>
void conv_forward(const ConvGeometry& g, std::size_t batch, const T* in, const T* weight,
                  const T* bias, T* out);
template <typename T>
void conv_backward(const ConvGeometry& g, std::size_t batch, const T* in, const T* weight,
                   const T* grad_out, T* grad_weight, T* grad_bias, T* grad_in);

// weight [Cin, Cout, k, k]; geometry describes the transposed layer's input/output.
template <typename T>
void transposed_conv_forward(const ConvGeometry& g, std::size_t batch, const T* in,
                             const T* weight, const T* bias, T* out);
template <typename T>
void transposed_conv_backward(const ConvGeometry& g, std::size_t batch, const T* in,
                              const T* weight, const T* grad_out, T* grad_weight, T* grad_bias,
                              T* grad_in);

// weight [out, in]
template <typename T>
void dense_forward(std::size_t batch, std::size_t in_features, std::size_t out_features,
                   const T* in, const T* weight, const T* bias, T* out);
template <typename T>
void dense_backward(std::size_t batch, std::size_t in_features, std::size_t out_features,
                    const T* in, const T* weight, const T* grad_out, T* grad_weight, T* grad_bias,
                    T* grad_in);

template <typename T>
void maxpool_forward(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                     std::size_t window, std::size_t stride, std::size_t out_h, std::size_t out_w,
                     const T* in, T* out, std::uint32_t* argmax);

}  // namespace deepstamp::nets::kernels
