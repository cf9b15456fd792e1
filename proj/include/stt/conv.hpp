// SPDX-License-Identifier: Apache-2.0
//
// Direct 2-D convolution and average pooling on H x W x C feature maps.

#pragma once

#include <cstddef>
#include <string>

#include "stt/tensor.hpp"

namespace stt {

struct ConvGeometry {
  std::size_t in_h, in_w, in_c;
  std::size_t out_h, out_w, out_c;
  std::size_t kernel, stride, pad;
};

/// Validates x: H x W x Cin, kernels: K x K x Cin x Cout, bias: Cout.
/// Zero padding of K/2 on every side; K must be odd.
inline ConvGeometry conv_geometry(const Tensor& x, const Tensor& kernels,
                                  const Tensor& bias, std::size_t stride) {
  if (x.order() != 3)
    throw ShapeError("conv2d: input must be H x W x C, got " +
                     shape_string(x.shape()));
  if (kernels.order() != 4)
    throw ShapeError("conv2d: kernels must be K x K x Cin x Cout, got " +
                     shape_string(kernels.shape()));
  const auto& ks = kernels.shape();
  if (ks[0] != ks[1] || ks[0] % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     shape_string(ks));
  if (ks[2] != x.shape()[2])
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[2]) +
                     " input channels, input has " +
                     std::to_string(x.shape()[2]));
  if (bias.order() != 1 || bias.size() != ks[3])
    throw ShapeError("conv2d: bias must have length " + std::to_string(ks[3]) +
                     ", got " + shape_string(bias.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.in_h = x.shape()[0];
  g.in_w = x.shape()[1];
  g.in_c = x.shape()[2];
  g.kernel = ks[0];
  g.out_c = ks[3];
  g.stride = stride;
  g.pad = g.kernel / 2;
  g.out_h = (g.in_h + 2 * g.pad - g.kernel) / stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.kernel) / stride + 1;
  return g;
}

/// out(oh, ow, co) = [sum over ci, kh, kw in that nesting order of
///   x(oh*s + kh - p, ow*s + kw - p, ci) * k(kh, kw, ci, co)] + bias(co),
/// with out-of-frame input taken as zero.
inline Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
                     std::size_t stride = 1) {
  const ConvGeometry g = conv_geometry(x, kernels, bias, stride);
  Tensor out({g.out_h, g.out_w, g.out_c});
  const std::size_t K = g.kernel;
  for (std::size_t co = 0; co < g.out_c; ++co)
    for (std::size_t ow = 0; ow < g.out_w; ++ow)
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < g.in_c; ++ci)
          for (std::size_t kh = 0; kh < K; ++kh) {
            const std::ptrdiff_t ih =
                std::ptrdiff_t(oh * g.stride + kh) - std::ptrdiff_t(g.pad);
            if (ih < 0 || ih >= std::ptrdiff_t(g.in_h)) continue;
            for (std::size_t kw = 0; kw < K; ++kw) {
              const std::ptrdiff_t iw =
                  std::ptrdiff_t(ow * g.stride + kw) - std::ptrdiff_t(g.pad);
              if (iw < 0 || iw >= std::ptrdiff_t(g.in_w)) continue;
              acc += x[std::size_t(ih) + g.in_h * (std::size_t(iw) + g.in_w * ci)] *
                     kernels[kh + K * (kw + K * (ci + g.in_c * co))];
            }
          }
        out[oh + g.out_h * (ow + g.out_w * co)] = acc + bias[co];
      }
  return out;
}

/// Accumulates the input, kernel and bias adjoints of conv2d given the
/// output adjoint. Any of the outputs may be null.
inline void conv2d_backward(const Tensor& x, const Tensor& kernels,
                            const Tensor& bias, std::size_t stride,
                            const Tensor& grad_out, Tensor* grad_x,
                            Tensor* grad_k, Tensor* grad_b) {
  const ConvGeometry g = conv_geometry(x, kernels, bias, stride);
  const std::size_t K = g.kernel;
  for (std::size_t co = 0; co < g.out_c; ++co)
    for (std::size_t ow = 0; ow < g.out_w; ++ow)
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        const double go = grad_out[oh + g.out_h * (ow + g.out_w * co)];
        if (grad_b) (*grad_b)[co] += go;
        for (std::size_t ci = 0; ci < g.in_c; ++ci)
          for (std::size_t kh = 0; kh < K; ++kh) {
            const std::ptrdiff_t ih =
                std::ptrdiff_t(oh * g.stride + kh) - std::ptrdiff_t(g.pad);
            if (ih < 0 || ih >= std::ptrdiff_t(g.in_h)) continue;
            for (std::size_t kw = 0; kw < K; ++kw) {
              const std::ptrdiff_t iw =
                  std::ptrdiff_t(ow * g.stride + kw) - std::ptrdiff_t(g.pad);
              if (iw < 0 || iw >= std::ptrdiff_t(g.in_w)) continue;
              const std::size_t xi =
                  std::size_t(ih) + g.in_h * (std::size_t(iw) + g.in_w * ci);
              const std::size_t ki = kh + K * (kw + K * (ci + g.in_c * co));
              if (grad_x) (*grad_x)[xi] += go * kernels[ki];
              if (grad_k) (*grad_k)[ki] += go * x[xi];
            }
          }
      }
}

/// Non-overlapping window x window average pooling; trailing rows/cols that
/// do not fill a window are dropped.
inline Tensor avg_pool(const Tensor& x, std::size_t window) {
  if (x.order() != 3)
    throw ShapeError("avg_pool: input must be H x W x C, got " +
                     shape_string(x.shape()));
  if (window == 0 || x.shape()[0] < window || x.shape()[1] < window)
    throw ShapeError("avg_pool: window " + std::to_string(window) +
                     " does not fit input " + shape_string(x.shape()));
  const std::size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  const std::size_t oh = H / window, ow = W / window;
  const double inv = 1.0 / double(window * window);
  Tensor out({oh, ow, C});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t i = 0; i < oh; ++i) {
        double acc = 0.0;
        for (std::size_t dw = 0; dw < window; ++dw)
          for (std::size_t dh = 0; dh < window; ++dh)
            acc += x[(i * window + dh) + H * ((j * window + dw) + W * c)];
        out[i + oh * (j + ow * c)] = acc * inv;
      }
  return out;
}

inline void avg_pool_backward(const Shape& in_shape, std::size_t window,
                              const Tensor& grad_out, Tensor& grad_x) {
  const std::size_t H = in_shape[0], W = in_shape[1], C = in_shape[2];
  const std::size_t oh = H / window, ow = W / window;
  const double inv = 1.0 / double(window * window);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t i = 0; i < oh; ++i) {
        const double g = grad_out[i + oh * (j + ow * c)] * inv;
        for (std::size_t dw = 0; dw < window; ++dw)
          for (std::size_t dh = 0; dh < window; ++dh)
            grad_x[(i * window + dh) + H * ((j * window + dw) + W * c)] += g;
      }
}

}  // namespace stt
