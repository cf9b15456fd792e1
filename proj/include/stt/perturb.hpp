// SPDX-License-Identifier: Apache-2.0
//
// Evaluation-time image perturbations on H x W x C images in [0, 1].

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include "stt/tensor.hpp"

namespace stt {

enum class FlipMode { Horizontal, Vertical, Both };

constexpr std::string_view flip_name(FlipMode m) {
  switch (m) {
    case FlipMode::Horizontal: return "horizontal";
    case FlipMode::Vertical: return "vertical";
    case FlipMode::Both: return "both";
  }
  return "?";
}

inline std::optional<FlipMode> flip_from_name(std::string_view s) {
  for (FlipMode m : {FlipMode::Horizontal, FlipMode::Vertical, FlipMode::Both})
    if (flip_name(m) == s) return m;
  return std::nullopt;
}

namespace detail {

inline void check_image(const Tensor& img, std::string_view who) {
  if (img.order() != 3)
    throw ShapeError(std::string(who) + ": image must be H x W x C, got " +
                     shape_string(img.shape()));
}

}  // namespace detail

/// Independent rng stream for image `index` under `base_seed`.
inline std::mt19937_64 image_rng(std::uint64_t base_seed, std::uint64_t index) {
  std::seed_seq seq{std::uint32_t(base_seed), std::uint32_t(base_seed >> 32),
                    std::uint32_t(index), std::uint32_t(index >> 32)};
  return std::mt19937_64(seq);
}

/// Adds sigma * N(0, 1) to every entry, then clamps to [0, 1].
inline Tensor gaussian_noise(const Tensor& image, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("gaussian_noise: sigma must be >= 0");
  if (sigma == 0.0) return image;
  std::normal_distribution<double> z(0.0, 1.0);
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i)
    out[i] = std::clamp(image[i] + sigma * z(rng), 0.0, 1.0);
  return out;
}

/// Reverses w (horizontal), h (vertical) or both.
inline Tensor flip(const Tensor& image, FlipMode mode) {
  detail::check_image(image, "flip");
  const std::size_t H = image.shape()[0], W = image.shape()[1], C = image.shape()[2];
  const bool fh = mode != FlipMode::Horizontal;  // reverse rows
  const bool fw = mode != FlipMode::Vertical;    // reverse columns
  Tensor out(image.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t h = 0; h < H; ++h)
        out(h, w, c) = image(fh ? H - 1 - h : h, fw ? W - 1 - w : w, c);
  return out;
}

/// Counter-clockwise rotation about the image center. Multiples of 90
/// degrees permute indices exactly (90 and 270 need a square image);
/// anything else is bilinear with zero fill.
inline Tensor rotate(const Tensor& image, double degrees) {
  detail::check_image(image, "rotate");
  if (!(degrees >= 0.0 && degrees < 360.0))
    throw std::invalid_argument("rotate: degrees must lie in [0, 360), got " +
                                std::to_string(degrees));
  const std::size_t H = image.shape()[0], W = image.shape()[1], C = image.shape()[2];
  const bool right_angle = std::fmod(degrees, 90.0) == 0.0;
  const int quarter = right_angle ? int(degrees / 90.0) : -1;

  if (quarter == 0) return image;
  if (quarter == 2) return flip(image, FlipMode::Both);
  if ((quarter == 1 || quarter == 3) && H == W) {
    const std::size_t N = H;
    Tensor out(image.shape());
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t w = 0; w < N; ++w)
        for (std::size_t h = 0; h < N; ++h)
          out(h, w, c) = quarter == 1 ? image(w, N - 1 - h, c) : image(N - 1 - w, h, c);
    return out;
  }

  double cs, sn;
  if (quarter == 1) {
    cs = 0.0, sn = 1.0;
  } else if (quarter == 3) {
    cs = 0.0, sn = -1.0;
  } else {
    const double rad = degrees * std::numbers::pi / 180.0;
    cs = std::cos(rad);
    sn = std::sin(rad);
  }
  const double ch = (double(H) - 1.0) / 2.0, cw = (double(W) - 1.0) / 2.0;
  Tensor out(image.shape());
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t h = 0; h < H; ++h) {
      const double y = double(h) - ch, x = double(w) - cw;
      const double sh = sn * x + cs * y + ch;
      const double sw = cs * x - sn * y + cw;
      const double h0 = std::floor(sh), w0 = std::floor(sw);
      const double fh = sh - h0, fw = sw - w0;
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw) {
            const double ih = h0 + dh, iw = w0 + dw;
            if (ih < 0.0 || iw < 0.0 || ih > double(H - 1) || iw > double(W - 1)) continue;
            const double wt = (dh ? fh : 1.0 - fh) * (dw ? fw : 1.0 - fw);
            if (wt == 0.0) continue;
            acc += wt * image(std::size_t(ih), std::size_t(iw), c);
          }
        out(h, w, c) = std::clamp(acc, 0.0, 1.0);
      }
    }
  return out;
}

struct Perturbation {
  enum class Kind { None, GaussianNoise, Rotate, Flip };
  Kind kind = Kind::None;
  double magnitude = 0.0;  ///< sigma or degrees
  FlipMode flip = FlipMode::Horizontal;

  static Perturbation none() { return {}; }
  static Perturbation noise(double sigma) { return {Kind::GaussianNoise, sigma, {}}; }
  static Perturbation rotation(double degrees) { return {Kind::Rotate, degrees, {}}; }
  static Perturbation flipping(FlipMode m) { return {Kind::Flip, 0.0, m}; }

  /// Tag used in metrics output: clean, noise, rotate, flip_<mode>.
  std::string tag() const {
    switch (kind) {
      case Kind::None: return "clean";
      case Kind::GaussianNoise: return "noise";
      case Kind::Rotate: return "rotate";
      case Kind::Flip: return "flip_" + std::string(flip_name(flip));
    }
    return "?";
  }
};

/// Perturbs example `index`; noise draws from image_rng(seed, index).
inline Tensor apply(const Perturbation& p, const Tensor& image, std::uint64_t seed,
                    std::uint64_t index) {
  switch (p.kind) {
    case Perturbation::Kind::None: return image;
    case Perturbation::Kind::GaussianNoise: {
      auto rng = image_rng(seed, index);
      return gaussian_noise(image, p.magnitude, rng);
    }
    case Perturbation::Kind::Rotate: return rotate(image, p.magnitude);
    case Perturbation::Kind::Flip: return flip(image, p.flip);
  }
  return image;
}

}  // namespace stt
