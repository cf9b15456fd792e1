// SPDX-License-Identifier: Apache-2.0
//
// Datasets: the CIFAR-10 binary batch format and a seeded synthetic
// pattern set for quick runs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stt/tensor.hpp"

namespace stt {

struct Dataset {
  std::vector<Tensor> images;  ///< each H x W x C in [0, 1]
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }

  void push_back(Tensor image, std::size_t label) {
    images.push_back(std::move(image));
    labels.push_back(label);
  }

  void append(const Dataset& other) {
    images.insert(images.end(), other.images.begin(), other.images.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  }
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPlane = kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = 1 + 3 * kCifarPlane;

/// Parses concatenated CIFAR-10 records: one label byte, then 1024 red,
/// 1024 green and 1024 blue bytes, each plane row-major.
inline Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecord != 0)
    throw DataError("cifar10: truncated input, " + std::to_string(bytes.size()) +
                    " bytes leaves a remainder of " +
                    std::to_string(bytes.size() % kCifarRecord) + " after " +
                    std::to_string(bytes.size() / kCifarRecord) + " records of " +
                    std::to_string(kCifarRecord) + " bytes");
  Dataset ds;
  const std::size_t n = bytes.size() / kCifarRecord;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9)
      throw DataError("cifar10: record " + std::to_string(r) + " has label " +
                      std::to_string(int(rec[0])) + ", expected 0..9");
    Tensor img({kCifarSide, kCifarSide, 3});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t row = 0; row < kCifarSide; ++row)
        for (std::size_t col = 0; col < kCifarSide; ++col)
          img(row, col, c) = rec[1 + c * kCifarPlane + row * kCifarSide + col] / 255.0;
    ds.push_back(std::move(img), rec[0]);
  }
  return ds;
}

inline Dataset load_cifar10(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cifar10: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_cifar10(bytes);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t height = 10;
  std::size_t width = 10;
  std::size_t channels = 3;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 100;
  double noise = 0.05;
  std::uint64_t seed = 1;
  bool operator==(const SyntheticSpec&) const = default;
};

struct Split {
  Dataset train;
  Dataset test;
};

inline constexpr double kBackground = 0.2;
inline constexpr double kForeground = 0.8;
inline constexpr std::size_t kBasePatterns = 8;

/// Noise-free image for class `cls`. Classes cycle through eight spatial
/// patterns (horizontal bar, vertical bar, diagonal, top-left blob,
/// anti-diagonal, bottom-right blob, horizontal ramp, vertical ramp); class
/// k >= 8 draws pattern k % 8 in a single channel only.
inline Tensor class_pattern(std::size_t cls, std::size_t H, std::size_t W, std::size_t C) {
  Tensor img = Tensor::filled({H, W, C}, kBackground);
  const std::size_t pattern = cls % kBasePatterns;
  const std::size_t group = cls / kBasePatterns;
  auto value = [&](std::size_t h, std::size_t w) {
    const auto hi = std::ptrdiff_t(h), wi = std::ptrdiff_t(w);
    bool on = false;
    switch (pattern) {
      case 0: on = h >= (H - 1) / 2 && h <= H / 2; break;
      case 1: on = w >= (W - 1) / 2 && w <= W / 2; break;
      case 2: on = std::abs(hi * std::ptrdiff_t(W) - wi * std::ptrdiff_t(H)) <=
                   std::ptrdiff_t(std::max(H, W)); break;
      case 3: on = h < (H + 1) / 2 && w < (W + 1) / 2; break;
      case 4: on = std::abs(hi * std::ptrdiff_t(W) + wi * std::ptrdiff_t(H) -
                            std::ptrdiff_t((H - 1) * W)) <= std::ptrdiff_t(std::max(H, W));
              break;
      case 5: on = h >= H / 2 && w >= W / 2; break;
      case 6: return W > 1 ? kBackground + (kForeground - kBackground) * double(w) / double(W - 1)
                           : kForeground;
      case 7: return H > 1 ? kBackground + (kForeground - kBackground) * double(h) / double(H - 1)
                           : kForeground;
    }
    return on ? kForeground : kBackground;
  };
  for (std::size_t c = 0; c < C; ++c) {
    if (group > 0 && c != (group - 1) % C) continue;
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t h = 0; h < H; ++h) img(h, w, c) = value(h, w);
  }
  return img;
}

/// Seeded class-conditional images: pattern plus N(0, noise^2) per entry,
/// clamped to [0, 1]. Train examples are drawn first, round-robin over
/// classes, then test examples.
inline Split generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("synthetic data needs at least two classes");
  if (spec.height == 0 || spec.width == 0 || spec.channels == 0)
    throw std::invalid_argument("synthetic data needs positive image dimensions");
  if (!(spec.noise >= 0.0)) throw std::invalid_argument("synthetic noise must be >= 0");
  std::vector<Tensor> patterns;
  for (std::size_t k = 0; k < spec.classes; ++k)
    patterns.push_back(class_pattern(k, spec.height, spec.width, spec.channels));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  auto draw = [&](std::size_t per_class) {
    Dataset ds;
    for (std::size_t i = 0; i < per_class; ++i)
      for (std::size_t k = 0; k < spec.classes; ++k) {
        Tensor img = patterns[k];
        if (spec.noise > 0.0)
          for (double& v : img.data()) v = std::clamp(v + spec.noise * z(rng), 0.0, 1.0);
        ds.push_back(std::move(img), k);
      }
    return ds;
  };
  Split s;
  s.train = draw(spec.train_per_class);
  s.test = draw(spec.test_per_class);
  return s;
}

}  // namespace stt
