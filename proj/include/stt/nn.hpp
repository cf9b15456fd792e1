// SPDX-License-Identifier: Apache-2.0
//
// Small image classifier: conv -> relu -> pool -> conv -> relu ->
// [attention] -> flatten -> linear head, plus momentum SGD.

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stt/attention.hpp"
#include "stt/autodiff.hpp"
#include "stt/conv.hpp"
#include "stt/tensor.hpp"

namespace stt {

struct ConvSpec {
  std::size_t channels = 8;  ///< output channels
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool operator==(const ConvSpec&) const = default;
};

struct ModelSpec {
  std::size_t height = 10;
  std::size_t width = 10;
  std::size_t channels = 3;
  std::size_t classes = 4;
  ConvSpec conv1;
  ConvSpec conv2;
  std::size_t pool = 2;  ///< average-pool window after conv1; 1 disables
  /// Attention after conv2. Its height, width and channels are taken from
  /// the feature map at that point; the values stored here are ignored.
  std::optional<SynthesizerSpec> attention;
  bool residual = true;  ///< add the block input back onto its output
  bool operator==(const ModelSpec&) const = default;
};

class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
    const auto& s = spec_;
    if (s.height == 0 || s.width == 0 || s.channels == 0)
      throw ShapeError("model: input dimensions must be positive");
    if (s.classes < 2) throw ShapeError("model: need at least two classes");
    if (s.pool == 0) throw ShapeError("model: pool window must be positive");

    Shape x{s.height, s.width, s.channels};
    x = conv_shape(x, s.conv1, "conv1");
    add("conv1.kernels", {s.conv1.kernel, s.conv1.kernel, s.channels, s.conv1.channels},
        fan_bound(s.conv1.kernel * s.conv1.kernel * s.channels));
    add("conv1.bias", {s.conv1.channels}, 0.0);
    if (s.pool > 1) {
      if (x[0] < s.pool || x[1] < s.pool)
        throw ShapeError("model: pool window " + std::to_string(s.pool) +
                         " does not fit conv1 output " + shape_string(x));
      x = {x[0] / s.pool, x[1] / s.pool, x[2]};
    }
    const std::size_t c1 = x[2];
    x = conv_shape(x, s.conv2, "conv2");
    add("conv2.kernels", {s.conv2.kernel, s.conv2.kernel, c1, s.conv2.channels},
        fan_bound(s.conv2.kernel * s.conv2.kernel * c1));
    add("conv2.bias", {s.conv2.channels}, 0.0);
    features_ = x;

    if (s.attention) {
      SynthesizerSpec a = *s.attention;
      a.height = x[0];
      a.width = x[1];
      a.channels = x[2];
      if (s.residual && a.dim != a.channels)
        throw ShapeError("model: residual attention needs d == C, got d=" +
                         std::to_string(a.dim) + " C=" + std::to_string(a.channels));
      block_.emplace(a);
      attn_offset_ = layout_.size();
      for (ParamInfo p : block_->layout()) {
        p.name = "attention." + p.name;
        layout_.push_back(std::move(p));
      }
      x[2] = a.dim;
    }
    flat_ = shape_size(x);
    add("head.weight", {flat_, s.classes}, fan_bound(flat_));
    add("head.bias", {1, s.classes}, 0.0);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<ParamInfo>& layout() const noexcept { return layout_; }
  const std::optional<AttentionBlock>& attention() const noexcept { return block_; }
  /// Shape of the conv2 output that feeds the attention block.
  const Shape& feature_shape() const noexcept { return features_; }
  Shape input_shape() const { return {spec_.height, spec_.width, spec_.channels}; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const ParamInfo& p : layout_) n += shape_size(p.shape);
    return n;
  }

  std::vector<Tensor> init(std::mt19937_64& rng) const {
    std::vector<Tensor> params;
    for (std::size_t i = 0; i < layout_.size();) {
      if (block_ && i == attn_offset_) {
        for (Tensor& t : block_->init(rng)) params.push_back(std::move(t));
        i += block_->layout().size();
        continue;
      }
      const ParamInfo& p = layout_[i++];
      Tensor t(p.shape);
      if (p.init == ParamInfo::Init::Uniform) {
        std::uniform_real_distribution<double> dist(-p.scale, p.scale);
        for (double& v : t.data()) v = dist(rng);
      }
      params.push_back(std::move(t));
    }
    return params;
  }

  /// Class logits, shape {classes}.
  Tensor forward(std::span<const Tensor> params, const Tensor& image) const {
    check(params.size(), image.shape());
    Tensor x = relu(conv2d(image, params[0], params[1], spec_.conv1.stride));
    if (spec_.pool > 1) x = avg_pool(x, spec_.pool);
    x = relu(conv2d(x, params[2], params[3], spec_.conv2.stride));
    if (block_) {
      const auto p = params.subspan(attn_offset_, block_->layout().size());
      Tensor y = block_->forward(p, x).Y.to_tensor().reshaped(
          {features_[0], features_[1], block_->spec().dim});
      x = spec_.residual ? y + x : std::move(y);
    }
    const Matrix flat = Matrix::from_tensor(std::move(x).reshaped({1, flat_}));
    Tensor logits = matmul(flat, Matrix::from_tensor(params[params.size() - 2])).to_tensor();
    logits = logits + params.back();
    return std::move(logits).reshaped({spec_.classes});
  }

  /// Same computation on a tape.
  ad::Var forward(std::span<const ad::Var> params, ad::Var image) const {
    check(params.size(), image.value().shape());
    ad::Var x = ad::relu(ad::conv2d(image, params[0], params[1], spec_.conv1.stride));
    if (spec_.pool > 1) x = ad::avg_pool(x, spec_.pool);
    x = ad::relu(ad::conv2d(x, params[2], params[3], spec_.conv2.stride));
    if (block_) {
      const auto p = params.subspan(attn_offset_, block_->layout().size());
      ad::Var y = ad::reshape(block_->forward(p, x).Y,
                              {features_[0], features_[1], block_->spec().dim});
      x = spec_.residual ? ad::add(y, x) : y;
    }
    const ad::Var flat = ad::reshape(x, {1, flat_});
    const ad::Var logits =
        ad::add(ad::matmul(flat, params[params.size() - 2]), params.back());
    return ad::reshape(logits, {spec_.classes});
  }

  std::size_t predict(std::span<const Tensor> params, const Tensor& image) const {
    return argmax(forward(params, image));
  }

 private:
  static double fan_bound(std::size_t fan_in) { return 1.0 / std::sqrt(double(fan_in)); }

  void add(std::string name, Shape shape, double bound) {
    layout_.push_back({std::move(name), std::move(shape), ParamRole::Projection,
                       bound > 0.0 ? ParamInfo::Init::Uniform : ParamInfo::Init::Zero,
                       bound, true});
  }

  static Shape conv_shape(const Shape& in, const ConvSpec& c, const std::string& who) {
    if (c.channels == 0) throw ShapeError("model: " + who + " needs output channels");
    if (c.kernel % 2 == 0)
      throw ShapeError("model: " + who + " kernel must be odd, got " +
                       std::to_string(c.kernel));
    if (c.stride == 0) throw ShapeError("model: " + who + " stride must be positive");
    const std::size_t pad = c.kernel / 2;
    return {(in[0] + 2 * pad - c.kernel) / c.stride + 1,
            (in[1] + 2 * pad - c.kernel) / c.stride + 1, c.channels};
  }

  void check(std::size_t n_params, const Shape& image) const {
    if (n_params != layout_.size())
      throw ShapeError("model expects " + std::to_string(layout_.size()) +
                       " parameters, got " + std::to_string(n_params));
    if (image != input_shape())
      throw ShapeError("model expects images of shape " + shape_string(input_shape()) +
                       ", got " + shape_string(image));
  }

  ModelSpec spec_;
  std::vector<ParamInfo> layout_;
  std::optional<AttentionBlock> block_;
  std::size_t attn_offset_ = 0;
  Shape features_;
  std::size_t flat_ = 0;
};

/// Momentum SGD: v <- mu v - lr g; p <- p + v. Velocities are created on the
/// first step and must keep their shapes afterwards.
class Sgd {
 public:
  Sgd(double lr = 0.01, double momentum = 0.9) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd: learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
      throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
  }

  double lr() const noexcept { return lr_; }
  double momentum() const noexcept { return momentum_; }
  const std::vector<Tensor>& velocity() const noexcept { return velocity_; }

  /// `trainable`, when given, marks parameters to update; others are left
  /// untouched bitwise.
  void step(std::span<Tensor> params, std::span<const Tensor> grads,
            const std::vector<bool>* trainable = nullptr) {
    if (params.size() != grads.size())
      throw ShapeError("sgd: " + std::to_string(params.size()) + " parameters but " +
                       std::to_string(grads.size()) + " gradients");
    if (velocity_.empty())
      for (const Tensor& p : params) velocity_.emplace_back(p.shape());
    if (velocity_.size() != params.size())
      throw ShapeError("sgd: parameter count changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (trainable && !(*trainable)[k]) continue;
      params[k].require_same_shape(grads[k], "sgd gradient");
      params[k].require_same_shape(velocity_[k], "sgd velocity");
      Tensor& v = velocity_[k];
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = momentum_ * v[i] - lr_ * grads[k][i];
        params[k][i] += v[i];
      }
    }
  }

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

/// One SGD update of `params` in place; convenience over Sgd.
inline void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, Sgd& opt) {
  opt.step(params, grads);
}

}  // namespace stt
