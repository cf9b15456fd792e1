// SPDX-License-Identifier: Apache-2.0
//
// Dot-product-free attention: synthesizers that produce the HW x HW attention
// logits from tensor mode products over the H x W x d feature map, from free
// parameters, or from Kronecker-factored versions of either, plus the plain
// scaled dot-product baseline.
//
// Feature maps are H x W x d tensors. Flattening to HW x d keeps the data as
// is, so spatial position (h, w) becomes row h + H*w. Attention coefficients
// are normalized along the second (key) index, so each output row is a
// convex combination of value rows.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stt/autodiff.hpp"
#include "stt/kron.hpp"
#include "stt/tensor.hpp"

namespace stt {

enum class SynthKind {
  DotProduct,
  Dense,
  Random,
  AxisH,
  AxisW,
  FactoredDense,
  FactoredRandom,
  Mixture,
};

inline constexpr std::array kAllSynthKinds = {
    SynthKind::DotProduct,    SynthKind::Dense, SynthKind::Random,
    SynthKind::AxisH,         SynthKind::AxisW, SynthKind::FactoredDense,
    SynthKind::FactoredRandom, SynthKind::Mixture,
};

constexpr std::string_view kind_name(SynthKind k) {
  switch (k) {
    case SynthKind::DotProduct: return "DotProduct";
    case SynthKind::Dense: return "Dense";
    case SynthKind::Random: return "Random";
    case SynthKind::AxisH: return "AxisH";
    case SynthKind::AxisW: return "AxisW";
    case SynthKind::FactoredDense: return "FactoredDense";
    case SynthKind::FactoredRandom: return "FactoredRandom";
    case SynthKind::Mixture: return "Mixture";
  }
  return "?";
}

inline std::optional<SynthKind> kind_from_name(std::string_view name) {
  for (SynthKind k : kAllSynthKinds)
    if (kind_name(k) == name) return k;
  return std::nullopt;
}

enum class Axis { H, W };

struct AttentionOutput {
  Matrix S;  ///< HW x HW, rows sum to one
  Matrix Y;  ///< HW x d
};

// ---------------------------------------------------------------------------
// Pure forward operations

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

inline void check_feature_map(const Tensor& o, std::string_view who) {
  require(o.order() == 3, std::string(who) + ": feature map must be H x W x d, got " +
                              shape_string(o.shape()));
}

inline void check_map(const Matrix& m, std::size_t rows, std::size_t cols,
                      std::string_view who, std::string_view what) {
  require(m.rows() == rows && m.cols() == cols,
          std::string(who) + ": " + std::string(what) + " must be " +
              dims(rows, cols) + ", got " + dims_string(m));
}

inline void check_map(const KroneckerFactoredMap& m, std::size_t rows,
                      std::size_t cols, std::string_view who,
                      std::string_view what) {
  require(m.out_dim() == rows && m.in_dim() == cols,
          std::string(who) + ": factored " + std::string(what) + " must be " +
              dims(rows, cols) + ", got " + dims(m.out_dim(), m.in_dim()));
}

inline Matrix squeeze_logits(Tensor z, std::size_t hw) {
  return Matrix::from_tensor(std::move(z).reshaped({hw, hw}));
}

}  // namespace detail

/// S = softmax_rows(logits), Y = S V.
inline AttentionOutput attend(const Matrix& logits, const Matrix& value) {
  detail::require(logits.rows() == logits.cols(),
                  "attention logits must be square, got " + dims_string(logits));
  detail::require(logits.cols() == value.rows(),
                  "attention logits " + dims_string(logits) +
                      " do not match value rows " + std::to_string(value.rows()));
  Matrix s = softmax_rows(logits);
  Matrix y = matmul(s, value);
  return {std::move(s), std::move(y)};
}

struct Projections {
  Matrix Q, K, V;
};

/// Q = X Wq, K = X Wk, V = X Wv for X of shape HW x C.
inline Projections project_qkv(const Matrix& x, const Matrix& wq,
                               const Matrix& wk, const Matrix& wv) {
  for (const Matrix* w : {&wq, &wk, &wv})
    detail::require(w->rows() == x.cols(),
                    "project_qkv: projection " + dims_string(*w) +
                        " does not accept " + std::to_string(x.cols()) +
                        " input channels");
  return {matmul(x, wq), matmul(x, wk), matmul(x, wv)};
}

/// S = softmax_rows(Q K^T / sqrt(d)), Y = S V.
inline AttentionOutput dot_product_attention(const Matrix& q, const Matrix& k,
                                             const Matrix& v) {
  detail::require(q.rows() == k.rows() && q.cols() == k.cols(),
                  "dot_product_attention: Q " + dims_string(q) + " and K " +
                      dims_string(k) + " differ");
  detail::require(v.rows() == q.rows(),
                  "dot_product_attention: V has " + std::to_string(v.rows()) +
                      " rows, expected " + std::to_string(q.rows()));
  Tensor logits = matmul(q, transpose(k)).to_tensor();
  logits *= 1.0 / std::sqrt(double(q.cols()));
  return attend(Matrix::from_tensor(logits), v);
}

/// Z = O x1 Mh x2 Mw x3 Mc with Mh: HW x H, Mw: HW x W, Mc: 1 x d, giving
/// HW x HW x 1, returned squeezed to HW x HW.
inline Matrix dense_logits(const Tensor& features, const Matrix& height_map,
                           const Matrix& width_map, const Matrix& channel_map) {
  constexpr std::string_view who = "dense synthesizer";
  detail::check_feature_map(features, who);
  const std::size_t h = features.shape()[0], w = features.shape()[1],
                    d = features.shape()[2], hw = h * w;
  detail::check_map(height_map, hw, h, who, "height map (HW x H)");
  detail::check_map(width_map, hw, w, who, "width map (HW x W)");
  detail::check_map(channel_map, 1, d, who, "channel map (1 x d)");
  Tensor z = mode_n_product(features, height_map, 0);
  z = mode_n_product(z, width_map, 1);
  z = mode_n_product(z, channel_map, 2);
  return detail::squeeze_logits(std::move(z), hw);
}

inline AttentionOutput dense_synthesizer(const Tensor& features,
                                         const Matrix& height_map,
                                         const Matrix& width_map,
                                         const Matrix& channel_map,
                                         const Matrix& value) {
  return attend(dense_logits(features, height_map, width_map, channel_map), value);
}

/// Y = softmax_rows(R) V; S depends on R only.
inline AttentionOutput random_synthesizer(const Matrix& logits,
                                          const Matrix& value) {
  detail::require(logits.rows() == value.rows() && logits.cols() == value.rows(),
                  "random synthesizer: R must be " +
                      detail::dims(value.rows(), value.rows()) + ", got " +
                      dims_string(logits));
  return attend(logits, value);
}

/// Single-axis variants. AxisH: Mh 1 x H, Mw HW x W, Mc HW x d, Z is
/// 1 x HW x HW. AxisW: Mh HW x H, Mw 1 x W, Mc HW x d, Z is HW x 1 x HW.
/// The singleton mode is squeezed away.
inline Matrix axis_logits(const Tensor& features, Axis axis,
                          const Matrix& height_map, const Matrix& width_map,
                          const Matrix& channel_map) {
  const std::string_view who =
      axis == Axis::H ? "height-axis synthesizer" : "width-axis synthesizer";
  detail::check_feature_map(features, who);
  const std::size_t h = features.shape()[0], w = features.shape()[1],
                    d = features.shape()[2], hw = h * w;
  if (axis == Axis::H) {
    detail::check_map(height_map, 1, h, who, "height map (1 x H)");
    detail::check_map(width_map, hw, w, who, "width map (HW x W)");
  } else {
    detail::check_map(height_map, hw, h, who, "height map (HW x H)");
    detail::check_map(width_map, 1, w, who, "width map (1 x W)");
  }
  detail::check_map(channel_map, hw, d, who, "channel map (HW x d)");
  Tensor z = mode_n_product(features, height_map, 0);
  z = mode_n_product(z, width_map, 1);
  z = mode_n_product(z, channel_map, 2);
  return detail::squeeze_logits(std::move(z), hw);
}

inline AttentionOutput axis_synthesizer(const Tensor& features, Axis axis,
                                        const Matrix& height_map,
                                        const Matrix& width_map,
                                        const Matrix& channel_map,
                                        const Matrix& value) {
  return attend(axis_logits(features, axis, height_map, width_map, channel_map),
                value);
}

/// Dense synthesizer with every map replaced by its Kronecker-factored form,
/// applied factor by factor.
inline Matrix factored_dense_logits(const Tensor& features,
                                    const KroneckerFactoredMap& height_map,
                                    const KroneckerFactoredMap& width_map,
                                    const KroneckerFactoredMap& channel_map) {
  constexpr std::string_view who = "factored dense synthesizer";
  detail::check_feature_map(features, who);
  const std::size_t h = features.shape()[0], w = features.shape()[1],
                    d = features.shape()[2], hw = h * w;
  detail::check_map(height_map, hw, h, who, "height map (HW x H)");
  detail::check_map(width_map, hw, w, who, "width map (HW x W)");
  detail::check_map(channel_map, 1, d, who, "channel map (1 x d)");
  Tensor z = height_map.mode_product(features, 0);
  z = width_map.mode_product(z, 1);
  z = channel_map.mode_product(z, 2);
  return detail::squeeze_logits(std::move(z), hw);
}

inline AttentionOutput factored_dense_synthesizer(
    const Tensor& features, const KroneckerFactoredMap& height_map,
    const KroneckerFactoredMap& width_map,
    const KroneckerFactoredMap& channel_map, const Matrix& value) {
  return attend(factored_dense_logits(features, height_map, width_map, channel_map),
                value);
}

inline AttentionOutput factored_random_synthesizer(const KroneckerFactoredMap& logits,
                                                   const Matrix& value) {
  detail::check_map(logits, value.rows(), value.rows(), "factored random synthesizer",
                    "R (HW x HW)");
  return attend(logits.materialize(), value);
}

/// sum_i theta_i Z_i with theta = softmax(mixing_logits); mixing_logits is 1 x N.
inline Matrix mix_logits(std::span<const Matrix> logits,
                         const Matrix& mixing_logits) {
  detail::require(!logits.empty(), "mixture synthesizer: no components");
  detail::require(mixing_logits.rows() == 1 && mixing_logits.cols() == logits.size(),
                  "mixture synthesizer: mixing logits must be 1x" +
                      std::to_string(logits.size()) + ", got " +
                      dims_string(mixing_logits));
  const std::size_t hw = logits.front().rows();
  std::vector<double> stacked;
  stacked.reserve(hw * hw * logits.size());
  for (const Matrix& z : logits) {
    detail::require(z.rows() == hw && z.cols() == hw,
                    "mixture synthesizer: component logits " + dims_string(z) +
                        " disagree with " + detail::dims(hw, hw));
    stacked.insert(stacked.end(), z.data().begin(), z.data().end());
  }
  const Tensor theta = softmax_rows(mixing_logits.to_tensor());
  Tensor mixed = mode_n_product(Tensor({hw, hw, logits.size()}, std::move(stacked)),
                                theta, 2);
  return detail::squeeze_logits(std::move(mixed), hw);
}

/// Y = softmax_rows(sum_i theta_i Z_i) V: logits are mixed before a single
/// softmax.
inline AttentionOutput mixture_synthesizer(std::span<const Matrix> logits,
                                           const Matrix& mixing_logits,
                                           const Matrix& value) {
  return attend(mix_logits(logits, mixing_logits), value);
}

// ---------------------------------------------------------------------------
// Parameterized attention block

struct SynthesizerSpec {
  SynthKind kind = SynthKind::Dense;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t channels = 8;  ///< C of the incoming feature map
  std::size_t dim = 8;       ///< d of the projected features and values
  std::size_t factors = 2;   ///< Kronecker factors per factored map
  bool trainable = true;     ///< whether random-synthesizer logits learn
  /// Feature projection is the identity (requires channels == dim).
  bool identity_projection = false;
  std::vector<SynthKind> components{SynthKind::FactoredRandom, SynthKind::Dense};

  bool operator==(const SynthesizerSpec&) const = default;
};

enum class ParamRole { Projection, Synthesizer, Mixing };

struct ParamInfo {
  std::string name;
  Shape shape;
  ParamRole role;
  enum class Init { Uniform, Normal, Zero } init;
  double scale;  ///< uniform half-width or normal standard deviation
  bool trainable;
};

class AttentionBlock {
 public:
  explicit AttentionBlock(SynthesizerSpec spec) : spec_(std::move(spec)) {
    validate();
    const std::size_t c = spec_.channels, d = spec_.dim;
    add("value_proj", {c, d}, ParamRole::Projection, ParamInfo::Init::Uniform,
        1.0 / std::sqrt(double(c)));
    if (spec_.kind == SynthKind::Mixture) {
      for (std::size_t i = 0; i < spec_.components.size(); ++i)
        add_generator(spec_.components[i], "mix" + std::to_string(i) + ".");
      add("mixing_logits", {1, spec_.components.size()}, ParamRole::Mixing,
          ParamInfo::Init::Zero, 0.0);
    } else {
      add_generator(spec_.kind, "");
    }
  }

  const SynthesizerSpec& spec() const noexcept { return spec_; }
  const std::vector<ParamInfo>& layout() const noexcept { return layout_; }
  std::size_t hw() const noexcept { return spec_.height * spec_.width; }

  /// Draws initial parameters in layout order.
  std::vector<Tensor> init(std::mt19937_64& rng) const {
    std::vector<Tensor> params;
    for (const ParamInfo& p : layout_) {
      Tensor t(p.shape);
      if (p.init == ParamInfo::Init::Uniform) {
        std::uniform_real_distribution<double> dist(-p.scale, p.scale);
        for (double& v : t.data()) v = dist(rng);
      } else if (p.init == ParamInfo::Init::Normal) {
        std::normal_distribution<double> dist(0.0, p.scale);
        for (double& v : t.data()) v = dist(rng);
      }
      params.push_back(std::move(t));
    }
    return params;
  }

  /// Trainable scalars owned by the synthesizer itself (projections excluded).
  std::size_t synthesizer_param_count() const {
    std::size_t n = 0;
    for (const ParamInfo& p : layout_)
      if (p.role != ParamRole::Projection && p.trainable) n += shape_size(p.shape);
    return n;
  }

  std::size_t total_param_count() const {
    std::size_t n = 0;
    for (const ParamInfo& p : layout_) n += shape_size(p.shape);
    return n;
  }

  /// features: H x W x C.
  AttentionOutput forward(std::span<const Tensor> params, const Tensor& features) const {
    check_inputs(params.size(), features.shape());
    const Matrix x = Matrix::from_tensor(features.reshaped({hw(), spec_.channels}));
    const Matrix value = matmul(x, Matrix::from_tensor(params[0]));
    if (spec_.kind != SynthKind::Mixture)
      return attend(logits(generators_[0], params, x), value);
    std::vector<Matrix> parts;
    for (const Generator& g : generators_) parts.push_back(logits(g, params, x));
    return mixture_synthesizer(parts, Matrix::from_tensor(params.back()), value);
  }

  struct GraphOutput {
    ad::Var S;
    ad::Var Y;
  };

  /// Same computation recorded on a tape, op for op.
  GraphOutput forward(std::span<const ad::Var> params, ad::Var features) const {
    check_inputs(params.size(), features.value().shape());
    const ad::Var x = ad::reshape(features, {hw(), spec_.channels});
    const ad::Var value = ad::matmul(x, params[0]);
    ad::Var z;
    if (spec_.kind != SynthKind::Mixture) {
      z = logits(generators_[0], params, x);
    } else {
      std::vector<ad::Var> parts;
      for (const Generator& g : generators_) parts.push_back(logits(g, params, x));
      const ad::Var stacked = ad::stack(parts);
      const ad::Var theta = ad::softmax_rows(params.back());
      z = ad::reshape(ad::mode_product(stacked, theta, 2), {hw(), hw()});
    }
    const ad::Var s = ad::softmax_rows(z);
    return {s, ad::matmul(s, value)};
  }

 private:
  struct Generator {
    SynthKind kind;
    std::size_t offset;  ///< first parameter index
    std::size_t count;
  };

  void validate() const {
    const auto& s = spec_;
    if (s.height == 0 || s.width == 0 || s.channels == 0 || s.dim == 0)
      throw ShapeError("synthesizer: H, W, C and d must all be positive");
    if (s.factors == 0) throw ShapeError("synthesizer: factor count must be positive");
    if (s.identity_projection && s.channels != s.dim)
      throw ShapeError("synthesizer: identity projection needs C == d, got C=" +
                       std::to_string(s.channels) + " d=" + std::to_string(s.dim));
    if (s.kind == SynthKind::Mixture) {
      if (s.components.empty()) throw ShapeError("mixture synthesizer: no components");
      for (SynthKind k : s.components)
        if (k == SynthKind::Mixture)
          throw ShapeError("mixture synthesizer: components cannot be mixtures");
    }
  }

  void add(std::string name, Shape shape, ParamRole role, ParamInfo::Init init,
           double scale, bool trainable = true) {
    layout_.push_back({std::move(name), std::move(shape), role, init, scale, trainable});
  }

  void add_factored(const std::string& name, const std::vector<FactorShape>& shapes) {
    for (std::size_t k = 0; k < shapes.size(); ++k)
      add(name + "." + std::to_string(k), {shapes[k].rows, shapes[k].cols},
          ParamRole::Synthesizer, ParamInfo::Init::Uniform,
          1.0 / std::sqrt(double(shapes[k].cols)));
  }

  void add_generator(SynthKind kind, const std::string& prefix) {
    const std::size_t h = spec_.height, w = spec_.width, c = spec_.channels,
                      d = spec_.dim, hw = h * w, n = spec_.factors;
    const std::size_t start = layout_.size();
    const double proj = 1.0 / std::sqrt(double(c));
    auto feature_proj = [&] {
      if (!spec_.identity_projection)
        add(prefix + "feature_proj", {c, d}, ParamRole::Projection,
            ParamInfo::Init::Uniform, proj);
    };
    switch (kind) {
      case SynthKind::DotProduct:
        add(prefix + "query_proj", {c, d}, ParamRole::Projection, ParamInfo::Init::Uniform, proj);
        add(prefix + "key_proj", {c, d}, ParamRole::Projection, ParamInfo::Init::Uniform, proj);
        break;
      case SynthKind::Dense:
        feature_proj();
        add(prefix + "height_map", {hw, h}, ParamRole::Synthesizer, ParamInfo::Init::Uniform,
            1.0 / std::sqrt(double(h)));
        add(prefix + "width_map", {hw, w}, ParamRole::Synthesizer, ParamInfo::Init::Uniform,
            1.0 / std::sqrt(double(w)));
        add(prefix + "channel_map", {1, d}, ParamRole::Synthesizer, ParamInfo::Init::Uniform,
            1.0 / std::sqrt(double(d)));
        break;
      case SynthKind::AxisH:
      case SynthKind::AxisW: {
        const bool ax_h = kind == SynthKind::AxisH;
        feature_proj();
        add(prefix + "height_map", {ax_h ? 1 : hw, h}, ParamRole::Synthesizer,
            ParamInfo::Init::Uniform, 1.0 / std::sqrt(double(h)));
        add(prefix + "width_map", {ax_h ? hw : 1, w}, ParamRole::Synthesizer,
            ParamInfo::Init::Uniform, 1.0 / std::sqrt(double(w)));
        add(prefix + "channel_map", {hw, d}, ParamRole::Synthesizer,
            ParamInfo::Init::Uniform, 1.0 / std::sqrt(double(d)));
        break;
      }
      case SynthKind::Random:
        add(prefix + "logits", {hw, hw}, ParamRole::Synthesizer, ParamInfo::Init::Normal,
            0.02, spec_.trainable);
        break;
      case SynthKind::FactoredRandom: {
        std::vector<FactorShape> shapes;
        if (n == 2) {
          // (W x W) (x) (H x H) acts separably on rows h + H*w.
          if (h * w > 1 && (h == 1 || w == 1))
            throw std::invalid_argument(
                "factored random synthesizer: HW=" + std::to_string(hw) +
                " cannot be split spatially into two non-trivial factors");
          shapes = {{w, w}, {h, h}};
        } else {
          shapes = factor_shapes(hw, hw, n);
        }
        const double sd = std::pow(0.02, 1.0 / double(shapes.size()));
        for (std::size_t k = 0; k < shapes.size(); ++k)
          add(prefix + "logits." + std::to_string(k), {shapes[k].rows, shapes[k].cols},
              ParamRole::Synthesizer, ParamInfo::Init::Normal, sd, spec_.trainable);
        break;
      }
      case SynthKind::FactoredDense:
        feature_proj();
        add_factored(prefix + "height_map", factor_shapes(hw, h, n));
        add_factored(prefix + "width_map", factor_shapes(hw, w, n));
        add_factored(prefix + "channel_map", factor_shapes(1, d, n));
        break;
      case SynthKind::Mixture:
        throw ShapeError("mixture synthesizer: nested mixtures are not supported");
    }
    generators_.push_back({kind, start, layout_.size() - start});
  }

  void check_inputs(std::size_t n_params, const Shape& features) const {
    if (n_params != layout_.size())
      throw ShapeError("attention block expects " + std::to_string(layout_.size()) +
                       " parameters, got " + std::to_string(n_params));
    if (features != Shape{spec_.height, spec_.width, spec_.channels})
      throw ShapeError("attention block expects features " +
                       shape_string(Shape{spec_.height, spec_.width, spec_.channels}) +
                       ", got " + shape_string(features));
  }

  std::size_t per_map() const noexcept { return spec_.factors; }

  Matrix logits(const Generator& g, std::span<const Tensor> params,
                const Matrix& x) const {
    const auto p = params.subspan(g.offset, g.count);
    auto mat = [&](std::size_t i) { return Matrix::from_tensor(p[i]); };
    auto features = [&]() -> std::pair<Tensor, std::size_t> {
      if (spec_.identity_projection)
        return {x.to_tensor().reshaped({spec_.height, spec_.width, spec_.dim}), 0};
      return {matmul(x, mat(0)).to_tensor().reshaped({spec_.height, spec_.width, spec_.dim}),
              1};
    };
    auto factored = [&](std::size_t first) {
      std::vector<Matrix> fs;
      for (std::size_t k = 0; k < per_map(); ++k) fs.push_back(mat(first + k));
      return KroneckerFactoredMap(std::move(fs));
    };
    switch (g.kind) {
      case SynthKind::DotProduct: {
        const Matrix q = matmul(x, mat(0));
        const Matrix k = matmul(x, mat(1));
        Tensor z = matmul(q, transpose(k)).to_tensor();
        z *= 1.0 / std::sqrt(double(spec_.dim));
        return Matrix::from_tensor(z);
      }
      case SynthKind::Dense: {
        const auto [o, i] = features();
        return dense_logits(o, mat(i), mat(i + 1), mat(i + 2));
      }
      case SynthKind::AxisH:
      case SynthKind::AxisW: {
        const auto [o, i] = features();
        return axis_logits(o, g.kind == SynthKind::AxisH ? Axis::H : Axis::W, mat(i),
                           mat(i + 1), mat(i + 2));
      }
      case SynthKind::Random:
        return mat(0);
      case SynthKind::FactoredRandom: {
        std::vector<Matrix> fs;
        for (std::size_t k = 0; k < g.count; ++k) fs.push_back(mat(k));
        return KroneckerFactoredMap(std::move(fs)).materialize();
      }
      case SynthKind::FactoredDense: {
        const auto [o, i] = features();
        const std::size_t n = per_map();
        return factored_dense_logits(o, factored(i), factored(i + n), factored(i + 2 * n));
      }
      case SynthKind::Mixture: break;
    }
    throw ShapeError("unsupported synthesizer kind");
  }

  ad::Var logits(const Generator& g, std::span<const ad::Var> params, ad::Var x) const {
    const auto p = params.subspan(g.offset, g.count);
    const std::size_t h = spec_.height, w = spec_.width, d = spec_.dim, hw = h * w;
    auto features = [&]() -> std::pair<ad::Var, std::size_t> {
      if (spec_.identity_projection) return {ad::reshape(x, {h, w, d}), 0};
      return {ad::reshape(ad::matmul(x, p[0]), {h, w, d}), 1};
    };
    switch (g.kind) {
      case SynthKind::DotProduct: {
        const ad::Var q = ad::matmul(x, p[0]);
        const ad::Var k = ad::matmul(x, p[1]);
        return ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(double(d)));
      }
      case SynthKind::Dense:
      case SynthKind::AxisH:
      case SynthKind::AxisW: {
        const auto [o, i] = features();
        ad::Var z = ad::mode_product(o, p[i], 0);
        z = ad::mode_product(z, p[i + 1], 1);
        z = ad::mode_product(z, p[i + 2], 2);
        return ad::reshape(z, {hw, hw});
      }
      case SynthKind::Random:
        return p[0];
      case SynthKind::FactoredRandom: {
        ad::Var r = p[0];
        for (std::size_t k = 1; k < g.count; ++k) r = ad::kron(r, p[k]);
        return r;
      }
      case SynthKind::FactoredDense: {
        const auto [o, i] = features();
        const std::size_t n = per_map();
        ad::Var z = ad::kron_mode_product(o, p.subspan(i, n), 0);
        z = ad::kron_mode_product(z, p.subspan(i + n, n), 1);
        z = ad::kron_mode_product(z, p.subspan(i + 2 * n, n), 2);
        return ad::reshape(z, {hw, hw});
      }
      case SynthKind::Mixture: break;
    }
    throw ShapeError("unsupported synthesizer kind");
  }

  SynthesizerSpec spec_;
  std::vector<ParamInfo> layout_;
  std::vector<Generator> generators_;
};

/// Trainable synthesizer-owned scalar count for a SynthesizerSpec (projections excluded).
inline std::size_t synthesizer_param_count(const SynthesizerSpec& spec) {
  return AttentionBlock(spec).synthesizer_param_count();
}

}  // namespace stt
