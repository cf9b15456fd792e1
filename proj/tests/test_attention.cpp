// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stt/attention.hpp"
#include "stt/grad_check.hpp"
#include "test_util.hpp"

using namespace stt;
using stt::testing::rand_matrix;
using stt::testing::rand_tensor;

namespace {

SynthesizerSpec spec_for(SynthKind kind, std::size_t h, std::size_t w, std::size_t c, std::size_t d) {
  SynthesizerSpec s;
  s.kind = kind;
  s.height = h;
  s.width = w;
  s.channels = c;
  s.dim = d;
  return s;
}

void expect_row_stochastic(const Matrix& s, double tol = 1e-12) {
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double tot = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) {
      EXPECT_GE(s(i, j), 0.0);
      tot += s(i, j);
    }
    EXPECT_NEAR(tot, 1.0, tol);
  }
}

// Z[i][j] = sum_{h,w,c} a[i][h] b[j][w] c[0][c] O[h][w][c]
Matrix brute_dense_logits(const Tensor& o, const Matrix& a, const Matrix& b, const Matrix& c) {
  const std::size_t H = o.shape()[0], W = o.shape()[1], D = o.shape()[2], HW = H * W;
  Matrix z(HW, HW);
  for (std::size_t i = 0; i < HW; ++i)
    for (std::size_t j = 0; j < HW; ++j) {
      double s = 0.0;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          for (std::size_t k = 0; k < D; ++k) s += a(i, h) * b(j, w) * c(0, k) * o(h, w, k);
      z(i, j) = s;
    }
  return z;
}

Matrix brute_axis_h_logits(const Tensor& o, const Matrix& a, const Matrix& b, const Matrix& c) {
  const std::size_t H = o.shape()[0], W = o.shape()[1], D = o.shape()[2], HW = H * W;
  Matrix z(HW, HW);
  for (std::size_t i = 0; i < HW; ++i)
    for (std::size_t j = 0; j < HW; ++j) {
      double s = 0.0;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          for (std::size_t k = 0; k < D; ++k) s += a(0, h) * b(i, w) * c(j, k) * o(h, w, k);
      z(i, j) = s;
    }
  return z;
}

Matrix brute_axis_w_logits(const Tensor& o, const Matrix& a, const Matrix& b, const Matrix& c) {
  const std::size_t H = o.shape()[0], W = o.shape()[1], D = o.shape()[2], HW = H * W;
  Matrix z(HW, HW);
  for (std::size_t i = 0; i < HW; ++i)
    for (std::size_t j = 0; j < HW; ++j) {
      double s = 0.0;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          for (std::size_t k = 0; k < D; ++k) s += a(i, h) * b(0, w) * c(j, k) * o(h, w, k);
      z(i, j) = s;
    }
  return z;
}

double max_diff(const Matrix& a, const Matrix& b) { return max_abs_diff(a.to_tensor(), b.to_tensor()); }

}  // namespace

TEST(Projection, IdentityAndZeroWeights) {
  std::mt19937_64 rng(1);
  const Matrix x = rand_matrix(5, 3, rng);
  const auto p = project_qkv(x, Matrix::identity(3), Matrix::identity(3), Matrix::identity(3));
  EXPECT_EQ(p.Q, x);
  EXPECT_EQ(p.K, x);
  EXPECT_EQ(p.V, x);
  const auto z = project_qkv(x, Matrix::identity(3), Matrix::identity(3), Matrix(3, 3));
  EXPECT_EQ(max_abs(z.V.to_tensor()), 0.0);
  EXPECT_EQ(max_abs(dot_product_attention(z.Q, z.K, z.V).Y.to_tensor()), 0.0);
}

TEST(Projection, HandComputedProduct) {
  const Matrix x = Matrix::from_rows({{1, 0, 2}, {0, 1, 1}, {3, 1, 0}, {-1, 2, 1}});
  const Matrix w = Matrix::from_rows({{1, 2}, {0, 1}, {-1, 3}});
  const auto p = project_qkv(x, w, w, w);
  EXPECT_EQ(p.Q, Matrix::from_rows({{-1, 8}, {-1, 4}, {3, 7}, {-2, 3}}));
  EXPECT_THROW((void)project_qkv(x, Matrix(2, 2), w, w), ShapeError);
}

TEST(DotProduct, ScaledRowDominates) {
  Matrix q = Matrix::identity(4);
  for (std::size_t j = 0; j < 4; ++j) q(0, j) *= 100.0;
  std::mt19937_64 rng(2);
  const auto out = dot_product_attention(q, q, rand_matrix(4, 3, rng));
  EXPECT_GT(out.S(0, 0), 0.99);
  expect_row_stochastic(out.S);
}

TEST(DotProduct, SingleTokenAndUniformQuery) {
  std::mt19937_64 rng(3);
  const Matrix v = rand_matrix(1, 4, rng);
  const auto one = dot_product_attention(rand_matrix(1, 4, rng), rand_matrix(1, 4, rng), v);
  EXPECT_EQ(one.S, Matrix::from_rows({{1.0}}));
  EXPECT_EQ(one.Y, v);

  Matrix q(5, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) q(i, j) = 0.1 * double(j + 1);
  const auto out = dot_product_attention(q, rand_matrix(5, 3, rng), rand_matrix(5, 2, rng));
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(out.S(i, j), out.S(0, j));
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(out.Y(i, j), out.Y(0, j));
}

TEST(Dense, ShapesAtFourByFour) {
  std::mt19937_64 rng(4);
  const Tensor o = rand_tensor({4, 4, 8}, rng);
  const auto out = dense_synthesizer(o, rand_matrix(16, 4, rng), rand_matrix(16, 4, rng),
                                     rand_matrix(1, 8, rng), rand_matrix(16, 8, rng));
  EXPECT_EQ(out.S.rows(), 16u);
  EXPECT_EQ(out.S.cols(), 16u);
  EXPECT_EQ(out.Y.rows(), 16u);
  EXPECT_EQ(out.Y.cols(), 8u);
  Tensor z = mode_n_product(o, rand_matrix(16, 4, rng), 0);
  z = mode_n_product(z, rand_matrix(16, 4, rng), 1);
  z = mode_n_product(z, rand_matrix(1, 8, rng), 2);
  EXPECT_EQ(z.shape(), (Shape{16, 16, 1}));
}

TEST(Dense, ZeroMapsGiveUniformAttention) {
  std::mt19937_64 rng(5);
  const Matrix v = rand_matrix(6, 3, rng);
  const auto out = dense_synthesizer(rand_tensor({2, 3, 4}, rng), Matrix(6, 2), Matrix(6, 3),
                                     rand_matrix(1, 4, rng), v);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(out.S(i, j), 1.0 / 6.0);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 6; ++i) mean += v(i, c) / 6.0;
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out.Y(i, c), mean, 1e-15);
  }
}

TEST(Dense, MatchesTripleSumOracle) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const Tensor o = rand_tensor({2, 3, 4}, rng);
    const Matrix a = rand_matrix(6, 2, rng), b = rand_matrix(6, 3, rng), c = rand_matrix(1, 4, rng);
    EXPECT_LT(max_diff(dense_logits(o, a, b, c), brute_dense_logits(o, a, b, c)), 1e-12);
  }
}

TEST(Dense, ShapeErrorsNameTheViolatedMap) {
  std::mt19937_64 rng(7);
  const Tensor o = rand_tensor({2, 3, 4}, rng);
  try {
    (void)dense_logits(o, rand_matrix(6, 3, rng), rand_matrix(6, 3, rng), rand_matrix(1, 4, rng));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("height map (HW x H)"), std::string::npos) << e.what();
  }
  try {
    (void)dense_logits(o, rand_matrix(6, 2, rng), rand_matrix(6, 3, rng), rand_matrix(4, 1, rng));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel map (1 x d)"), std::string::npos) << e.what();
  }
}

TEST(Dense, SingleTokenReturnsValue) {
  std::mt19937_64 rng(8);
  const Matrix v = rand_matrix(1, 5, rng);
  const auto out = dense_synthesizer(rand_tensor({1, 1, 5}, rng), rand_matrix(1, 1, rng),
                                     rand_matrix(1, 1, rng), rand_matrix(1, 5, rng), v);
  EXPECT_LT(max_diff(out.Y, v), 1e-15);
}

TEST(Random, ZeroLogitsGiveMeanRows) {
  std::mt19937_64 rng(9);
  const Matrix v = rand_matrix(4, 3, rng);
  const auto out = random_synthesizer(Matrix(4, 4), v);
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = (v(0, c) + v(1, c) + v(2, c) + v(3, c)) / 4.0;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.Y(i, c), mean, 1e-15);
  }
}

TEST(Random, SaturatedDiagonalCopiesValue) {
  std::mt19937_64 rng(10);
  Matrix r = rand_matrix(9, 9, rng);
  for (std::size_t i = 0; i < 9; ++i) r(i, i) += 1000.0;
  const Matrix v = rand_matrix(9, 4, rng);
  const auto out = random_synthesizer(r, v);
  EXPECT_LT(max_diff(out.S, Matrix::identity(9)), 1e-6);
  EXPECT_LT(max_diff(out.Y, v), 1e-6);
}

TEST(Random, AttentionIgnoresValues) {
  std::mt19937_64 rng(11);
  const Matrix r = rand_matrix(6, 6, rng);
  EXPECT_EQ(random_synthesizer(r, rand_matrix(6, 2, rng)).S,
            random_synthesizer(r, rand_matrix(6, 2, rng)).S);
  EXPECT_THROW((void)random_synthesizer(rand_matrix(5, 6, rng), rand_matrix(6, 2, rng)), ShapeError);
}

TEST(Axis, ShapesAndOracle) {
  std::mt19937_64 rng(12);
  const Tensor big = rand_tensor({4, 4, 8}, rng);
  Tensor zh = mode_n_product(big, rand_matrix(1, 4, rng), 0);
  zh = mode_n_product(zh, rand_matrix(16, 4, rng), 1);
  zh = mode_n_product(zh, rand_matrix(16, 8, rng), 2);
  EXPECT_EQ(zh.shape(), (Shape{1, 16, 16}));
  const auto out = axis_synthesizer(big, Axis::H, rand_matrix(1, 4, rng), rand_matrix(16, 4, rng),
                                    rand_matrix(16, 8, rng), rand_matrix(16, 8, rng));
  EXPECT_EQ(out.S.rows(), 16u);

  for (int t = 0; t < 20; ++t) {
    const Tensor o = rand_tensor({2, 3, 2}, rng);
    const Matrix ah = rand_matrix(1, 2, rng), aw = rand_matrix(6, 3, rng), ac = rand_matrix(6, 2, rng);
    EXPECT_LT(max_diff(axis_logits(o, Axis::H, ah, aw, ac), brute_axis_h_logits(o, ah, aw, ac)), 1e-12);
    const Matrix bh = rand_matrix(6, 2, rng), bw = rand_matrix(1, 3, rng);
    EXPECT_LT(max_diff(axis_logits(o, Axis::W, bh, bw, ac), brute_axis_w_logits(o, bh, bw, ac)), 1e-12);
  }
}

TEST(Axis, ZeroParamsGiveUniformAttention) {
  std::mt19937_64 rng(13);
  const auto out = axis_synthesizer(rand_tensor({2, 3, 2}, rng), Axis::W, Matrix(6, 2), Matrix(1, 3),
                                    Matrix(6, 2), rand_matrix(6, 2, rng));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(out.S(i, j), 1.0 / 6.0);
  EXPECT_THROW((void)axis_logits(rand_tensor({2, 3, 2}, rng), Axis::H, Matrix(6, 2), Matrix(6, 3),
                                 Matrix(6, 2)),
               ShapeError);
}

TEST(FactoredDense, SingleFactorIsBitwiseDense) {
  std::mt19937_64 rng(14);
  const Tensor o = rand_tensor({2, 3, 4}, rng);
  const Matrix a = rand_matrix(6, 2, rng), b = rand_matrix(6, 3, rng), c = rand_matrix(1, 4, rng);
  const Matrix zf = factored_dense_logits(o, KroneckerFactoredMap({a}), KroneckerFactoredMap({b}),
                                          KroneckerFactoredMap({c}));
  EXPECT_TRUE(bitwise_equal(zf.to_tensor(), dense_logits(o, a, b, c).to_tensor()));
}

TEST(FactoredDense, EqualsDenseOnMaterializedMaps) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 50; ++t) {
    const Tensor o = rand_tensor({4, 4, 8}, rng);
    const KroneckerFactoredMap fh({rand_matrix(4, 2, rng), rand_matrix(4, 2, rng)});
    const KroneckerFactoredMap fw({rand_matrix(4, 2, rng), rand_matrix(4, 2, rng)});
    const KroneckerFactoredMap fc({rand_matrix(1, 2, rng), rand_matrix(1, 4, rng)});
    const Matrix v = rand_matrix(16, 8, rng);
    const auto f = factored_dense_synthesizer(o, fh, fw, fc, v);
    const auto d = dense_synthesizer(o, fh.materialize(), fw.materialize(), fc.materialize(), v);
    EXPECT_LT(max_diff(f.Y, d.Y), 1e-10);
    EXPECT_LT(max_diff(f.S, d.S), 1e-10);
  }
}

TEST(FactoredDense, FewerParamsThanDense) {
  const KroneckerFactoredMap fh({Matrix(8, 2), Matrix(8, 4)});
  EXPECT_EQ(fh.out_dim() * fh.in_dim(), 512u);
  EXPECT_LT(fh.param_count(), 512u);
}

TEST(FactoredRandom, EqualsRandomOnMaterializedMap) {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 50; ++t) {
    const KroneckerFactoredMap r({rand_matrix(3, 3, rng), rand_matrix(4, 4, rng)});
    const Matrix v = rand_matrix(12, 5, rng);
    EXPECT_LT(max_diff(factored_random_synthesizer(r, v).Y, random_synthesizer(r.materialize(), v).Y),
              1e-10);
  }
}

TEST(FactoredRandom, IdentityFactorsClosedForm) {
  std::mt19937_64 rng(17);
  const std::size_t hw = 16;
  const auto out = factored_random_synthesizer(
      KroneckerFactoredMap({Matrix::identity(4), Matrix::identity(4)}), rand_matrix(hw, 3, rng));
  const double e = std::exp(1.0);
  for (std::size_t i = 0; i < hw; ++i) {
    EXPECT_NEAR(out.S(i, i), e / (e + double(hw) - 1.0), 1e-15);
    EXPECT_NEAR(out.S(i, (i + 1) % hw), 1.0 / (e + double(hw) - 1.0), 1e-15);
  }
}

TEST(FactoredRandom, SingleFactorIsBitwiseRandom) {
  std::mt19937_64 rng(18);
  const Matrix r = rand_matrix(6, 6, rng), v = rand_matrix(6, 2, rng);
  const auto a = factored_random_synthesizer(KroneckerFactoredMap({r}), v);
  const auto b = random_synthesizer(r, v);
  EXPECT_TRUE(bitwise_equal(a.Y.to_tensor(), b.Y.to_tensor()));
}

TEST(Mixture, IdenticalComponentsAndSaturatedMixing) {
  std::mt19937_64 rng(19);
  const Matrix z1 = rand_matrix(5, 5, rng), z2 = rand_matrix(5, 5, rng), v = rand_matrix(5, 3, rng);
  const std::vector<Matrix> same{z1, z1};
  const auto m = mixture_synthesizer(same, Matrix::from_rows({{0.3, -1.2}}), v);
  EXPECT_LT(max_diff(m.Y, random_synthesizer(z1, v).Y), 1e-12);

  const std::vector<Matrix> both{z1, z2};
  const auto sat = mixture_synthesizer(both, Matrix::from_rows({{1000, -1000}}), v);
  EXPECT_LT(max_diff(sat.Y, random_synthesizer(z1, v).Y), 1e-9);
  const auto sat2 = mixture_synthesizer(both, Matrix::from_rows({{-1000, 1000}}), v);
  EXPECT_LT(max_diff(sat2.Y, random_synthesizer(z2, v).Y), 1e-9);
}

TEST(Mixture, MixesLogitsBeforeOneSoftmax) {
  std::mt19937_64 rng(20);
  const Matrix z1 = rand_matrix(4, 4, rng), z2 = rand_matrix(4, 4, rng);
  const std::vector<Matrix> both{z1, z2};
  const Matrix mixed = mix_logits(both, Matrix::from_rows({{0.0, 0.0}}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(mixed(i, j), 0.5 * (z1(i, j) + z2(i, j)), 1e-15);
  const std::vector<Matrix> bad{z1, rand_matrix(3, 3, rng)};
  EXPECT_THROW((void)mix_logits(bad, Matrix(1, 2)), ShapeError);
  EXPECT_THROW((void)mix_logits(both, Matrix(1, 3)), ShapeError);
}

TEST(Mixture, DefaultComponents) {
  const SynthesizerSpec s;
  EXPECT_EQ(s.components, (std::vector<SynthKind>{SynthKind::FactoredRandom, SynthKind::Dense}));
}

TEST(ParamCount, StatedCounts) {
  EXPECT_EQ(synthesizer_param_count(spec_for(SynthKind::Dense, 8, 8, 16, 16)), 1040u);
  EXPECT_EQ(synthesizer_param_count(spec_for(SynthKind::Random, 8, 8, 16, 16)), 4096u);
  EXPECT_EQ(synthesizer_param_count(spec_for(SynthKind::FactoredRandom, 8, 8, 16, 16)), 128u);
  SynthesizerSpec frozen = spec_for(SynthKind::Random, 8, 8, 16, 16);
  frozen.trainable = false;
  EXPECT_EQ(synthesizer_param_count(frozen), 0u);
  EXPECT_EQ(synthesizer_param_count(spec_for(SynthKind::DotProduct, 8, 8, 16, 16)), 0u);
}

TEST(ParamCount, FactoredRandomSplitsSpatially) {
  const AttentionBlock b(spec_for(SynthKind::FactoredRandom, 2, 3, 4, 4));
  ASSERT_EQ(b.layout().size(), 3u);
  EXPECT_EQ(b.layout()[1].shape, (Shape{3, 3}));
  EXPECT_EQ(b.layout()[2].shape, (Shape{2, 2}));
  EXPECT_THROW(AttentionBlock(spec_for(SynthKind::FactoredRandom, 1, 5, 4, 4)), std::invalid_argument);
}

class AllKinds : public ::testing::TestWithParam<SynthKind> {};

TEST_P(AllKinds, RowStochastic) {
  std::mt19937_64 rng(21);
  const AttentionBlock block(spec_for(GetParam(), 2, 3, 3, 4));
  for (int t = 0; t < 100; ++t) {
    auto params = block.init(rng);
    for (Tensor& p : params)
      for (double& v : p.data()) v = std::uniform_real_distribution<double>(-2, 2)(rng);
    const auto out = block.forward(params, rand_tensor({2, 3, 3}, rng));
    expect_row_stochastic(out.S);
  }
}

TEST_P(AllKinds, OutputsLieInValueHull) {
  std::mt19937_64 rng(22);
  const AttentionBlock block(spec_for(GetParam(), 2, 3, 3, 4));
  for (int t = 0; t < 100; ++t) {
    auto params = block.init(rng);
    for (Tensor& p : params)
      for (double& v : p.data()) v = std::uniform_real_distribution<double>(-2, 2)(rng);
    const Tensor feat = rand_tensor({2, 3, 3}, rng);
    const auto out = block.forward(params, feat);
    const Matrix v = matmul(Matrix::from_tensor(feat.reshaped({6, 3})), Matrix::from_tensor(params[0]));
    for (std::size_t c = 0; c < 4; ++c) {
      double lo = v(0, c), hi = v(0, c);
      for (std::size_t i = 1; i < 6; ++i) {
        lo = std::min(lo, v(i, c));
        hi = std::max(hi, v(i, c));
      }
      for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_GE(out.Y(i, c), lo - 1e-12);
        EXPECT_LE(out.Y(i, c), hi + 1e-12);
      }
    }
  }
}

TEST_P(AllKinds, GraphForwardIsBitwisePure) {
  std::mt19937_64 rng(23);
  const AttentionBlock block(spec_for(GetParam(), 2, 3, 3, 4));
  const auto params = block.init(rng);
  const Tensor feat = rand_tensor({2, 3, 3}, rng);
  const auto pure = block.forward(params, feat);
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Tensor& p : params) vars.push_back(tape.leaf(p));
  const auto g = block.forward(vars, tape.leaf(feat));
  EXPECT_TRUE(bitwise_equal(g.S.value(), pure.S.to_tensor()));
  EXPECT_TRUE(bitwise_equal(g.Y.value(), pure.Y.to_tensor()));
}

TEST_P(AllKinds, EndToEndGradCheck) {
  for (std::uint64_t seed : {31u, 32u}) {
    std::mt19937_64 rng(seed);
    const AttentionBlock block(spec_for(GetParam(), 2, 3, 3, 4));
    std::vector<Tensor> inputs = block.init(rng);
    inputs.push_back(rand_tensor({2, 3, 3}, rng));
    const Tensor weight = rand_tensor({6, 4}, rng);
    ad::MultiScalarFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
      const auto out = block.forward(v.first(v.size() - 1), v.back());
      return ad::sum(ad::mul(out.Y, t.constant(weight)));
    };
    const auto r = ad::grad_check(f, inputs);
    EXPECT_TRUE(r.pass) << kind_name(GetParam()) << " seed " << seed << " rel " << r.max_rel_err;
  }
}

INSTANTIATE_TEST_SUITE_P(Synthesizers, AllKinds, ::testing::ValuesIn(kAllSynthKinds),
                         [](const auto& info) { return std::string(kind_name(info.param)); });

TEST(Block, FrozenRandomIsNotTrainable) {
  SynthesizerSpec s = spec_for(SynthKind::Random, 2, 2, 2, 2);
  s.trainable = false;
  const AttentionBlock b(s);
  EXPECT_FALSE(b.layout().back().trainable);
  EXPECT_TRUE(b.layout().front().trainable);
}

TEST(Block, RejectsBadSpecsAndInputs) {
  SynthesizerSpec s = spec_for(SynthKind::Dense, 2, 2, 3, 4);
  s.identity_projection = true;
  EXPECT_THROW(AttentionBlock{s}, ShapeError);
  const AttentionBlock b(spec_for(SynthKind::Dense, 2, 2, 3, 4));
  std::mt19937_64 rng(24);
  const auto params = b.init(rng);
  EXPECT_THROW((void)b.forward(params, rand_tensor({2, 2, 4}, rng)), ShapeError);
  EXPECT_THROW((void)b.forward(std::span<const Tensor>(params).first(2), rand_tensor({2, 2, 3}, rng)),
               ShapeError);
}

TEST(Block, MixtureLayoutEndsWithZeroMixingLogits) {
  const AttentionBlock b(spec_for(SynthKind::Mixture, 2, 2, 4, 4));
  std::mt19937_64 rng(25);
  const auto params = b.init(rng);
  EXPECT_EQ(b.layout().back().name, "mixing_logits");
  EXPECT_EQ(params.back().shape(), (Shape{1, 2}));
  EXPECT_EQ(max_abs(params.back()), 0.0);
  EXPECT_EQ(b.layout()[1].name, "mix0.logits.0");
}
