// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "stt/kron.hpp"
#include "test_util.hpp"

using namespace stt;
using stt::testing::rand_matrix;

namespace {

std::vector<double> rand_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST(KronMap, DimsFromFactors) {
  std::mt19937_64 rng(1);
  const KroneckerFactoredMap m({rand_matrix(3, 2, rng), rand_matrix(2, 4, rng), rand_matrix(5, 1, rng)});
  EXPECT_EQ(m.out_dim(), 30u);
  EXPECT_EQ(m.in_dim(), 8u);
  EXPECT_THROW(KroneckerFactoredMap({}), ShapeError);
}

TEST(KronMap, MaterializeSmallCases) {
  std::mt19937_64 rng(2);
  const Matrix a = rand_matrix(3, 5, rng);
  EXPECT_EQ(KroneckerFactoredMap({a}).materialize(), a);
  EXPECT_EQ(KroneckerFactoredMap({Matrix::identity(2), Matrix::identity(2)}).materialize(),
            Matrix::identity(4));
  const Matrix big = KroneckerFactoredMap({rand_matrix(8, 8, rng), rand_matrix(8, 8, rng)}).materialize();
  EXPECT_EQ(big.rows(), 64u);
  EXPECT_EQ(big.cols(), 64u);
}

TEST(KronMap, MaterializeFollowsLeftToRightOrder) {
  std::mt19937_64 rng(3);
  const Matrix a = rand_matrix(2, 3, rng), b = rand_matrix(3, 2, rng), c = rand_matrix(2, 2, rng);
  using namespace stt::testing;
  const auto ref = ref_kron(ref_kron(dense(a), dense(b)), dense(c));
  const Matrix m = KroneckerFactoredMap({a, b, c}).materialize();
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) EXPECT_NEAR(m(i, j), ref[i][j], 1e-15);
}

TEST(KronMap, GuardLimit) {
  std::mt19937_64 rng(4);
  const KroneckerFactoredMap m({rand_matrix(8, 8, rng), rand_matrix(8, 8, rng)});
  EXPECT_THROW((void)m.materialize(4095), GuardLimitError);
  EXPECT_NO_THROW((void)m.materialize(4096));
  // 32768 x 32768 dense would need about 1e9 entries.
  const KroneckerFactoredMap huge({Matrix::identity(32), Matrix::identity(32), Matrix::identity(32)});
  EXPECT_THROW((void)huge.materialize(), GuardLimitError);
  // apply never materializes, so the same map still works on a vector.
  const auto x = rand_vec(32 * 32 * 32, rng);
  EXPECT_EQ(huge.apply(x), x);
}

TEST(KronMap, ApplyIdentityFactors) {
  std::mt19937_64 rng(5);
  const KroneckerFactoredMap m({Matrix::identity(3), Matrix::identity(4)});
  const auto x = rand_vec(12, rng);
  const auto y = m.apply(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
}

TEST(KronMap, ApplyThreeByTwoTwoByFour) {
  std::mt19937_64 rng(6);
  const Matrix a = rand_matrix(3, 2, rng), b = rand_matrix(2, 4, rng);
  const KroneckerFactoredMap m({a, b});
  const auto x = rand_vec(8, rng);
  using namespace stt::testing;
  const auto expect = ref_matvec(ref_kron(dense(a), dense(b)), x);
  const auto y = m.apply(x);
  ASSERT_EQ(y.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_LT(std::abs(y[i] - expect[i]), 1e-10);
}

TEST(KronMap, ApplyMatchesMaterializedOnRandomChains) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> nf(1, 4), dim(1, 4);
  for (int t = 0; t < 200; ++t) {
    std::vector<Matrix> fs;
    for (std::size_t k = nf(rng); k > 0; --k) fs.push_back(rand_matrix(dim(rng), dim(rng), rng));
    const KroneckerFactoredMap m(fs);
    const auto x = rand_vec(m.in_dim(), rng);
    const auto expect = stt::testing::ref_matvec(stt::testing::dense(m.materialize()), x);
    const auto y = m.apply(x);
    ASSERT_EQ(y.size(), m.out_dim());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_LT(std::abs(y[i] - expect[i]), 1e-10);
  }
}

TEST(KronMap, ModeProductMatchesMaterializedAtEveryMode) {
  std::mt19937_64 rng(8);
  const KroneckerFactoredMap m({rand_matrix(2, 3, rng), rand_matrix(3, 2, rng)});
  const Matrix full = m.materialize();
  const Tensor x = stt::testing::rand_tensor({6, 2, 6}, rng);
  for (std::size_t mode : {0u, 2u})
    EXPECT_LT(max_abs_diff(m.mode_product(x, mode), mode_n_product(x, full, mode)), 1e-12);
  EXPECT_THROW((void)m.mode_product(x, 1), ShapeError);
  EXPECT_THROW((void)m.mode_product(x, 3), ShapeError);
}

TEST(KronMap, ApplyLengthMismatch) {
  std::mt19937_64 rng(9);
  const KroneckerFactoredMap m({rand_matrix(3, 2, rng), rand_matrix(2, 4, rng)});
  EXPECT_THROW((void)m.apply(std::vector<double>(7)), ShapeError);
}

TEST(KronMap, ParamCounts) {
  EXPECT_EQ(KroneckerFactoredMap({Matrix(8, 8), Matrix(8, 8)}).param_count(), 128u);
  EXPECT_EQ(KroneckerFactoredMap({Matrix(64, 64)}).param_count(), 4096u);
  EXPECT_EQ(KroneckerFactoredMap({Matrix(4, 4), Matrix(4, 4), Matrix(4, 4)}).param_count(), 48u);
}

TEST(KronMap, FactoredCountBelowDenseForNontrivialSplits) {
  for (std::size_t out : {4u, 6u, 16u, 64u})
    for (std::size_t in : {4u, 8u, 16u})
      for (std::size_t parts : {2u, 3u}) {
        std::vector<FactorShape> shapes;
        try {
          shapes = factor_shapes(out, in, parts);
        } catch (const std::invalid_argument&) {
          continue;
        }
        std::vector<Matrix> fs;
        std::size_t ro = 1, ci = 1;
        for (const FactorShape& s : shapes) {
          fs.emplace_back(s.rows, s.cols);
          ro *= s.rows;
          ci *= s.cols;
        }
        EXPECT_EQ(ro, out);
        EXPECT_EQ(ci, in);
        EXPECT_LT(KroneckerFactoredMap(fs).param_count(), out * in) << out << "x" << in;
      }
}

TEST(KronMap, ApplyCountsFewerMultiplyAdds) {
  std::mt19937_64 rng(10);
  const KroneckerFactoredMap m({rand_matrix(32, 32, rng), rand_matrix(32, 32, rng)});
  OpCount c;
  (void)m.apply(rand_vec(1024, rng), &c);
  EXPECT_EQ(c.multiply_adds, 2u * 1024u * 32u);
  EXPECT_LT(c.multiply_adds * 8, 1024u * 1024u);
}

TEST(FactorShapes, BalancedAndRejectsPrimes) {
  EXPECT_EQ(balanced_split(64, 2), (std::vector<std::size_t>{8, 8}));
  EXPECT_EQ(balanced_split(12, 2), (std::vector<std::size_t>{3, 4}));
  EXPECT_EQ(balanced_split(7, 1), (std::vector<std::size_t>{7}));
  EXPECT_THROW((void)factor_shapes(7, 1, 2), std::invalid_argument);
  const auto s = factor_shapes(16, 4, 2);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], (FactorShape{4, 2}));
}
