#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsvr/error.hpp"
#include "tsvr/matrix.hpp"
#include "tsvr/rng.hpp"

namespace tsvr {
namespace {

using testing::random_matrix;

TEST(Matrix, MatmulIdentityAndHandProduct) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(a, Matrix::identity(2)), a);
  const Matrix p = matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}, {4}}));
  ASSERT_EQ(p.rows(), 1u);
  ASSERT_EQ(p.cols(), 1u);
  EXPECT_EQ(p(0, 0), 11.0);
}

TEST(Matrix, MatmulShapeErrorNamesBothShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(4, 2));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x2"), std::string::npos) << msg;
  }
}

TEST(Matrix, MatmulAssociativityOnRandomChains) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = random_matrix(3, 3, rng), b = random_matrix(3, 3, rng),
                 c = random_matrix(3, 3, rng);
    const Matrix l = matmul(matmul(a, b), c);
    const Matrix r = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(l[i], r[i], 1e-10);
  }
}

TEST(Matrix, TransposedProductsAgreeWithExplicitTranspose) {
  Rng rng(3);
  const Matrix a = random_matrix(5, 7, rng), b = random_matrix(6, 7, rng), c = random_matrix(5, 4, rng);
  EXPECT_TRUE(bitwise_equal(matmul_nt(a, b), matmul(a, transpose(b))));
  EXPECT_TRUE(bitwise_equal(matmul_tn(a, c), matmul(transpose(a), c)));
}

TEST(Matrix, RowStatsHandExamples) {
  const ColumnStats s = row_stats(Matrix::from_rows({{0, 5, 1}, {2, 5, 2}, {0, 5, 3}, {2, 5, 4}}));
  EXPECT_EQ(s.mean(0, 0), 1.0);
  EXPECT_EQ(s.variance(0, 0), 1.0);
  EXPECT_EQ(s.mean(0, 1), 5.0);
  EXPECT_EQ(s.variance(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s.mean(0, 2), 2.5);
  EXPECT_DOUBLE_EQ(s.variance(0, 2), 1.25);
  EXPECT_THROW(row_stats(Matrix(0, 3)), ShapeError);
}

TEST(Matrix, RowStatsVarianceNonNegative) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const ColumnStats s = row_stats(random_matrix(7, 9, rng, 1e3));
    for (double v : s.variance.values()) EXPECT_GE(v, 0.0);
  }
}

TEST(Matrix, SoftmaxSigmoidRelu) {
  const Matrix s = softmax_rows(Matrix::from_rows({{0, 0}, {std::log(3.0), 0}}));
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
  EXPECT_NEAR(s(1, 0), 0.75, 1e-15);
  EXPECT_NEAR(s(1, 1), 0.25, 1e-15);
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_EQ(relu(Matrix::from_rows({{-1, 0, 2}})), Matrix::from_rows({{0, 0, 2}}));

  Rng rng(9);
  const Matrix big = softmax_rows(random_matrix(10, 6, rng, 50.0));
  for (std::size_t i = 0; i < big.rows(); ++i) {
    double sum = 0.0;
    for (double v : big.row(i)) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Matrix, LogSoftmaxMatchesLogOfSoftmax) {
  Rng rng(4);
  const Matrix x = random_matrix(4, 5, rng, 3.0);
  const Matrix ls = log_softmax_rows(x), s = softmax_rows(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(ls[i], std::log(s[i]), 1e-13);
}

TEST(Matrix, ConcatCols) {
  EXPECT_EQ(concat_cols(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}})),
            Matrix::from_rows({{1, 2, 3}}));
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(concat_cols(a, Matrix(2, 0)), a);
  EXPECT_THROW(concat_cols(Matrix(2, 1), Matrix(3, 1)), ShapeError);
}

TEST(Matrix, BitwiseEqualDistinguishesSignedZero) {
  EXPECT_TRUE(Matrix::from_rows({{0.0}}) == Matrix::from_rows({{-0.0}}));
  EXPECT_FALSE(bitwise_equal(Matrix::from_rows({{0.0}}), Matrix::from_rows({{-0.0}})));
}

TEST(Matrix, RequireFiniteNamesEntry) {
  Matrix m(2, 2);
  m(1, 0) = NAN;
  EXPECT_FALSE(all_finite(m));
  try {
    require_finite(m, "probe");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("probe"), std::string::npos);
  }
}

TEST(Bilinear, HandExample) {
  const std::vector<double> x{1, 2}, a{3, 4};
  const BilinearForms f = bilinear_equivalence(x, a, Matrix::identity(2));
  EXPECT_EQ(f.lhs, 11.0);
  EXPECT_EQ(f.rhs, 11.0);
  const BilinearForms z = bilinear_equivalence(x, a, Matrix(2, 2));
  EXPECT_EQ(z.lhs, 0.0);
  EXPECT_EQ(z.rhs, 0.0);
  EXPECT_THROW(bilinear_equivalence(x, a, Matrix(3, 2)), ShapeError);
}

TEST(Bilinear, KroneckerLayout) {
  const std::vector<double> x{1, 2}, a{3, 4, 5};
  EXPECT_EQ(kronecker(x, a), (std::vector<double>{3, 4, 5, 6, 8, 10}));
}

TEST(Bilinear, RandomInstancesAllDimensions) {
  Rng rng(2024);
  for (std::size_t d = 1; d <= 8; ++d) {
    for (std::size_t r = 1; r <= 8; ++r) {
      const Matrix x = random_matrix(1, d, rng), a = random_matrix(1, r, rng),
                   w = random_matrix(d, r, rng);
      const BilinearForms f = bilinear_equivalence(x.values(), a.values(), w);
      EXPECT_LE(std::abs(f.lhs - f.rhs), 1e-12 * (1.0 + std::abs(f.lhs)));
    }
  }
}

TEST(FiniteDiff, KnownDerivatives) {
  const Matrix g = finite_diff_grad(
      [](const Matrix& m) {
        double s = 0.0;
        for (double v : m.values()) s += v * v;
        return s;
      },
      Matrix::from_rows({{3}}));
  EXPECT_NEAR(g(0, 0), 6.0, 1e-6);
  const Matrix c = finite_diff_grad([](const Matrix&) { return 4.0; }, Matrix(2, 2, 1.0));
  for (double v : c.values()) EXPECT_EQ(v, 0.0);
  const Matrix s = finite_diff_grad([](const Matrix& m) { return sigmoid(m(0, 0)); }, Matrix(1, 1));
  EXPECT_NEAR(s(0, 0), 0.25, 1e-10);
}

TEST(FiniteDiff, NonFiniteEvaluationNamesEntry) {
  try {
    finite_diff_grad([](const Matrix& m) { return m(0, 1) > 1.0 ? NAN : 0.0; },
                     Matrix::from_rows({{0, 1}}));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("(0, 1)"), std::string::npos) << e.what();
  }
}

// SplitMix64 reference outputs for seed 0.
TEST(Rng, SplitMixReferenceValues) {
  std::uint64_t s = 0;
  EXPECT_EQ(splitmix64(s), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(splitmix64(s), 0x6e789e6aa1b965f4ULL);
}

// Independent transcription of the xoshiro256** step.
std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
std::uint64_t xoshiro_ref(std::array<std::uint64_t, 4>& s) {
  const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
  const std::uint64_t t = s[1] << 17;
  s[2] ^= s[0];
  s[3] ^= s[1];
  s[1] ^= s[2];
  s[0] ^= s[3];
  s[2] ^= t;
  s[3] = rotl(s[3], 45);
  return result;
}

TEST(Rng, MatchesReferenceXoshiro) {
  Rng rng(42);
  std::array<std::uint64_t, 4> ref = rng.state();
  std::uint64_t sm = 42;
  std::array<std::uint64_t, 4> seeded{splitmix64(sm), splitmix64(sm), splitmix64(sm),
                                      splitmix64(sm)};
  EXPECT_EQ(ref, seeded);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(rng.next_u64(), xoshiro_ref(ref));
}

TEST(Rng, EqualSeedsEqualStreams) {
  Rng a(7), b(7), c(8);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs |= x != c.normal();
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a, b);
  EXPECT_EQ(Rng::from_state(a.state()).next_u64(), b.next_u64());
}

TEST(Rng, UniformAndIndexRanges) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.uniform_index(7), 7u);
  }
  EXPECT_THROW(rng.uniform_index(0), Error);
}

TEST(Rng, NormalMoments) {
  Rng rng(99);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    ss += v * v;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(ss / n - mean * mean, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng rng(5);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

}  // namespace
}  // namespace tsvr
