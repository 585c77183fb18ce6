#include <cstring>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsvr/data.hpp"
#include "tsvr/simd.hpp"
#include "tsvr/training.hpp"

namespace tsvr {
namespace {

using testing::random_matrix;

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<double> randoms(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

class IsaGuard {
 public:
  IsaGuard() : saved_(simd::active_isa()) {}
  ~IsaGuard() { simd::set_active_isa(saved_); }

 private:
  simd::Isa saved_;
};

TEST(Simd, ScalarAlwaysSupported) {
  EXPECT_TRUE(simd::isa_supported(simd::Isa::Scalar));
  EXPECT_EQ(simd::isa_name(simd::Isa::Scalar), "scalar");
  EXPECT_EQ(simd::isa_name(simd::Isa::Avx2), "avx2");
}

TEST(Simd, GemmScalarMatchesNaiveLoop) {
  Rng rng(1);
  const std::size_t m = 5, k = 7, n = 3;
  const auto a = randoms(m * k, rng), b = randoms(k * n, rng);
  std::vector<double> c(m * n, 0.0), ref(m * n, 0.0);
  simd::scalar_kernels().gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      ref[i * n + j] = s;
    }
  }
  EXPECT_TRUE(same_bits(c, ref));
}

// Odd shapes cover every remainder branch of the vector loops.
class SimdEquivalence : public ::testing::TestWithParam<std::tuple<int, int, int>> {};

TEST_P(SimdEquivalence, KernelsBitIdentical) {
  if (!simd::isa_supported(simd::Isa::Avx2)) GTEST_SKIP() << "no AVX2 on this CPU";
  const auto& s = simd::kernels_for(simd::Isa::Scalar);
  const auto& v = simd::kernels_for(simd::Isa::Avx2);
  const auto [mi, ki, ni] = GetParam();
  const std::size_t m = mi, k = ki, n = ni;
  Rng rng(m * 100 + k * 10 + n);

  const auto a = randoms(m * k, rng), b = randoms(k * n, rng), c0 = randoms(m * n, rng);
  auto cs = c0, cv = c0;
  s.gemm_nn(a.data(), b.data(), cs.data(), m, k, n);
  v.gemm_nn(a.data(), b.data(), cv.data(), m, k, n);
  EXPECT_TRUE(same_bits(cs, cv)) << "gemm_nn";

  const auto bt = randoms(m * n, rng), ct0 = randoms(k * n, rng);
  auto ts = ct0, tv = ct0;
  s.gemm_tn(a.data(), bt.data(), ts.data(), m, k, n);
  v.gemm_tn(a.data(), bt.data(), tv.data(), m, k, n);
  EXPECT_TRUE(same_bits(ts, tv)) << "gemm_tn";

  const std::size_t len = m * k;
  auto ys = randoms(len, rng), yv = ys;
  s.axpy(0.37, a.data(), ys.data(), len);
  v.axpy(0.37, a.data(), yv.data(), len);
  EXPECT_TRUE(same_bits(ys, yv)) << "axpy";

  auto ps = randoms(len, rng), ms = randoms(len, rng), vs = randoms(len, rng);
  for (double& x : vs) x = x * x;
  auto pv = ps, mv = ms, vv = vs;
  const simd::AdamCoefficients co{0.9, 0.999, 1e-8, 1e-3, 1.0 - 0.9 * 0.9, 1.0 - 0.999 * 0.999};
  s.adam_update(ps.data(), a.data(), ms.data(), vs.data(), len, co);
  v.adam_update(pv.data(), a.data(), mv.data(), vv.data(), len, co);
  EXPECT_TRUE(same_bits(ps, pv) && same_bits(ms, mv) && same_bits(vs, vv)) << "adam";
}

std::string shape_name(const std::tuple<int, int, int>& shape) {
  return std::to_string(std::get<0>(shape)) + "x" + std::to_string(std::get<1>(shape)) + "x" +
         std::to_string(std::get<2>(shape));
}

INSTANTIATE_TEST_SUITE_P(Shapes, SimdEquivalence,
                         ::testing::Values(std::make_tuple(1, 1, 1), std::make_tuple(3, 5, 7),
                                           std::make_tuple(4, 8, 8), std::make_tuple(5, 9, 13),
                                           std::make_tuple(17, 3, 33), std::make_tuple(32, 64, 64),
                                           std::make_tuple(2, 0, 5), std::make_tuple(9, 31, 1)),
                         [](const auto& info) {
                           return shape_name(info.param);
                         });

// A short training run is bitwise the same on both kernel paths.
TEST(Simd, TrainingRunIdenticalAcrossIsas) {
  if (!simd::isa_supported(simd::Isa::Avx2)) GTEST_SKIP() << "no AVX2 on this CPU";
  IsaGuard guard;
  SyntheticSpec spec;
  spec.source_classes = 6;
  spec.target_classes = 3;
  spec.feature_dim = 12;
  spec.attribute_dim = 6;
  spec.samples_per_class = 8;
  const ZslDataset data = generate_synthetic(spec).dataset;
  TrainConfig cfg;
  cfg.max_iterations = 15;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  cfg.encoder_hidden = 9;
  cfg.metric_hidden = 11;
  cfg.lambda_ent = 0.1;
  cfg.lambda_rec = 0.1;

  simd::set_active_isa(simd::Isa::Scalar);
  const Model a = train(data, cfg).model;
  simd::set_active_isa(simd::Isa::Avx2);
  const Model b = train(data, cfg).model;
  const auto pa = model_parameters(a), pb = model_parameters(b);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(*pa[i].value, *pb[i].value)) << pa[i].name;
  }
}

}  // namespace
}  // namespace tsvr
