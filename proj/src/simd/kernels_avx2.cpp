// Compiled with -mavx2 only (no -mfma): multiplies and adds stay separately
// rounded so every lane reproduces the scalar reference exactly.

#include "tsvr/simd.hpp"

#if defined(TSVR_BUILD_AVX2)

#include <immintrin.h>

namespace tsvr::simd {
namespace {

// c[i0..i0+R, j0..j0+8) over the full k range, R in {1..4}.
template <int R>
inline void nn_block8(const double* a, const double* b, double* c, std::size_t i0,
                      std::size_t j0, std::size_t k, std::size_t n) {
  __m256d acc[R][2];
  for (int r = 0; r < R; ++r) {
    acc[r][0] = _mm256_loadu_pd(c + (i0 + r) * n + j0);
    acc[r][1] = _mm256_loadu_pd(c + (i0 + r) * n + j0 + 4);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * n + j0);
    const __m256d b1 = _mm256_loadu_pd(b + p * n + j0 + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + (i0 + r) * k + p);
      acc[r][0] = _mm256_add_pd(acc[r][0], _mm256_mul_pd(av, b0));
      acc[r][1] = _mm256_add_pd(acc[r][1], _mm256_mul_pd(av, b1));
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + (i0 + r) * n + j0, acc[r][0]);
    _mm256_storeu_pd(c + (i0 + r) * n + j0 + 4, acc[r][1]);
  }
}

template <int R>
inline void nn_block4(const double* a, const double* b, double* c, std::size_t i0,
                      std::size_t j0, std::size_t k, std::size_t n) {
  __m256d acc[R];
  for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_pd(c + (i0 + r) * n + j0);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * n + j0);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + (i0 + r) * k + p);
      acc[r] = _mm256_add_pd(acc[r], _mm256_mul_pd(av, b0));
    }
  }
  for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + (i0 + r) * n + j0, acc[r]);
}

template <int R>
inline void nn_rows(const double* a, const double* b, double* c, std::size_t i0,
                    std::size_t k, std::size_t n) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) nn_block8<R>(a, b, c, i0, j, k, n);
  for (; j + 4 <= n; j += 4) nn_block4<R>(a, b, c, i0, j, k, n);
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      double acc = c[(i0 + r) * n + j];
      for (std::size_t p = 0; p < k; ++p) acc = acc + a[(i0 + r) * k + p] * b[p * n + j];
      c[(i0 + r) * n + j] = acc;
    }
  }
}

void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) nn_rows<4>(a, b, c, i, k, n);
  for (; i < m; ++i) nn_rows<1>(a, b, c, i, k, n);
}

// c[p0..p0+R, j0..j0+8) += sum_i a[i, p] * b[i, j]
template <int R>
inline void tn_block8(const double* a, const double* b, double* c, std::size_t p0,
                      std::size_t j0, std::size_t m, std::size_t k, std::size_t n) {
  __m256d acc[R][2];
  for (int r = 0; r < R; ++r) {
    acc[r][0] = _mm256_loadu_pd(c + (p0 + r) * n + j0);
    acc[r][1] = _mm256_loadu_pd(c + (p0 + r) * n + j0 + 4);
  }
  for (std::size_t i = 0; i < m; ++i) {
    const __m256d b0 = _mm256_loadu_pd(b + i * n + j0);
    const __m256d b1 = _mm256_loadu_pd(b + i * n + j0 + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + i * k + p0 + r);
      acc[r][0] = _mm256_add_pd(acc[r][0], _mm256_mul_pd(av, b0));
      acc[r][1] = _mm256_add_pd(acc[r][1], _mm256_mul_pd(av, b1));
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + (p0 + r) * n + j0, acc[r][0]);
    _mm256_storeu_pd(c + (p0 + r) * n + j0 + 4, acc[r][1]);
  }
}

template <int R>
inline void tn_block4(const double* a, const double* b, double* c, std::size_t p0,
                      std::size_t j0, std::size_t m, std::size_t k, std::size_t n) {
  __m256d acc[R];
  for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_pd(c + (p0 + r) * n + j0);
  for (std::size_t i = 0; i < m; ++i) {
    const __m256d b0 = _mm256_loadu_pd(b + i * n + j0);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + i * k + p0 + r);
      acc[r] = _mm256_add_pd(acc[r], _mm256_mul_pd(av, b0));
    }
  }
  for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + (p0 + r) * n + j0, acc[r]);
}

template <int R>
inline void tn_rows(const double* a, const double* b, double* c, std::size_t p0,
                    std::size_t m, std::size_t k, std::size_t n) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) tn_block8<R>(a, b, c, p0, j, m, k, n);
  for (; j + 4 <= n; j += 4) tn_block4<R>(a, b, c, p0, j, m, k, n);
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      double acc = c[(p0 + r) * n + j];
      for (std::size_t i = 0; i < m; ++i) acc = acc + a[i * k + p0 + r] * b[i * n + j];
      c[(p0 + r) * n + j] = acc;
    }
  }
}

void gemm_tn_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) tn_rows<4>(a, b, c, p, m, k, n);
  for (; p < k; ++p) tn_rows<1>(a, b, c, p, m, k, n);
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void adam_update_avx2(double* param, const double* grad, double* m, double* v,
                      std::size_t n, const AdamCoefficients& c) {
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d omb1 = _mm256_set1_pd(one_minus_b1);
  const __m256d omb2 = _mm256_set1_pd(one_minus_b2);
  const __m256d bc1 = _mm256_set1_pd(c.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(c.bias_correction2);
  const __m256d lr = _mm256_set1_pd(c.learning_rate);
  const __m256d eps = _mm256_set1_pd(c.epsilon);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(omb1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d step =
        _mm256_div_pd(_mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  scalar_kernels().adam_update(param + i, grad + i, m + i, v + i, n - i, c);
}

}  // namespace

const KernelTable& avx2_kernels() {
  static const KernelTable table{gemm_nn_avx2, gemm_tn_avx2, axpy_avx2, adam_update_avx2};
  return table;
}

}  // namespace tsvr::simd

#endif  // TSVR_BUILD_AVX2
