#pragma once

#include <cstddef>
#include <string_view>

// Runtime-dispatched inner loops. Every kernel exists as a portable scalar
// reference and, on x86-64, an AVX2 variant. The AVX2 variants vectorize
// across independent output elements only, so each output element sees the
// same sequence of IEEE operations as the scalar loop: results are
// bit-identical between paths, not merely close.

namespace tsvr::simd {

enum class Isa { Scalar, Avx2 };

struct AdamCoefficients {
  double beta1;
  double beta2;
  double epsilon;
  double learning_rate;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  // c[m x n] += a[m x k] * b[k x n]; accumulation over k in index order.
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n);
  // c[k x n] += a[m x k]^T * b[m x n]; accumulation over m in index order.
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*adam_update)(double* param, const double* grad, double* m, double* v,
                      std::size_t n, const AdamCoefficients& coeffs);
};

const KernelTable& scalar_kernels();
#if defined(TSVR_BUILD_AVX2)
const KernelTable& avx2_kernels();
#endif

bool isa_supported(Isa isa);
const KernelTable& kernels_for(Isa isa);

// The table used by all matrix operations. Defaults to the best supported ISA.
const KernelTable& kernels();
Isa active_isa();
void set_active_isa(Isa isa);  // throws if unsupported

std::string_view isa_name(Isa isa);

}  // namespace tsvr::simd
