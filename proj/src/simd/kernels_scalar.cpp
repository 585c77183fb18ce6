#include <cmath>

#include "tsvr/simd.hpp"

namespace tsvr::simd {
namespace {

void gemm_nn_scalar(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c_row = c + i * n;
    const double* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a_row[p];
      const double* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        c_row[j] = c_row[j] + a_ip * b_row[j];
      }
    }
  }
}

void gemm_tn_scalar(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    const double* b_row = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a_row[p];
      double* c_row = c + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        c_row[j] = c_row[j] + a_ip * b_row[j];
      }
    }
  }
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = y[i] + alpha * x[i];
  }
}

void adam_update_scalar(double* param, const double* grad, double* m, double* v,
                        std::size_t n, const AdamCoefficients& c) {
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    param[i] = param[i] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{gemm_nn_scalar, gemm_tn_scalar, axpy_scalar,
                                 adam_update_scalar};
  return table;
}

}  // namespace tsvr::simd
