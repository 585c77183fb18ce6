#include "tsvr/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tsvr/error.hpp"
#include "tsvr/simd.hpp"

namespace tsvr {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data has " + std::to_string(data_.size()) +
                     " values, expected " + std::to_string(rows * cols) + " for " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer for matrix");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(values));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Matrix(1, n, std::move(values));
}

Matrix Matrix::column_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Matrix(n, 1, std::move(values));
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  if (c.empty() || a.cols() == 0) return c;
  simd::kernels().gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                     b.shape_string());
  }
  return matmul(a, transpose(b));
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                     b.shape_string());
  }
  Matrix c(a.cols(), b.cols());
  if (c.empty() || a.rows() == 0) return c;
  simd::kernels().gemm_tn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  return c;
}

Matrix scaled(const Matrix& a, double factor) {
  Matrix c = a;
  for (double& v : c.values()) v *= factor;
  return c;
}

void add_in_place(Matrix& target, const Matrix& delta, double factor) {
  require_same_shape(target, delta, "add_in_place");
  if (target.empty()) return;
  simd::kernels().axpy(factor, delta.data(), target.data(), target.size());
}

void add_row_in_place(Matrix& target, const Matrix& row_vector) {
  if (row_vector.rows() != 1 || row_vector.cols() != target.cols()) {
    throw ShapeError("add_row_in_place: row " + row_vector.shape_string() +
                     " does not broadcast over " + target.shape_string());
  }
  for (std::size_t i = 0; i < target.rows(); ++i) {
    auto row = target.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += row_vector[j];
  }
}

Matrix column_sums(const Matrix& x) {
  Matrix sums(1, x.cols());
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    k.axpy(1.0, x.data() + i * x.cols(), sums.data(), x.cols());
  }
  return sums;
}

ColumnStats row_stats(const Matrix& x) {
  if (x.rows() == 0) throw ShapeError("row_stats: empty batch");
  const double m = static_cast<double>(x.rows());
  Matrix mean = column_sums(x);
  for (double& v : mean.values()) v /= m;
  Matrix var(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double d = row[j] - mean[j];
      var[j] += d * d;
    }
  }
  for (double& v : var.values()) v /= m;
  return {std::move(mean), std::move(var)};
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
  require_finite(x, "sigmoid input");
  Matrix y = x;
  for (double& v : y.values()) v = sigmoid(v);
  return y;
}

Matrix log_softmax_rows(const Matrix& x) {
  require_finite(x, "softmax input");
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto out = y.row(i);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (double v : in) sum += std::exp(v - mx);
    const double log_sum = std::log(sum);
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] - mx - log_sum;
  }
  return y;
}

Matrix softmax_rows(const Matrix& x) {
  require_finite(x, "softmax input");
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto out = y.row(i);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    for (double& v : out) v /= sum;
  }
  return y;
}

Matrix relu(const Matrix& x) {
  require_finite(x, "relu input");
  Matrix y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Matrix c(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), out.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), out.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return c;
}

Matrix slice_cols(const Matrix& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + x.shape_string());
  }
  Matrix y(x.rows(), end - begin);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    std::copy(in.begin() + static_cast<std::ptrdiff_t>(begin),
              in.begin() + static_cast<std::ptrdiff_t>(end), y.row(i).begin());
  }
  return y;
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> indices) {
  Matrix y(indices.size(), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " outside " +
                       x.shape_string());
    }
    auto in = x.row(indices[i]);
    std::copy(in.begin(), in.end(), y.row(i).begin());
  }
  return y;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

bool all_finite(const Matrix& x) {
  return std::all_of(x.values().begin(), x.values().end(),
                     [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& x, const std::string& what) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw NumericError(what + " has a non-finite entry at (" +
                         std::to_string(x.cols() ? i / x.cols() : 0) + ", " +
                         std::to_string(x.cols() ? i % x.cols() : 0) + ")");
    }
  }
}

double max_abs(const Matrix& x) {
  double m = 0.0;
  for (double v : x.values()) m = std::max(m, std::abs(v));
  return m;
}

double frobenius_norm(const Matrix& x) {
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  return std::sqrt(s);
}

std::vector<double> kronecker(std::span<const double> x, std::span<const double> a) {
  std::vector<double> out;
  out.reserve(x.size() * a.size());
  for (double xi : x) {
    for (double aj : a) out.push_back(xi * aj);
  }
  return out;
}

BilinearForms bilinear_equivalence(std::span<const double> x, std::span<const double> a,
                                   const Matrix& w) {
  if (w.rows() != x.size() || w.cols() != a.size()) {
    throw ShapeError("bilinear_equivalence: W is " + w.shape_string() + " but x has " +
                     std::to_string(x.size()) + " and a has " + std::to_string(a.size()) +
                     " entries");
  }
  // x^T W a
  double lhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double wa = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) wa += w(i, j) * a[j];
    lhs += x[i] * wa;
  }
  // (x kron a)^T u, u = row-major vec(W)
  const std::vector<double> pair = kronecker(x, a);
  double rhs = 0.0;
  for (std::size_t i = 0; i < pair.size(); ++i) rhs += pair[i] * w[i];
  return {lhs, rhs};
}

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                        double h) {
  if (!(h > 0.0)) throw Error("finite_diff_grad: step must be positive");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at entry (" +
                         std::to_string(i / x.cols()) + ", " + std::to_string(i % x.cols()) +
                         ")");
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("relative_error: shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
  const double denom = std::max({frobenius_norm(a), frobenius_norm(b), 1e-12});
  return frobenius_norm(subtract(a, b)) / denom;
}

}  // namespace tsvr
