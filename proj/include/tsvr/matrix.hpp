#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tsvr {

// Dense row-major matrix of doubles. Row vectors are 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::vector<double> values);
  static Matrix column_vector(std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  void fill(double value);

  // Bitwise-style equality: same shape and every entry compares equal.
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct ColumnStats {
  Matrix mean;      // 1 x cols
  Matrix variance;  // 1 x cols, biased (divide by m)
};

// Products. Each output entry accumulates left to right over the shared index.
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double factor);
void add_in_place(Matrix& target, const Matrix& delta, double factor = 1.0);
void add_row_in_place(Matrix& target, const Matrix& row_vector);

Matrix column_sums(const Matrix& x);
// Per-column mean and biased variance over the rows of a batch.
ColumnStats row_stats(const Matrix& x);

Matrix sigmoid(const Matrix& x);
double sigmoid(double x);
Matrix softmax_rows(const Matrix& x);
Matrix log_softmax_rows(const Matrix& x);
Matrix relu(const Matrix& x);

Matrix concat_cols(const Matrix& a, const Matrix& b);
Matrix slice_cols(const Matrix& x, std::size_t begin, std::size_t end);
Matrix gather_rows(const Matrix& x, std::span<const std::size_t> indices);

// Same shape and identical bit patterns (distinguishes -0.0 and NaN payloads).
bool bitwise_equal(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& x);
void require_finite(const Matrix& x, const std::string& what);
double max_abs(const Matrix& x);
double frobenius_norm(const Matrix& x);

struct BilinearForms {
  double lhs;  // x^T W a
  double rhs;  // (x kron a)^T vec(W), row-major vec
};
BilinearForms bilinear_equivalence(std::span<const double> x, std::span<const double> a,
                                   const Matrix& w);
std::vector<double> kronecker(std::span<const double> x, std::span<const double> a);

// Central differences (f(x + h e_ij) - f(x - h e_ij)) / 2h for every entry.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                        double h = 1e-5);

// ||a - b|| / max(||a||, ||b||, 1e-12), Frobenius norms.
double relative_error(const Matrix& a, const Matrix& b);

}  // namespace tsvr
