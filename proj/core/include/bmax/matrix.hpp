#pragma once

#include <initializer_list>
#include <vector>

#include "bmax/errors.hpp"

namespace bmax {

using Vector = std::vector<double>;

// Dense row-major matrix of 64-bit floats with explicit shape.
// Every operation checks shapes; there is no implicit broadcasting.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw ShapeError("Matrix: negative shape");
  }

  static Matrix identity(int n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix row_vector(const Vector& v);
  static Matrix column_vector(const Vector& v);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  Vector row_copy(int r) const { return Vector(row(r), row(r) + cols_); }
  void set_row(int r, const Vector& v);

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  Vector data_;
};

// elementwise
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void add_inplace(Matrix& a, const Matrix& b);
void axpy_inplace(Matrix& a, double s, const Matrix& b);  // a += s * b

// products
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);
Vector matvec(const Matrix& a, const Vector& x);
Matrix outer(const Vector& a, const Vector& b);

double dot(const Vector& a, const Vector& b);
double norm_inf(const Matrix& a);
double norm2(const Vector& a);

struct CholeskyResult {
  Matrix lower;        // L with L * L^T = A + jitter_used * I
  double logdet = 0.0; // of the factored matrix
  double jitter_used = 0.0;
};

// Factors a symmetric PSD matrix. `jitter` is added to the diagonal up
// front; on failure it escalates tenfold (from 1e-12 if zero) up to 1e-3
// before giving up with NumericError. Asymmetry beyond 1e-9 is a ShapeError.
CholeskyResult cholesky_logdet(const Matrix& a, double jitter = 0.0);

// X with A * X = B for PSD A, via the Cholesky factor.
Matrix solve_psd(const Matrix& a, const Matrix& b);
Matrix solve_cholesky(const Matrix& lower, const Matrix& b);

// in-place triangular substitutions, B overwritten with the solution
void solve_lower_inplace(const Matrix& lower, Matrix& b);        // L X = B
void solve_lower_trans_inplace(const Matrix& lower, Matrix& b);  // L^T X = B

// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
Vector symmetric_eigenvalues(const Matrix& a, int sweeps = 64);

// Symmetrize and clip eigenvalues below `floor` (PSD repair for covariances).
Matrix clip_psd(const Matrix& a, double floor = 0.0);

}  // namespace bmax
