#include "bmax/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bmax {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
  Matrix m(r, c);
  int i = 0;
  for (const auto& row : rows) {
    require(static_cast<int>(row.size()) == c, "from_rows: ragged rows");
    int j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix Matrix::row_vector(const Vector& v) {
  Matrix m(1, static_cast<int>(v.size()));
  std::copy(v.begin(), v.end(), m.data().begin());
  return m;
}

Matrix Matrix::column_vector(const Vector& v) {
  Matrix m(static_cast<int>(v.size()), 1);
  std::copy(v.begin(), v.end(), m.data().begin());
  return m;
}

void Matrix::set_row(int r, const Vector& v) {
  require(static_cast<int>(v.size()) == cols_, "set_row: width mismatch");
  std::copy(v.begin(), v.end(), row(r));
}

Matrix add(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "add: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "sub: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "hadamard: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "add_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

void axpy_inplace(Matrix& a, double s, const Matrix& b) {
  require(a.same_shape(b), "axpy_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += s * b.data()[i];
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    double* orow = out.row(i);
    const double* arow = a.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < b.rows(); ++j) {
      const double* brow = b.row(j);
      double acc = 0.0;
      for (int k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      orow[j] = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
  Matrix out(a.cols(), b.cols());
  for (int k = 0; k < a.rows(); ++k) {
    const double* arow = a.row(k);
    const double* brow = b.row(k);
    for (int i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* orow = out.row(i);
      for (int j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Vector matvec(const Matrix& a, const Vector& x) {
  require(a.cols() == static_cast<int>(x.size()), "matvec: width mismatch");
  Vector out(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double acc = 0.0;
    for (int j = 0; j < a.cols(); ++j) acc += arow[j] * x[j];
    out[i] = acc;
  }
  return out;
}

Matrix outer(const Vector& a, const Vector& b) {
  Matrix out(static_cast<int>(a.size()), static_cast<int>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(static_cast<int>(i), static_cast<int>(j)) = a[i] * b[j];
  return out;
}

double dot(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm_inf(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double norm2(const Vector& a) { return std::sqrt(dot(a, a)); }

namespace {

// plain lower Cholesky; returns false on a non-positive pivot
bool try_cholesky(const Matrix& a, double jitter, Matrix& lower) {
  const int n = a.rows();
  lower = Matrix(n, n);
  for (int j = 0; j < n; ++j) {
    double diag = a(j, j) + jitter;
    for (int k = 0; k < j; ++k) diag -= lower(j, k) * lower(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) return false;
    const double ljj = std::sqrt(diag);
    lower(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      double acc = a(i, j);
      const double* li = lower.row(i);
      const double* lj = lower.row(j);
      for (int k = 0; k < j; ++k) acc -= li[k] * lj[k];
      lower(i, j) = acc / ljj;
    }
  }
  return true;
}

}  // namespace

CholeskyResult cholesky_logdet(const Matrix& a, double jitter) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky_logdet: matrix not square");
  for (int i = 0; i < a.rows(); ++i)
    for (int j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-9 * std::max(1.0, std::abs(a(i, j))))
        throw ShapeError("cholesky_logdet: matrix not symmetric");
  if (jitter < 0.0) throw NumericError("cholesky_logdet: negative jitter");

  constexpr double kMaxJitter = 1e-3;
  double j = jitter;
  while (true) {
    CholeskyResult res;
    res.jitter_used = j;
    if (try_cholesky(a, j, res.lower)) {
      double logdet = 0.0;
      for (int i = 0; i < a.rows(); ++i) logdet += std::log(res.lower(i, i));
      res.logdet = 2.0 * logdet;
      return res;
    }
    if (j >= kMaxJitter) throw NumericError("cholesky_logdet: singular after max jitter");
    j = j == 0.0 ? 1e-12 : j * 10.0;
    if (j > kMaxJitter) j = kMaxJitter;
  }
}

void solve_lower_inplace(const Matrix& lower, Matrix& b) {
  if (lower.rows() != b.rows()) throw ShapeError("solve_lower: height mismatch");
  const int n = lower.rows();
  for (int i = 0; i < n; ++i) {
    const double* li = lower.row(i);
    double* bi = b.row(i);
    for (int k = 0; k < i; ++k) {
      const double lik = li[k];
      const double* bk = b.row(k);
      for (int c = 0; c < b.cols(); ++c) bi[c] -= lik * bk[c];
    }
    const double inv = 1.0 / li[i];
    for (int c = 0; c < b.cols(); ++c) bi[c] *= inv;
  }
}

void solve_lower_trans_inplace(const Matrix& lower, Matrix& b) {
  if (lower.rows() != b.rows()) throw ShapeError("solve_lower_trans: height mismatch");
  const int n = lower.rows();
  for (int i = n - 1; i >= 0; --i) {
    double* bi = b.row(i);
    for (int k = i + 1; k < n; ++k) {
      const double lki = lower(k, i);
      const double* bk = b.row(k);
      for (int c = 0; c < b.cols(); ++c) bi[c] -= lki * bk[c];
    }
    const double inv = 1.0 / lower(i, i);
    for (int c = 0; c < b.cols(); ++c) bi[c] *= inv;
  }
}

Matrix solve_cholesky(const Matrix& lower, const Matrix& b) {
  Matrix x = b;
  solve_lower_inplace(lower, x);
  solve_lower_trans_inplace(lower, x);
  return x;
}

Matrix solve_psd(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("solve_psd: height mismatch");
  return solve_cholesky(cholesky_logdet(a).lower, b);
}

Vector symmetric_eigenvalues(const Matrix& a, int sweeps) {
  if (a.rows() != a.cols()) throw ShapeError("symmetric_eigenvalues: not square");
  const int n = a.rows();
  Matrix m = a;
  // symmetrize first; Jacobi rotations assume exact symmetry
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double s = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = s;
      m(j, i) = s;
    }
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  Vector eig(n);
  for (int i = 0; i < n; ++i) eig[i] = m(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

Matrix clip_psd(const Matrix& a, double floor) {
  if (a.rows() != a.cols()) throw ShapeError("clip_psd: not square");
  const int n = a.rows();
  Matrix sym(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sym(i, j) = 0.5 * (a(i, j) + a(j, i));
  Vector eig = symmetric_eigenvalues(sym);
  if (eig.empty() || eig.front() >= floor) return sym;
  // shift the whole spectrum just enough; cheaper than a full eigenbasis rebuild
  const double shift = floor - eig.front();
  for (int i = 0; i < n; ++i) sym(i, i) += shift;
  return sym;
}

}  // namespace bmax
