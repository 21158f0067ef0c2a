// Copyright 2026 The hessdag Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hessdag/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "hessdag/error.hpp"
#include "hessdag/rng.hpp"

namespace hessdag {
namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                    "x" + std::to_string(b.cols()));
  }
}

struct ThinSvd {
  Matrix u;  // rows x n
  Vector s;  // n, descending
  Matrix v;  // cols x n
};

// One-sided (Hestenes) Jacobi on the rows of `cols` (the columns of A).
// Rotations are mirrored into `vt` when given.
void jacobi_rotate(Matrix& cols, Matrix* vt) {
  const std::size_t n = cols.rows();
  const std::size_t p = cols.cols();
  constexpr double kEps = 1e-15;
  // Columns below roundoff of ||A||_F carry no resolvable singular value.
  double frob_sq = 0.0;
  for (double x : cols.data()) frob_sq += x * x;
  const double negligible = 1e-30 * frob_sq;
  Vector norms(n);
  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (std::size_t k = 0; k < n; ++k) {
      const auto ck = cols.row(k);
      norms[k] = dot(ck, ck);
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double alpha = norms[i];
        const double beta = norms[j];
        if (alpha <= negligible || beta <= negligible) continue;
        auto ci = cols.row(i);
        auto cj = cols.row(j);
        const double gamma = dot(ci, cj);
        if (std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t =
            std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < p; ++k) {
          const double x = ci[k];
          const double y = cj[k];
          ci[k] = c * x - s * y;
          cj[k] = s * x + c * y;
        }
        norms[i] = alpha - t * gamma;
        norms[j] = beta + t * gamma;
        if (vt != nullptr) {
          auto vi = vt->row(i);
          auto vj = vt->row(j);
          for (std::size_t k = 0; k < n; ++k) {
            const double x = vi[k];
            const double y = vj[k];
            vi[k] = c * x - s * y;
            vj[k] = s * x + c * y;
          }
        }
      }
    }
    if (!rotated) break;
  }
}

Matrix column_rows(const Matrix& m) {
  return m.rows() < m.cols() ? m : m.transpose();
}

ThinSvd jacobi_svd(const Matrix& m) {
  const bool transposed = m.rows() < m.cols();
  const Matrix a = transposed ? m.transpose() : m;
  const std::size_t p = a.rows();
  const std::size_t n = a.cols();
  // Rows of `cols` are the columns of a, rows of `vt` are the columns of V.
  Matrix cols = a.transpose();
  Matrix vt = Matrix::identity(n);
  jacobi_rotate(cols, &vt);

  Vector sigma(n);
  for (std::size_t k = 0; k < n; ++k) sigma[k] = norm2(cols.row(k));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  ThinSvd out{Matrix(p, n), Vector(n), Matrix(n, n)};
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.s[k] = sigma[src];
    for (std::size_t r = 0; r < n; ++r) out.v(r, k) = vt(src, r);
    if (sigma[src] > 0.0) {
      for (std::size_t r = 0; r < p; ++r) out.u(r, k) = cols(src, r) / sigma[src];
      filled[k] = true;
    }
  }
  // Complete U for zero singular values with Gram-Schmidt on unit vectors.
  std::size_t candidate = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (filled[k]) continue;
    while (candidate < p) {
      Vector e(p, 0.0);
      e[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t q = 0; q < n; ++q) {
          if (!filled[q]) continue;
          double proj = 0.0;
          for (std::size_t r = 0; r < p; ++r) proj += out.u(r, q) * e[r];
          for (std::size_t r = 0; r < p; ++r) e[r] -= proj * out.u(r, q);
        }
      }
      const double len = norm2(e);
      if (len > 1e-6) {
        for (std::size_t r = 0; r < p; ++r) out.u(r, k) = e[r] / len;
        filled[k] = true;
        break;
      }
    }
  }
  if (transposed) std::swap(out.u, out.v);
  return out;
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw Error(ErrorCode::kDimensionMismatch, "ragged rows in Matrix::from_rows");
    }
    std::size_t j = 0;
    for (double x : row) m(i, j++) = x;
    ++i;
  }
  return m;
}

Matrix Matrix::column(std::span<const double> v) {
  Matrix m(v.size(), 1);
  std::copy(v.begin(), v.end(), m.data().begin());
  return m;
}

Matrix Matrix::outer(std::span<const double> a, std::span<const double> b) {
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
  }
  return m;
}

Vector Matrix::col(std::size_t j) const {
  Vector v(rows_);
  for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
  return v;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  }
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "matrix addition");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "matrix subtraction");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Matrix& Matrix::add_scaled(const Matrix& other, double s) {
  require_same_shape(*this, other, "matrix axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matrix product " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix transpose_times(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "transpose_times row mismatch");
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ak = a.row(k);
    auto bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "matvec size mismatch");
  }
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

Vector matvec_t(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "matvec_t size mismatch");
  }
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (x[i] != 0.0) axpy(x[i], a.row(i), y);
  }
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double diff_norm(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimensionMismatch, "diff_norm: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Matrix Tensor3::contract_first(std::span<const double> w) const {
  Matrix m(d1_, d2_);
  const std::size_t slab = d1_ * d2_;
  for (std::size_t i = 0; i < d0_; ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t q = 0; q < slab; ++q) m.data()[q] += w[i] * data_[i * slab + q];
  }
  return m;
}

Matrix Tensor3::slice(std::size_t i) const {
  Matrix m(d1_, d2_);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(i * d1_ * d2_), d1_ * d2_,
              m.data().begin());
  return m;
}

void Tensor3::set_slice(std::size_t i, const Matrix& m) {
  if (m.rows() != d1_ || m.cols() != d2_) {
    throw Error(ErrorCode::kDimensionMismatch, "Tensor3 slice shape");
  }
  std::copy(m.data().begin(), m.data().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(i * d1_ * d2_));
}

double Tensor3::frobenius() const { return norm2(data_); }

double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

double spectral_norm_sq(const Matrix& m, std::size_t iters, std::uint64_t seed) {
  if (iters == 0) throw Error(ErrorCode::kInvalidArgument, "spectral_norm_sq needs iters >= 1");
  if (frobenius_norm(m) == 0.0) return 0.0;
  Rng rng(seed);
  Vector q = rng.normal_vector(m.cols());
  double len = norm2(q);
  for (double& x : q) x /= len;
  for (std::size_t t = 0; t < iters; ++t) {
    Vector y = matvec_t(m, matvec(m, q));
    len = norm2(y);
    if (len == 0.0) return 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) q[i] = y[i] / len;
  }
  const Vector mq = matvec(m, q);
  return dot(mq, mq);
}

SymEigen sym_eigen(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "sym_eigen requires a square matrix");
  }
  const std::size_t n = m.rows();
  Matrix a = symmetrize(m);
  Matrix v = Matrix::identity(n);
  const double scale = frobenius_norm(a);
  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) s += a(i, j) * a(i, j);
      }
    }
    return std::sqrt(s);
  };
  double previous = std::numeric_limits<double>::infinity();
  for (int sweep = 0; sweep < 100 && scale > 0.0; ++sweep) {
    const double off = off_norm();
    // Run past `tol` until rounding stalls the sweep; extra sweeps are cheap
    // once the matrix is nearly diagonal.
    if (off <= 1e-3 * tol * scale || (off <= tol * scale && off >= 0.5 * previous)) break;
    previous = off;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t =
            std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymEigen out{Vector(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

Vector sym_eigenvalues(const Matrix& m, double tol) { return sym_eigen(m, tol).values; }

Vector singular_values(const Matrix& m) {
  if (m.empty()) return {};
  Matrix cols = column_rows(m);
  jacobi_rotate(cols, nullptr);
  Vector s(cols.rows());
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = norm2(cols.row(k));
  std::sort(s.begin(), s.end(), std::greater<>());
  return s;
}

Svd truncated_svd(const Matrix& m, std::size_t r) {
  const std::size_t dmin = std::min(m.rows(), m.cols());
  if (r < 1 || r > dmin) {
    throw Error(ErrorCode::kInvalidArgument,
                "invalid rank " + std::to_string(r) + " for " + std::to_string(m.rows()) +
                    "x" + std::to_string(m.cols()) + " matrix");
  }
  ThinSvd full = jacobi_svd(m);
  Svd out{Matrix(m.rows(), r), Vector(full.s.begin(), full.s.begin() + static_cast<std::ptrdiff_t>(r)),
          Matrix(m.cols(), r)};
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t k = 0; k < r; ++k) out.u(i, k) = full.u(i, k);
  }
  for (std::size_t i = 0; i < m.cols(); ++i) {
    for (std::size_t k = 0; k < r; ++k) out.v(i, k) = full.v(i, k);
  }
  return out;
}

Matrix reconstruct(const Svd& svd) {
  Matrix us = svd.u;
  for (std::size_t i = 0; i < us.rows(); ++i) {
    for (std::size_t k = 0; k < us.cols(); ++k) us(i, k) *= svd.s[k];
  }
  return us * svd.v.transpose();
}

double spectral_norm(const Matrix& m) {
  const Vector s = singular_values(m);
  return s.empty() ? 0.0 : s.front();
}

double nuclear_norm(const Matrix& m) {
  const Vector s = singular_values(m);
  return std::accumulate(s.begin(), s.end(), 0.0);
}

Matrix symmetrize(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.cols() || a.cols() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "symmetrize: H_vw and H_wv shapes do not match");
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = 0.5 * (a(i, j) + b(j, i));
  }
  return out;
}

Matrix symmetrize(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "symmetrize requires a square matrix");
  }
  return symmetrize(a, a);
}

}  // namespace hessdag
