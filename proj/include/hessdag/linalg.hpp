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

// Dense double-precision storage and the factorizations used by the
// curvature diagnostics: cyclic Jacobi eigensolver, one-sided Jacobi SVD and
// power iteration.

#ifndef HESSDAG_LINALG_HPP_
#define HESSDAG_LINALG_HPP_

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace hessdag {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  // Column vector (n x 1) or row vector (1 x n) views of a Vector.
  static Matrix column(std::span<const double> v);
  static Matrix outer(std::span<const double> a, std::span<const double> b);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  Vector col(std::size_t j) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Matrix transpose() const;
  bool all_finite() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);
  // this += s * other
  Matrix& add_scaled(const Matrix& other, double s);

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
Matrix operator*(const Matrix& a, const Matrix& b);
// a^T * b without forming the transpose.
Matrix transpose_times(const Matrix& a, const Matrix& b);

Vector matvec(const Matrix& a, std::span<const double> x);
// a^T x
Vector matvec_t(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
// ||a - b||_2
double diff_norm(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Rank-3 array indexed (i, j, k) with i slowest.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t d0, std::size_t d1, std::size_t d2)
      : d0_(d0), d1_(d1), d2_(d2), data_(d0 * d1 * d2, 0.0) {}

  std::size_t d0() const { return d0_; }
  std::size_t d1() const { return d1_; }
  std::size_t d2() const { return d2_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * d1_ + j) * d2_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * d1_ + j) * d2_ + k];
  }
  std::span<const double> data() const { return data_; }

  // Sum_i w_i T[i, :, :]
  Matrix contract_first(std::span<const double> w) const;
  Matrix slice(std::size_t i) const;
  void set_slice(std::size_t i, const Matrix& m);
  double frobenius() const;

 private:
  std::size_t d0_ = 0, d1_ = 0, d2_ = 0;
  std::vector<double> data_;
};

double frobenius_norm(const Matrix& m);

// Estimate of sigma_1(m)^2 by power iteration on m^T m started from a seeded
// Gaussian vector. Returns 0 for the zero matrix.
double spectral_norm_sq(const Matrix& m, std::size_t iters, std::uint64_t seed);

struct SymEigen {
  Vector values;   // descending
  Matrix vectors;  // column k pairs with values[k]
};

// Cyclic Jacobi on (m + m^T) / 2.
SymEigen sym_eigen(const Matrix& m, double tol = 1e-12);
Vector sym_eigenvalues(const Matrix& m, double tol = 1e-12);

struct Svd {
  Matrix u;  // rows x r
  Vector s;  // descending, length r
  Matrix v;  // cols x r
};

// All min(rows, cols) singular values in descending order.
Vector singular_values(const Matrix& m);
Svd truncated_svd(const Matrix& m, std::size_t r);
Matrix reconstruct(const Svd& svd);

double spectral_norm(const Matrix& m);
double nuclear_norm(const Matrix& m);

// (a + b^T) / 2
Matrix symmetrize(const Matrix& a, const Matrix& b);
Matrix symmetrize(const Matrix& a);

}  // namespace hessdag

#endif  // HESSDAG_LINALG_HPP_
