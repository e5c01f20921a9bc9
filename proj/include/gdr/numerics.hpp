// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace gdr {

using Vec = std::vector<double>;

// Dense row-major matrix of finite doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  // Throws InvalidMatrix if data.size() != rows * cols or any entry is non-finite.
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Mat identity(std::size_t n);
  static Mat diag(std::span<const double> d);
  static Mat from_rows(const std::vector<Vec>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const;

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat operator+(const Mat& a, const Mat& b);
Mat operator-(const Mat& a, const Mat& b);
Mat operator*(double s, const Mat& a);
double frobenius(const Mat& a);
Vec matvec(const Mat& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// Round every entry through 32-bit float; the storage precision of all files.
double to_f32(double x);
void round_to_f32(std::span<double> xs);

// Reproducible normal/uniform source. Each (seed, stream) pair owns an
// independent sequence; workers derive their own stream rather than sharing.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

  // A fresh generator on a sub-stream; does not advance this one.
  SeededRng substream(std::uint64_t sub) const;

  double normal();
  double uniform();  // [0, 1)
  std::size_t uniform_index(std::size_t n);  // [0, n)

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

struct GaussianMoments {
  Vec mean;
  Mat cov;
};

struct SymEig {
  Vec values;    // descending
  Mat vectors;   // column j is the eigenvector for values[j]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymEig sym_eig(const Mat& s);

// V diag(sqrt(max(lambda + ridge, 0))) V^T; negative eigenvalues are clipped.
Mat psd_sqrt(const Mat& s, double ridge = 0.0);

// Inverse of psd_sqrt(s, ridge). Throws NumericalFailure when an eigenvalue
// of s + ridge I is not strictly positive.
Mat psd_inv_sqrt(const Mat& s, double ridge = 0.0);

Mat gaussian_mat(SeededRng& rng, std::size_t rows, std::size_t cols);

// Cosine similarity clamped to [-1, 1]; throws ZeroVector on a zero-norm input.
double cosine(std::span<const double> u, std::span<const double> v);

// Column means and unbiased (n - 1) covariance; needs at least two rows.
GaussianMoments fit_moments(const Mat& x);

}  // namespace gdr
