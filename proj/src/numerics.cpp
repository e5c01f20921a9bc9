// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gdr/error.hpp"

namespace gdr {

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(Errc::InvalidMatrix, "data length " + std::to_string(data_.size()) +
                                         " does not match " + std::to_string(rows_) + "x" +
                                         std::to_string(cols_));
  }
  if (!all_finite()) throw Error(Errc::InvalidMatrix, "non-finite entry");
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::diag(std::span<const double> d) {
  Mat m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

Mat Mat::from_rows(const std::vector<Vec>& rows) {
  if (rows.empty()) return {};
  const std::size_t c = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * c);
  for (const auto& r : rows) {
    if (r.size() != c) throw Error(Errc::InvalidMatrix, "ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Mat(rows.size(), c, std::move(data));
}

bool Mat::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw Error(Errc::ShapeError, "matmul inner dimension mismatch");
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Mat operator+(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(Errc::ShapeError, "add shape mismatch");
  Mat out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Mat operator-(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(Errc::ShapeError, "sub shape mismatch");
  Mat out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Mat operator*(double s, const Mat& a) {
  Mat out = a;
  for (double& x : out.data()) x *= s;
  return out;
}

double frobenius(const Mat& a) { return norm2(a.data()); }

Vec matvec(const Mat& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw Error(Errc::ShapeError, "matvec dimension mismatch");
  Vec y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::ShapeError, "dot dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_to_f32(std::span<double> xs) {
  for (double& x : xs) x = to_f32(x);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(stream ^ 0x6a09e667f3bcc908ULL);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

SeededRng SeededRng::substream(std::uint64_t sub) const {
  return SeededRng(seed_, splitmix64(stream_ * 0x100000001b3ULL + sub + 1));
}

double SeededRng::normal() { return normal_(engine_); }

double SeededRng::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t SeededRng::uniform_index(std::size_t n) {
  if (n == 0) return 0;
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

namespace {

void require_symmetric(const Mat& s, double rel_tol) {
  if (s.rows() != s.cols()) throw Error(Errc::InvalidMatrix, "matrix is not square");
  double scale = 0.0;
  for (double x : s.data()) scale = std::max(scale, std::abs(x));
  const double tol = rel_tol * std::max(scale, 1e-300);
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = i + 1; j < s.cols(); ++j)
      if (std::abs(s(i, j) - s(j, i)) > tol) throw Error(Errc::InvalidMatrix, "matrix is not symmetric");
}

}  // namespace

SymEig sym_eig(const Mat& s) {
  require_symmetric(s, 1e-9);
  const std::size_t n = s.rows();
  Mat a = s;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (s(i, j) + s(j, i));
  Mat v = Mat::identity(n);

  const double total = frobenius(a);
  constexpr int kMaxSweeps = 100;
  bool converged = n <= 1 || total == 0.0;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-15 * total) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) throw Error(Errc::NumericalFailure, "Jacobi eigensolver did not converge");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymEig out{Vec(n), Mat(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

namespace {

Mat spectral_map(const SymEig& e, auto&& f) {
  const std::size_t n = e.values.size();
  Mat out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double fk = f(e.values[k]);
    if (fk == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = e.vectors(i, k) * fk;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * e.vectors(j, k);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out(i, j) = out(j, i) = 0.5 * (out(i, j) + out(j, i));
  return out;
}

}  // namespace

Mat psd_sqrt(const Mat& s, double ridge) {
  const SymEig e = sym_eig(s);
  return spectral_map(e, [ridge](double l) { return std::sqrt(std::max(l + ridge, 0.0)); });
}

Mat psd_inv_sqrt(const Mat& s, double ridge) {
  const SymEig e = sym_eig(s);
  const double top = e.values.empty() ? 0.0 : std::abs(e.values.front());
  for (double l : e.values) {
    // Anything at round-off level relative to the top eigenvalue is a null direction.
    if (l + ridge <= std::max(1e-14 * top, 0.0) || l + ridge <= 0.0) {
      throw Error(Errc::NumericalFailure, "covariance is singular; increase ridge or sample count");
    }
  }
  return spectral_map(e, [ridge](double l) { return 1.0 / std::sqrt(l + ridge); });
}

Mat gaussian_mat(SeededRng& rng, std::size_t rows, std::size_t cols) {
  Mat m(rows, cols);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  const double uu = dot(u, u);
  const double vv = dot(v, v);
  if (uu == 0.0 || vv == 0.0) throw Error(Errc::ZeroVector, "cosine of a zero-norm vector");
  // One square root of the product keeps cosine(u, u) at exactly 1.
  return std::clamp(dot(u, v) / std::sqrt(uu * vv), -1.0, 1.0);
}

GaussianMoments fit_moments(const Mat& x) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (n < 2) throw Error(Errc::InsufficientSamples, "need at least two rows, got " + std::to_string(n));
  GaussianMoments m{Vec(d, 0.0), Mat(d, d)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += x(i, j);
  for (double& mu : m.mean) mu /= static_cast<double>(n);
  Vec centered(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered[j] = x(i, j) - m.mean[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) m.cov(a, b) += centered[a] * centered[b];
  }
  const double denom = static_cast<double>(n - 1);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) m.cov(b, a) = m.cov(a, b) = m.cov(a, b) / denom;
  return m;
}

}  // namespace gdr
