// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/alignmetrics.hpp"

#include <algorithm>
#include <cmath>

#include "gdr/error.hpp"

namespace gdr {

using nlohmann::json;

namespace {

double trace(const Mat& m) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) t += m(i, i);
  return t;
}

void symmetrize(Mat& m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j) m(i, j) = m(j, i) = 0.5 * (m(i, j) + m(j, i));
}

}  // namespace

double frechet(const GaussianMoments& a, const GaussianMoments& b) {
  const std::size_t d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || b.cov.rows() != d) {
    throw Error(Errc::ShapeError, "Frechet distance needs moments of equal dimension");
  }
  double mean_term = 0.0;
  for (std::size_t k = 0; k < d; ++k) mean_term += (a.mean[k] - b.mean[k]) * (a.mean[k] - b.mean[k]);

  const Mat ra = psd_sqrt(a.cov);
  Mat inner = matmul(matmul(ra, b.cov), ra);
  symmetrize(inner);
  const double cross = trace(psd_sqrt(inner));
  const double fd = mean_term + trace(a.cov) + trace(b.cov) - 2.0 * cross;
  return std::max(fd, 0.0);
}

double frechet(const Mat& x, const Mat& y) { return frechet(fit_moments(x), fit_moments(y)); }

AlignmentTransform AlignmentTransform::identity(std::size_t d) {
  return {Vec(d, 0.0), Vec(d, 0.0), Mat::identity(d), 0.0};
}

json to_json(const AlignmentTransform& t) {
  return json{{"mu_src", t.mu_src}, {"mu_tgt", t.mu_tgt}, {"A", t.A.data()}, {"dim", t.A.rows()}, {"ridge", t.ridge}};
}

AlignmentTransform alignment_from_json(const json& j) {
  try {
    AlignmentTransform t;
    t.mu_src = j.at("mu_src").get<Vec>();
    t.mu_tgt = j.at("mu_tgt").get<Vec>();
    const auto d = j.at("dim").get<std::size_t>();
    t.A = Mat(d, d, j.at("A").get<std::vector<double>>());
    t.ridge = j.value("ridge", 0.0);
    if (t.mu_src.size() != d || t.mu_tgt.size() != d) throw Error(Errc::FormatError, "alignment dims disagree");
    return t;
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("bad alignment transform: ") + e.what());
  }
}

AlignmentTransform fit_alignment(const Mat& src, const Mat& tgt, double ridge) {
  const std::size_t d = src.cols();
  if (tgt.cols() != d) throw Error(Errc::ShapeError, "source and target dimensions differ");
  if (ridge < 0.0) throw Error(Errc::InvalidSpec, "ridge must be non-negative");
  if (ridge == 0.0 && (src.rows() < d + 1 || tgt.rows() < d + 1)) {
    throw Error(Errc::InsufficientSamples, "need at least d + 1 rows per side without a ridge");
  }
  const GaussianMoments ms = fit_moments(src);
  const GaussianMoments mt = fit_moments(tgt);
  AlignmentTransform t;
  t.mu_src = ms.mean;
  t.mu_tgt = mt.mean;
  t.ridge = ridge;
  t.A = matmul(psd_sqrt(mt.cov), psd_inv_sqrt(ms.cov, ridge));
  if (!t.A.all_finite()) throw Error(Errc::NumericalFailure, "alignment matrix is not finite");
  return t;
}

Vec apply_alignment(const AlignmentTransform& t, std::span<const double> x) {
  const std::size_t d = t.mu_src.size();
  if (x.size() != d) throw Error(Errc::ShapeError, "vector dimension differs from transform");
  Vec centered(d);
  for (std::size_t k = 0; k < d; ++k) centered[k] = x[k] - t.mu_src[k];
  Vec out = matvec(t.A, centered);
  for (std::size_t k = 0; k < d; ++k) out[k] += t.mu_tgt[k];
  return out;
}

Mat apply_alignment(const AlignmentTransform& t, const Mat& x) {
  if (x.cols() != t.mu_src.size()) throw Error(Errc::ShapeError, "matrix columns differ from transform");
  Mat out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Vec y = apply_alignment(t, x.row(r));
    std::copy(y.begin(), y.end(), out.row(r).begin());
  }
  return out;
}

double clap_score(std::span<const double> a, std::span<const double> b) { return cosine(a, b); }

double mics(const Mat& cluster) {
  const std::size_t n = cluster.rows();
  if (n < 2) throw Error(Errc::InsufficientSamples, "MICS needs at least two rows");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s += cosine(cluster.row(i), cluster.row(j));
  return s / (0.5 * static_cast<double>(n * (n - 1)));
}

VendiScore vendi(const Mat& x) {
  const std::size_t n = x.rows();
  if (n == 0) throw Error(Errc::EmptyInput, "Vendi score of zero rows");
  Vec norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = norm2(x.row(i));
    if (norms[i] == 0.0) throw Error(Errc::ZeroVector, "Vendi score row " + std::to_string(i) + " is zero");
  }
  Mat k(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    k(i, i) = inv_n;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = std::clamp(dot(x.row(i), x.row(j)) / (norms[i] * norms[j]), -1.0, 1.0);
      k(i, j) = k(j, i) = c * inv_n;
    }
  }
  const SymEig e = sym_eig(k);
  double entropy = 0.0;
  for (double l : e.values)
    if (l > 0.0) entropy -= l * std::log(l);
  const double v = std::clamp(std::exp(entropy), 1.0, static_cast<double>(n));
  return {v, v / static_cast<double>(n)};
}

double minvs(std::span<const Mat> clusters) {
  if (clusters.empty()) throw Error(Errc::InsufficientSamples, "MINVS needs at least one cluster");
  double s = 0.0;
  for (const auto& c : clusters) {
    if (c.rows() < 2) throw Error(Errc::InsufficientSamples, "MINVS clusters need at least two rows");
    s += vendi(c).vendi;
  }
  return s / static_cast<double>(clusters.size());
}

DiversityReport diversity_report(std::span<const Mat> clusters) {
  if (clusters.empty()) throw Error(Errc::InsufficientSamples, "no clusters");
  DiversityReport r;
  r.cluster_count = clusters.size();
  r.cluster_size = clusters.front().rows();
  std::vector<Vec> all;
  double m = 0.0;
  for (const auto& c : clusters) {
    m += mics(c);
    for (std::size_t i = 0; i < c.rows(); ++i) all.emplace_back(c.row(i).begin(), c.row(i).end());
  }
  r.mics = m / static_cast<double>(clusters.size());
  const VendiScore v = vendi(Mat::from_rows(all));
  r.vendi = v.vendi;
  r.nvendi = v.nvendi;
  r.minvs = minvs(clusters);
  return r;
}

json to_json(const DiversityReport& r) {
  return json{{"mics", r.mics},   {"vendi", r.vendi},
              {"nvendi", r.nvendi}, {"minvs", r.minvs},
              {"cluster_count", r.cluster_count}, {"cluster_size", r.cluster_size}};
}

}  // namespace gdr
