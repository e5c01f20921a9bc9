// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "gdr/numerics.hpp"
#include "json.hpp"

namespace gdr {

// Frechet distance between Gaussian fits:
// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet(const GaussianMoments& a, const GaussianMoments& b);

// Frechet distance between the moment fits of two sample sets (rows).
double frechet(const Mat& x, const Mat& y);

// Affine map x -> mu_tgt + A (x - mu_src) that whitens with the source
// covariance and re-colours with the target covariance.
struct AlignmentTransform {
  Vec mu_src;
  Vec mu_tgt;
  Mat A;
  double ridge = 0.0;

  static AlignmentTransform identity(std::size_t d);
};

nlohmann::json to_json(const AlignmentTransform& t);
AlignmentTransform alignment_from_json(const nlohmann::json& j);

AlignmentTransform fit_alignment(const Mat& src, const Mat& tgt, double ridge = 1e-6);
Mat apply_alignment(const AlignmentTransform& t, const Mat& x);
Vec apply_alignment(const AlignmentTransform& t, std::span<const double> x);

// Prompt-adherence proxy: cosine similarity in a shared space.
double clap_score(std::span<const double> a, std::span<const double> b);

// Mean pairwise cosine over the unordered pairs of rows.
double mics(const Mat& cluster);

struct VendiScore {
  double vendi = 0.0;
  double nvendi = 0.0;
};

// exp of the eigen-entropy of K / n, K the cosine kernel of the rows.
VendiScore vendi(const Mat& x);

// Mean raw Vendi score over clusters.
double minvs(std::span<const Mat> clusters);

struct DiversityReport {
  double mics = 0.0;    // mean over clusters
  double vendi = 0.0;   // over the union of all clusters
  double nvendi = 0.0;  // vendi / total rows
  double minvs = 0.0;
  std::size_t cluster_count = 0;
  std::size_t cluster_size = 0;
};

DiversityReport diversity_report(std::span<const Mat> clusters);
nlohmann::json to_json(const DiversityReport& r);

}  // namespace gdr
