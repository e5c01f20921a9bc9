// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "gdr/alignmetrics.hpp"
#include "gdr/error.hpp"
#include "testutil.hpp"

namespace gdr {
namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no gdr::Error thrown";
  return Errc::UsageError;
}

Mat gaussian_rows(std::uint64_t seed, std::size_t n, const Vec& mean, const Mat& chol) {
  SeededRng rng(seed, 5);
  const Mat z = gaussian_mat(rng, n, mean.size());
  Mat x(n, mean.size());
  for (std::size_t r = 0; r < n; ++r) {
    const Vec y = matvec(chol, z.row(r));
    for (std::size_t c = 0; c < mean.size(); ++c) x(r, c) = mean[c] + y[c];
  }
  return x;
}

TEST(Frechet, MeanShiftOnly) {
  const GaussianMoments a{Vec{0, 0, 0}, Mat::identity(3)};
  const GaussianMoments b{Vec{1, 2, 2}, Mat::identity(3)};
  EXPECT_NEAR(frechet(a, b), 9.0, 1e-10);
}

TEST(Frechet, DiagonalClosedForm) {
  const GaussianMoments a{Vec{0, 0}, Mat::diag(Vec{4, 1})};
  const GaussianMoments b{Vec{0, 0}, Mat::diag(Vec{1, 9})};
  // sum of (sqrt(a_i) - sqrt(b_i))^2
  EXPECT_NEAR(frechet(a, b), 1.0 + 4.0, 1e-10);
}

TEST(Frechet, OneDimensional) {
  const GaussianMoments a{Vec{1.5}, Mat(1, 1, Vec{0.25})};
  const GaussianMoments b{Vec{-0.5}, Mat(1, 1, Vec{2.25})};
  EXPECT_NEAR(frechet(a, b), 4.0 + 1.0, 1e-12);
}

TEST(Frechet, SymmetricAndZeroOnSelf) {
  const Mat x = gaussian_rows(1, 300, Vec{0, 1, 2, 3}, Mat(4, 4, Vec{1, 0, 0, 0, 0.5, 1, 0, 0, 0.2, 0.1, 2, 0, 0, 0, 0.3, 0.5}));
  const Mat y = gaussian_rows(2, 300, Vec{1, 0, 0, 0}, Mat::identity(4));
  EXPECT_NEAR(frechet(x, y), frechet(y, x), 1e-8 * frechet(x, y));
  EXPECT_NEAR(frechet(x, x), 0.0, 1e-8);
  EXPECT_GT(frechet(x, y), 0.0);
}

TEST(Frechet, DimensionMismatch) {
  EXPECT_EQ(code_of([] { frechet(GaussianMoments{Vec{0}, Mat::identity(1)}, GaussianMoments{Vec{0, 0}, Mat::identity(2)}); }),
            Errc::ShapeError);
}

TEST(Alignment, IdenticalSetsGiveIdentity) {
  const Mat x = gaussian_rows(3, 200, Vec{1, -1, 0}, Mat::identity(3));
  const AlignmentTransform t = fit_alignment(x, x, 0.0);
  EXPECT_LE(testutil::max_abs_diff(t.A, Mat::identity(3)), 1e-8);
  EXPECT_LE(testutil::max_abs_diff(apply_alignment(t, x), x), 1e-8);
}

TEST(Alignment, IsotropicScaleAndShift) {
  const Mat src = gaussian_rows(4, 20000, Vec{0, 0, 0}, Mat::identity(3));
  const Mat tgt = gaussian_rows(5, 20000, Vec{3, -1, 2}, 2.0 * Mat::identity(3));
  const AlignmentTransform t = fit_alignment(src, tgt);
  EXPECT_LE(testutil::max_abs_diff(t.A, 2.0 * Mat::identity(3)), 0.06);
}

TEST(Alignment, MatchesTargetMeanAndCovariance) {
  const Mat src = gaussian_rows(6, 500, Vec{0, 0, 0, 0}, Mat(4, 4, Vec{1, 0, 0, 0, 0.5, 1, 0, 0, 0.2, 0.1, 2, 0, 0, 0, 0.3, 0.5}));
  const Mat tgt = gaussian_rows(7, 400, Vec{5, 5, -5, 0}, Mat::diag(Vec{0.5, 3, 1, 2}));
  const AlignmentTransform t = fit_alignment(src, tgt, 0.0);
  const GaussianMoments mapped = fit_moments(apply_alignment(t, src));
  const GaussianMoments want = fit_moments(tgt);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(mapped.mean[c], want.mean[c], 1e-9);
  EXPECT_LE(testutil::max_abs_diff(mapped.cov, want.cov), 1e-8);
  EXPECT_LT(frechet(apply_alignment(t, src), tgt), 1e-8);
  EXPECT_LT(frechet(apply_alignment(t, src), tgt), frechet(src, tgt));
}

TEST(Alignment, VectorAndMatrixFormsAgree) {
  const Mat src = gaussian_rows(8, 50, Vec{0, 1}, Mat::identity(2));
  const Mat tgt = gaussian_rows(9, 50, Vec{2, 1}, Mat::diag(Vec{2, 0.5}));
  const AlignmentTransform t = fit_alignment(src, tgt);
  const Mat m = apply_alignment(t, src);
  const Vec v = apply_alignment(t, src.row(7));
  EXPECT_EQ(v, Vec(m.row(7).begin(), m.row(7).end()));
}

TEST(Alignment, RankDeficientSourceNeedsRidge) {
  const Mat src = gaussian_rows(10, 3, Vec{0, 0, 0, 0, 0}, Mat::identity(5));
  const Mat tgt = gaussian_rows(11, 100, Vec{0, 0, 0, 0, 0}, Mat::identity(5));
  EXPECT_EQ(code_of([&] { fit_alignment(src, tgt, 0.0); }), Errc::InsufficientSamples);
  EXPECT_NO_THROW(fit_alignment(src, tgt, 1e-3));
  Mat flat(10, 2);
  for (std::size_t r = 0; r < 10; ++r) flat(r, 0) = static_cast<double>(r);
  EXPECT_EQ(code_of([&] { fit_alignment(flat, gaussian_rows(12, 10, Vec{0, 0}, Mat::identity(2)), 0.0); }),
            Errc::NumericalFailure);
  EXPECT_EQ(code_of([&] { fit_alignment(src, tgt, -1.0); }), Errc::InvalidSpec);
}

TEST(Alignment, JsonRoundTrip) {
  const AlignmentTransform t =
      fit_alignment(gaussian_rows(1, 30, Vec{0, 1}, Mat::identity(2)), gaussian_rows(2, 30, Vec{1, 1}, Mat::identity(2)));
  const AlignmentTransform back = alignment_from_json(to_json(t));
  EXPECT_EQ(back.A, t.A);
  EXPECT_EQ(back.mu_src, t.mu_src);
  EXPECT_EQ(back.mu_tgt, t.mu_tgt);
  EXPECT_THROW(alignment_from_json(nlohmann::json{{"A", 1}}), Error);
}

TEST(Clap, IsCosine) {
  EXPECT_DOUBLE_EQ(clap_score(Vec{1, 0}, Vec{5, 0}), 1.0);
  EXPECT_NEAR(clap_score(Vec{1, 0}, Vec{1, 1}), std::sqrt(0.5), 1e-15);
}

TEST(Mics, Examples) {
  EXPECT_DOUBLE_EQ(mics(Mat(3, 2, Vec{1, 1, 2, 2, 3, 3})), 1.0);
  EXPECT_NEAR(mics(Mat(2, 2, Vec{1, 0, 0, 1})), 0.0, 1e-15);
  // pairs: (a,b)=0, (a,c)=1/sqrt2, (b,c)=1/sqrt2
  EXPECT_NEAR(mics(Mat(3, 2, Vec{1, 0, 0, 1, 1, 1})), 2.0 * std::sqrt(0.5) / 3.0, 1e-15);
  EXPECT_EQ(code_of([] { mics(Mat(1, 2, 1.0)); }), Errc::InsufficientSamples);
}

TEST(Vendi, IdenticalRowsScoreOne) {
  const VendiScore v = vendi(Mat(5, 3, 2.0));
  EXPECT_NEAR(v.vendi, 1.0, 1e-9);
  EXPECT_NEAR(v.nvendi, 0.2, 1e-9);
}

TEST(Vendi, OrthogonalRowsScoreN) {
  EXPECT_NEAR(vendi(Mat::identity(4)).vendi, 4.0, 1e-9);
  EXPECT_NEAR(vendi(Mat::identity(4)).nvendi, 1.0, 1e-9);
}

TEST(Vendi, TwoRowsAtSixtyDegrees) {
  // K / 2 has eigenvalues 3/4 and 1/4.
  const Mat x(2, 2, Vec{1, 0, 0.5, std::sqrt(0.75)});
  const double h = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  EXPECT_NEAR(vendi(x).vendi, std::exp(h), 1e-9);
  EXPECT_NEAR(vendi(x).vendi, 1.7548, 1e-4);
}

TEST(Vendi, InvariantToRowOrderAndScale) {
  SeededRng rng(3, 0);
  const Mat x = gaussian_mat(rng, 6, 4);
  Mat y(6, 4);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) y(r, c) = (1.0 + static_cast<double>(r)) * x(5 - r, c);
  EXPECT_NEAR(vendi(x).vendi, vendi(y).vendi, 1e-9);
  EXPECT_EQ(code_of([] { vendi(Mat(2, 2, Vec{1, 0, 0, 0})); }), Errc::ZeroVector);
}

TEST(Minvs, RawMeanOverClusters) {
  const std::vector<Mat> clusters{Mat(3, 2, 1.0), Mat::identity(2)};
  EXPECT_NEAR(minvs(clusters), 0.5 * (1.0 + 2.0), 1e-9);
}

TEST(DiversityReport, CollapsedClusters) {
  const std::vector<Mat> clusters{Mat(4, 3, Vec{1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3}),
                                  Mat(4, 3, Vec{0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0})};
  const DiversityReport r = diversity_report(clusters);
  EXPECT_DOUBLE_EQ(r.mics, 1.0);
  EXPECT_NEAR(r.minvs, 1.0, 1e-9);
  EXPECT_EQ(r.cluster_count, 2u);
  EXPECT_EQ(r.cluster_size, 4u);
  EXPECT_NEAR(r.nvendi * 8.0, r.vendi, 1e-12);
  EXPECT_TRUE(to_json(r).contains("mics"));
}

}  // namespace
}  // namespace gdr
