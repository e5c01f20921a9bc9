// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gdr/diffusion.hpp"
#include "gdr/error.hpp"
#include "testutil.hpp"

namespace gdr {
namespace {

using testutil::constant_model;
using testutil::max_abs_diff;
using testutil::random_cond;
using testutil::random_seq;

const ModelDims kSmall{6, 4, 8, 6, 0};

double rel_error(const Mat& got, const Mat& want) {
  return max_abs_diff(got, want) / std::max(1e-300, frobenius(want) / std::sqrt(static_cast<double>(want.size())));
}

TEST(Schedule, TwoStepHandProduct) {
  const NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  EXPECT_NEAR(s.alpha_bar_at(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar_at(2), 0.72, 1e-15);
  EXPECT_EQ(s.alpha_bar_at(0), 1.0);
}

TEST(Schedule, DefaultStrictlyDecreasing) {
  const NoiseSchedule s = build_schedule();
  EXPECT_EQ(s.N, 50);
  double prev = 1.0;
  for (int t = 1; t <= 50; ++t) {
    const double a = s.alpha_bar_at(t);
    EXPECT_LT(a, prev);
    EXPECT_GT(a, 0.0);
    prev = a;
  }
  EXPECT_NEAR(s.beta.front(), 1e-4, 1e-18);
  EXPECT_NEAR(s.beta.back(), 0.02, 1e-18);
}

TEST(Schedule, Guards) {
  for (auto f : {+[] { build_schedule(1, 1e-4, 0.02); }, +[] { build_schedule(10, 0.0, 0.02); },
                 +[] { build_schedule(10, 0.3, 0.2); }, +[] { build_schedule(10, 0.1, 1.0); }}) {
    try {
      f();
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidSchedule);
    }
  }
  EXPECT_THROW(build_schedule().alpha_bar_at(51), Error);
}

TEST(Schedule, JsonRoundTrip) {
  const NoiseSchedule s = build_schedule(30, 2e-4, 0.03);
  const NoiseSchedule back = schedule_from_json(to_json(s));
  EXPECT_EQ(back.alpha_bar, s.alpha_bar);
  auto j = to_json(s);
  j["hash"] = "linear:N=31";
  EXPECT_THROW(schedule_from_json(j), Error);
}

TEST(AddNoise, ZeroNoiseScalesSignal) {
  const NoiseSchedule s = build_schedule();
  const LatentSeq z0 = random_seq(1, 4, 3);
  const LatentSeq y = add_noise(z0, 30, LatentSeq{Mat(4, 3)}, s);
  for (std::size_t k = 0; k < y.frames.size(); ++k)
    EXPECT_DOUBLE_EQ(y.frames.data()[k], std::sqrt(s.alpha_bar_at(30)) * z0.frames.data()[k]);
}

TEST(AddNoise, SmallNoiseLimit) {
  const NoiseSchedule s = build_schedule(50, 1e-10, 1e-9);
  const LatentSeq z0 = random_seq(1, 4, 3);
  EXPECT_LE(max_abs_diff(add_noise(z0, 1, random_seq(2, 4, 3), s).frames, z0.frames), 1e-4);
}

TEST(AddNoise, MonteCarloVariance) {
  const NoiseSchedule s = build_schedule();
  const LatentSeq z0{Mat(100, 100)};
  const LatentSeq y = add_noise(z0, 40, random_seq(7, 100, 100), s);
  double var = 0.0;
  for (double v : y.frames.data()) var += v * v;
  var /= static_cast<double>(y.frames.size());
  EXPECT_NEAR(var / (1.0 - s.alpha_bar_at(40)), 1.0, 0.05);
}

TEST(Guidance, ZeroWeightIsConditionalForwardBitwise) {
  const DenoiserModel m = init_model(Arch::SeqAttn, kSmall, 3);
  const NoiseSchedule s = build_schedule();
  const LatentSeq z = random_seq(1, 3, 6);
  const GuidanceSpec g{0.0, random_cond(1, 2, 4), random_cond(2, 2, 4)};
  EXPECT_EQ(guided_prediction(m, z, 17, g, s).frames, forward(m, z, 17, g.positive).frames);
}

TEST(Guidance, EqualPromptsAreWeightInvariant) {
  const DenoiserModel m = init_model(Arch::PooledMlp, kSmall, 3);
  const NoiseSchedule s = build_schedule();
  const LatentSeq z = random_seq(1, 3, 6);
  const CondSeq c = random_cond(1, 2, 4);
  const Mat base = forward(m, z, 5, c).frames;
  for (double w : {0.0, 0.5, 3.0, 100.0}) EXPECT_EQ(guided_prediction(m, z, 5, GuidanceSpec{w, c, c}, s).frames, base);
}

TEST(Guidance, NullNegativeIsStandardGuidance) {
  const DenoiserModel m = init_model(Arch::SeqAttn, kSmall, 3);
  const NoiseSchedule s = build_schedule();
  const LatentSeq z = random_seq(1, 3, 6);
  const CondSeq c = random_cond(1, 2, 4);
  const double w = 1.5;
  const Mat pos = forward(m, z, 9, c).frames;
  const Mat unc = forward(m, z, 9, CondSeq::null(4)).frames;
  Mat want(pos.rows(), pos.cols());
  for (std::size_t k = 0; k < want.size(); ++k) want.data()[k] = (1.0 + w) * pos.data()[k] - w * unc.data()[k];
  EXPECT_EQ(guided_prediction(m, z, 9, GuidanceSpec{w, c, CondSeq::null(4)}, s).frames, want);
}

TEST(DdimStep, ToZeroReturnsClean) {
  const NoiseSchedule s = build_schedule();
  const LatentSeq z = random_seq(1, 3, 4), c = random_seq(2, 3, 4);
  EXPECT_EQ(ddim_step(z, c, 12, 0, s).frames, c.frames);
}

TEST(DdimStep, DownThenUpRecovers) {
  const NoiseSchedule s = build_schedule();
  const LatentSeq z = random_seq(1, 3, 4), c = random_seq(2, 3, 4);
  const LatentSeq down = ddim_step(z, c, 30, 12, s);
  EXPECT_LE(max_abs_diff(ddim_step(down, c, 12, 30, s).frames, z.frames), 1e-10);
}

TEST(DdimStep, HandComputedTwoStep) {
  // With clean = z: eps = z (1 - sqrt(a2)) / sqrt(1 - a2) and the result is
  // z (sqrt(a1) + sqrt(1 - a1) (1 - sqrt(a2)) / sqrt(1 - a2)).
  const NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  const LatentSeq z{Mat(1, 2, Vec{1.0, -2.0})};
  const double a1 = 0.9, a2 = 0.72;
  const double f = std::sqrt(a1) + std::sqrt(1 - a1) * (1 - std::sqrt(a2)) / std::sqrt(1 - a2);
  const LatentSeq y = ddim_step(z, z, 2, 1, s);
  EXPECT_NEAR(y.frames(0, 0), f, 1e-14);
  EXPECT_NEAR(y.frames(0, 1), -2.0 * f, 1e-14);
}

TEST(DdimStep, Guards) {
  const NoiseSchedule s = build_schedule();
  const LatentSeq z = random_seq(1, 3, 4);
  EXPECT_THROW(ddim_step(z, z, 0, 1, s), Error);
  EXPECT_THROW(ddim_step(z, z, 3, 3, s), Error);
  EXPECT_THROW(ddim_step(z, z, 3, 51, s), Error);
  EXPECT_THROW(ddim_step(z, random_seq(1, 2, 4), 3, 2, s), Error);
}

TEST(Sample, ConstantModelReturnsConstant) {
  const Vec c0{0.5, -1.0, 2.0, 0.25};
  const DenoiserModel m = constant_model(c0);
  const NoiseSchedule s = build_schedule();
  for (const auto& z : sample(m, GuidanceSpec{2.0, random_cond(1, 2, 4), CondSeq::null(4)}, 3, s, 11, 5)) {
    for (std::size_t r = 0; r < z.steps(); ++r)
      for (std::size_t c = 0; c < c0.size(); ++c) EXPECT_EQ(z.frames(r, c), c0[c]);
  }
}

TEST(Sample, SeedDeterminism) {
  const DenoiserModel m = init_model(Arch::SeqAttn, kSmall, 3);
  const NoiseSchedule s = build_schedule();
  const GuidanceSpec g{1.0, random_cond(1, 2, 4), CondSeq::null(4)};
  const auto a = sample(m, g, 3, s, 5, 4), b = sample(m, g, 3, s, 5, 4), c = sample(m, g, 3, s, 6, 4);
  for (std::size_t q = 0; q < 3; ++q) {
    EXPECT_EQ(a[q].frames, b[q].frames);
    EXPECT_NE(a[q].frames, c[q].frames);
  }
  EXPECT_NE(a[0].frames, a[1].frames);
}

TEST(Sample, ZeroQueriesRejected) {
  const DenoiserModel m = init_model(Arch::SeqAttn, kSmall, 3);
  EXPECT_THROW(sample(m, GuidanceSpec{0.0, CondSeq::null(4), CondSeq::null(4)}, 0, build_schedule(), 1, 4), Error);
}

class ConstantRoundTrip : public ::testing::TestWithParam<std::tuple<int, Objective>> {};

TEST_P(ConstantRoundTrip, InvertThenReconstructRecoversInput) {
  const auto [k, objective] = GetParam();
  const DenoiserModel m = constant_model(Vec{0.3, -0.7, 1.1, 0.0, 2.0}, 4, objective);
  const NoiseSchedule s = build_schedule();
  const CondSeq cond = random_cond(3, 2, 4);
  const LatentSeq z0 = random_seq(17, 6, 5);
  const LatentSeq pivot = invert(m, z0, cond, k, s);
  const LatentSeq back = reconstruct(m, pivot, k, GuidanceSpec{0.0, cond, CondSeq::null(4)}, s);
  EXPECT_LE(rel_error(back.frames, z0.frames), 1e-9);
  const LatentSeq edited = edit(m, z0, GuidanceSpec{0.0, cond, CondSeq::null(4)}, k, s, cond);
  EXPECT_LE(rel_error(edited.frames, z0.frames), 1e-9);
  if (k > 1) {
    EXPECT_GT(max_abs_diff(pivot.frames, z0.frames), 1e-3);
  }
}

INSTANTIATE_TEST_SUITE_P(Depths, ConstantRoundTrip,
                         ::testing::Combine(::testing::Values(1, 2, 20, 50),
                                            ::testing::Values(Objective::Sample, Objective::Epsilon)));

TEST(Invert, Guards) {
  const DenoiserModel m = init_model(Arch::SeqAttn, kSmall, 3);
  const NoiseSchedule s = build_schedule();
  const LatentSeq z = random_seq(1, 3, 6);
  for (int k : {0, 51}) {
    try {
      invert(m, z, CondSeq::null(4), k, s);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidStep);
    }
  }
}

TEST(Invert, FullDepthEditTracksFreshSampling) {
  // At k = N the pivot is a deterministic function of z0; reconstructing it
  // runs the same guided steps as sampling, minus the final jump to step 0.
  const DenoiserModel m = init_model(Arch::SeqAttn, kSmall, 3);
  const NoiseSchedule s = build_schedule();
  const GuidanceSpec g{1.0, random_cond(1, 2, 4), CondSeq::null(4)};
  const LatentSeq pivot = invert(m, random_seq(4, 3, 6), CondSeq::null(4), s.N, s);
  const LatentSeq a = reconstruct(m, pivot, s.N, g, s);
  LatentSeq z = pivot;
  for (int tau = s.N; tau >= 2; --tau) z = ddim_step(z, guided_prediction(m, z, tau, g, s), tau, tau - 1, s);
  EXPECT_EQ(a.frames, z.frames);
}

Corpus small_corpus() {
  SynthSpec spec;
  spec.n_genres = 2;
  spec.n_instruments = 2;
  spec.d_a = 6;
  spec.d_t = 4;
  spec.T = 4;
  spec.items_per_cell = 12;
  return gen_corpus(spec);
}

TrainConfig short_config(std::size_t steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch = 16;
  cfg.warmup_steps = steps / 10;
  cfg.eval_every = 50;
  cfg.log_every = 10;
  cfg.workers = 1;
  return cfg;
}

TEST(LearningRate, WarmupThenCosineToZero) {
  TrainConfig cfg;
  cfg.steps = 1000;
  cfg.warmup_steps = 100;
  cfg.lr_peak = 1e-3;
  EXPECT_NEAR(learning_rate(cfg, 1), 1e-5, 1e-18);
  EXPECT_NEAR(learning_rate(cfg, 100), 1e-3, 1e-18);
  EXPECT_NEAR(learning_rate(cfg, 550), 0.5e-3, 1e-12);
  EXPECT_NEAR(learning_rate(cfg, 1000), 0.0, 1e-18);
}

TEST(TrainConfig, PresetsAndJson) {
  const TrainConfig d = TrainConfig::desk(), p = TrainConfig::paper();
  EXPECT_EQ(d.steps, 3000u);
  EXPECT_EQ(d.batch, 64u);
  EXPECT_EQ(d.warmup_steps, 300u);
  EXPECT_DOUBLE_EQ(d.cond_mask_prob, 0.1);
  EXPECT_EQ(p.steps, 100000u);
  EXPECT_EQ(p.batch, 256u);
  EXPECT_DOUBLE_EQ(p.lr_peak, 1e-4);
  EXPECT_DOUBLE_EQ(p.cond_mask_prob, 0.1);
  nlohmann::json j = p;
  EXPECT_EQ(j.get<TrainConfig>().steps, p.steps);
  TrainConfig bad;
  bad.cond_mask_prob = 1.5;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Train, LossDropsAndLogIsJsonLines) {
  const Corpus c = small_corpus();
  const NoiseSchedule s = build_schedule();
  std::ostringstream log;
  const TrainResult r = train(init_model(Arch::SeqAttn, kSmall, 1), c, s, short_config(200), &log);
  EXPECT_LT(r.report.final_train_loss, 0.5 * r.report.initial_train_loss);
  std::istringstream in(log.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("step") && j.contains("loss") && j.contains("lr") && j.contains("split"));
    ++n;
  }
  EXPECT_GT(n, 10u);
  EXPECT_EQ(r.model.meta.at("schedule").at("hash"), s.hash());
}

TEST(Train, Deterministic) {
  const Corpus c = small_corpus();
  const NoiseSchedule s = build_schedule();
  TrainConfig a = short_config(60), b = short_config(60);
  b.workers = 3;
  const TrainResult x = train(init_model(Arch::PooledMlp, kSmall, 1), c, s, a);
  const TrainResult y = train(init_model(Arch::PooledMlp, kSmall, 1), c, s, b);
  EXPECT_EQ(x.model.params, y.model.params);
}

TEST(Train, FullMaskingGivesUnconditionalModel) {
  const Corpus c = small_corpus();
  const NoiseSchedule s = build_schedule();
  TrainConfig cfg = short_config(50);
  cfg.cond_mask_prob = 1.0;
  for (Arch a : {Arch::SeqAttn, Arch::PooledMlp}) {
    const TrainResult r = train(init_model(a, kSmall, 1), c, s, cfg);
    const LatentSeq z = random_seq(1, 4, 6);
    const Mat base = forward(r.model, z, 10, CondSeq::null(4)).frames;
    EXPECT_EQ(forward(r.model, z, 10, random_cond(1, 2, 4)).frames, base) << arch_name(a);
    EXPECT_EQ(forward(r.model, z, 10, random_cond(2, 1, 4)).frames, base) << arch_name(a);
  }
}

TEST(Train, RegressionSamplingIgnoresSeed) {
  const Corpus c = small_corpus();
  const NoiseSchedule s = build_schedule();
  ModelDims d = kSmall;
  d.mask_T = 4;
  TrainConfig cfg = short_config(40);
  cfg.objective = Objective::Regression;
  const TrainResult r = train(init_model(Arch::SeqAttn, d, 1, Objective::Regression), c, s, cfg);
  const GuidanceSpec g{1.0, random_cond(1, 2, 4), CondSeq::null(4)};
  const auto a = sample(r.model, g, 3, s, 1, 4), b = sample(r.model, g, 3, s, 2, 4);
  for (std::size_t q = 0; q < 3; ++q) {
    EXPECT_EQ(a[q].frames, a[0].frames);
    EXPECT_EQ(a[q].frames, b[q].frames);
  }
  EXPECT_THROW(invert(r.model, a[0], g.positive, 5, s), Error);
}

TEST(Train, RegressionObjectiveNeedsMaskModel) {
  TrainConfig cfg = short_config(10);
  cfg.objective = Objective::Regression;
  EXPECT_THROW(train(init_model(Arch::SeqAttn, kSmall, 1), small_corpus(), build_schedule(), cfg), Error);
}

}  // namespace
}  // namespace gdr
