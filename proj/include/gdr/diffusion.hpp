// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gdr/denoiser.hpp"
#include "gdr/latentdata.hpp"
#include "json.hpp"

namespace gdr {

// Linear beta schedule over steps 1..N. Step 0 is the clean anchor with
// alpha_bar = 1.
struct NoiseSchedule {
  int N = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  Vec beta;       // beta[tau - 1]
  Vec alpha_bar;  // alpha_bar[tau - 1]

  double alpha_bar_at(int tau) const;
  // Stable digest of (N, beta_start, beta_end) recorded in checkpoints.
  std::string hash() const;
};

NoiseSchedule build_schedule(int N = 50, double beta_start = 1e-4, double beta_end = 0.02);

nlohmann::json to_json(const NoiseSchedule& s);
// Rebuilds a schedule from to_json output; the stored hash must match.
NoiseSchedule schedule_from_json(const nlohmann::json& j);

// sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps
LatentSeq add_noise(const LatentSeq& z0, int tau, const LatentSeq& eps, const NoiseSchedule& sched);

struct GuidanceSpec {
  double w = 0.0;
  CondSeq positive;
  CondSeq negative;  // null sequence for standard classifier-free guidance
};

struct TrainConfig {
  Objective objective = Objective::Sample;
  std::size_t steps = 3000;
  std::size_t batch = 64;
  double lr_peak = 1e-3;
  std::size_t warmup_steps = 300;
  double cond_mask_prob = 0.1;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t eval_every = 200;
  std::size_t patience = 5;
  std::size_t log_every = 50;
  unsigned workers = 0;

  void validate() const;

  static TrainConfig desk();
  static TrainConfig paper();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::string split;
};

struct TrainReport {
  std::vector<LogEntry> curve;
  // Loss of the initial and final model on one fixed batch of training items.
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  std::optional<std::size_t> early_stop_step;
  std::size_t steps_run = 0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const LogEntry& e);

double learning_rate(const TrainConfig& cfg, std::size_t step);

struct TrainResult {
  DenoiserModel model;
  TrainReport report;
};

// AdamW with linear warmup then cosine decay to zero. When log is non-null,
// each log entry is written to it as one JSON line.
TrainResult train(DenoiserModel model, const Corpus& corpus, const NoiseSchedule& sched, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

// The model's estimate of the clean latent, whatever its training objective.
LatentSeq predict_clean(const DenoiserModel& model, const LatentSeq& z, int tau, const CondSeq& cond,
                        const NoiseSchedule& sched);

// (1 + w) G(z, tau, positive) - w G(z, tau, negative).
LatentSeq guided_prediction(const DenoiserModel& model, const LatentSeq& z, int tau, const GuidanceSpec& g,
                            const NoiseSchedule& sched);

// Deterministic DDIM move from tau_from to tau_to sharing one clean estimate.
LatentSeq ddim_step(const LatentSeq& z, const LatentSeq& clean, int tau_from, int tau_to, const NoiseSchedule& sched);

// Denoise a latent sitting at step `from` down to step 0 under guidance g.
LatentSeq denoise_from(const DenoiserModel& model, LatentSeq z, int from, const GuidanceSpec& g,
                       const NoiseSchedule& sched);

// n_q independent queries; query q starts from noise on stream q of seed.
std::vector<LatentSeq> sample(const DenoiserModel& model, const GuidanceSpec& g, std::size_t n_q,
                              const NoiseSchedule& sched, std::uint64_t seed, std::size_t frames);

// DDIM inversion of a clean latent up to step k with unguided predictions.
// The clean latent is identified with the step-1 latent (the anchor), so
// the first real move is 1 -> 2 and k = 1 returns z0 unchanged.
LatentSeq invert(const DenoiserModel& model, const LatentSeq& z0, const CondSeq& cond, int k,
                 const NoiseSchedule& sched);

// Inverse leg of invert: denoises a step-k pivot down to the step-1 anchor
// under g and returns it as the clean latent.
LatentSeq reconstruct(const DenoiserModel& model, LatentSeq pivot, int k, const GuidanceSpec& g,
                      const NoiseSchedule& sched);

// Invert k steps under cond_original (null when unknown), then reconstruct under g.
LatentSeq edit(const DenoiserModel& model, const LatentSeq& z0, const GuidanceSpec& g, int k,
               const NoiseSchedule& sched, const std::optional<CondSeq>& cond_original = std::nullopt);

}  // namespace gdr
