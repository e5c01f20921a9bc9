// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/diffusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "gdr/error.hpp"

namespace gdr {

using nlohmann::json;

double NoiseSchedule::alpha_bar_at(int tau) const {
  if (tau == 0) return 1.0;
  if (tau < 0 || tau > N) throw Error(Errc::InvalidStep, "step " + std::to_string(tau) + " outside 0.." + std::to_string(N));
  return alpha_bar[static_cast<std::size_t>(tau - 1)];
}

std::string NoiseSchedule::hash() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "linear:N=%d:%.9g:%.9g", N, beta_start, beta_end);
  return buf;
}

NoiseSchedule build_schedule(int N, double beta_start, double beta_end) {
  if (N < 2) throw Error(Errc::InvalidSchedule, "need at least two steps");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw Error(Errc::InvalidSchedule, "need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.N = N;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(static_cast<std::size_t>(N));
  s.alpha_bar.resize(static_cast<std::size_t>(N));
  double prod = 1.0;
  for (int k = 0; k < N; ++k) {
    const double b = beta_start + (beta_end - beta_start) * static_cast<double>(k) / static_cast<double>(N - 1);
    prod *= 1.0 - b;
    s.beta[static_cast<std::size_t>(k)] = b;
    s.alpha_bar[static_cast<std::size_t>(k)] = prod;
  }
  return s;
}

namespace {

void require_same_shape(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(Errc::ShapeError, "latent shapes differ");
}

// a x + b y, element-wise.
LatentSeq axpby(double a, const LatentSeq& x, double b, const LatentSeq& y) {
  require_same_shape(x.frames, y.frames);
  Mat out(x.frames.rows(), x.frames.cols());
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = a * x.frames.data()[k] + b * y.frames.data()[k];
  return LatentSeq{std::move(out)};
}

}  // namespace

json to_json(const NoiseSchedule& s) {
  return json{{"kind", "linear"}, {"N", s.N}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"hash", s.hash()}};
}

NoiseSchedule schedule_from_json(const json& j) {
  try {
    NoiseSchedule s = build_schedule(j.at("N").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
    if (j.contains("hash") && j["hash"].get<std::string>() != s.hash()) {
      throw Error(Errc::FormatError, "schedule hash mismatch");
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("bad schedule: ") + e.what());
  }
}

LatentSeq add_noise(const LatentSeq& z0, int tau, const LatentSeq& eps, const NoiseSchedule& sched) {
  if (tau < 1 || tau > sched.N) throw Error(Errc::InvalidStep, "noise step out of range");
  const double ab = sched.alpha_bar_at(tau);
  return axpby(std::sqrt(ab), z0, std::sqrt(1.0 - ab), eps);
}

void TrainConfig::validate() const {
  if (!(cond_mask_prob >= 0.0 && cond_mask_prob <= 1.0)) throw Error(Errc::InvalidSpec, "cond_mask_prob must be in [0, 1]");
  if (warmup_steps > steps) throw Error(Errc::InvalidSpec, "warmup_steps exceeds steps");
  if (steps == 0 || batch == 0) throw Error(Errc::InvalidSpec, "steps and batch must be positive");
  if (!(lr_peak > 0.0)) throw Error(Errc::InvalidSpec, "lr_peak must be positive");
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.steps = 100000;
  c.batch = 256;
  c.lr_peak = 1e-4;
  c.warmup_steps = 5000;
  c.cond_mask_prob = 0.1;
  return c;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"objective", objective_name(c.objective)},
           {"steps", c.steps},
           {"batch", c.batch},
           {"lr_peak", c.lr_peak},
           {"warmup_steps", c.warmup_steps},
           {"cond_mask_prob", c.cond_mask_prob},
           {"seed", c.seed},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"weight_decay", c.weight_decay},
           {"eval_every", c.eval_every},
           {"patience", c.patience},
           {"log_every", c.log_every}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.objective = parse_objective(j.value("objective", objective_name(d.objective)));
  c.steps = j.value("steps", d.steps);
  c.batch = j.value("batch", d.batch);
  c.lr_peak = j.value("lr_peak", d.lr_peak);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.cond_mask_prob = j.value("cond_mask_prob", d.cond_mask_prob);
  c.seed = j.value("seed", d.seed);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.patience = j.value("patience", d.patience);
  c.log_every = j.value("log_every", d.log_every);
}

json to_json(const LogEntry& e) {
  return json{{"step", e.step}, {"loss", e.loss}, {"lr", e.lr}, {"split", e.split}};
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const std::size_t decay = cfg.steps - cfg.warmup_steps;
  if (decay == 0) return cfg.lr_peak;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay);
  return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

namespace {

TrainExample make_example(const CorpusItem& item, Objective objective, const NoiseSchedule& sched, double mask_prob,
                          SeededRng& rng) {
  TrainExample ex;
  ex.cond = rng.uniform() < mask_prob ? CondSeq::null(item.cond.dim()) : item.cond;
  ex.target = item.audio;
  if (objective == Objective::Regression) {
    ex.step = 1;
    return ex;
  }
  ex.step = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(sched.N)));
  LatentSeq eps{gaussian_mat(rng, item.audio.steps(), item.audio.dim())};
  ex.input = add_noise(item.audio, ex.step, eps, sched);
  if (objective == Objective::Epsilon) ex.target = std::move(eps);
  return ex;
}

std::vector<TrainExample> fixed_batch(const std::vector<const CorpusItem*>& items, Objective objective,
                                      const NoiseSchedule& sched, SeededRng rng, std::size_t repeats) {
  std::vector<TrainExample> out;
  for (std::size_t r = 0; r < repeats; ++r)
    for (const auto* it : items) out.push_back(make_example(*it, objective, sched, 0.0, rng));
  return out;
}

}  // namespace

TrainResult train(DenoiserModel model, const Corpus& corpus, const NoiseSchedule& sched, const TrainConfig& cfg,
                  std::ostream* log) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto train_items = corpus.in_split(Split::Train);
  if (train_items.empty()) throw Error(Errc::EmptyInput, "corpus has no training items");
  auto val_items = corpus.in_split(Split::Val);
  if (val_items.empty()) val_items = train_items;

  if (cfg.objective == Objective::Regression) {
    if (model.objective != Objective::Regression) {
      throw Error(Errc::InvalidSpec, "regression training needs a model initialized with a mask sequence");
    }
    for (const auto* it : train_items)
      if (it->audio.steps() != model.dims.mask_T) throw Error(Errc::ShapeError, "item length differs from mask length");
  } else {
    if (model.objective == Objective::Regression) throw Error(Errc::InvalidSpec, "regression model needs regression objective");
    model.objective = cfg.objective;
  }
  // Every example is unconditional, so the conditioning path would keep its
  // random initialization; clear it so the trained model ignores conditioning.
  if (cfg.cond_mask_prob >= 1.0) {
    const ParamLayout layout = model.layout();
    if (model.arch == Arch::SeqAttn) {
      for (const char* name : {"attn.query", "attn.key", "attn.value"}) {
        const auto& seg = layout.at(name);
        std::fill_n(model.params.begin() + static_cast<std::ptrdiff_t>(seg.offset), seg.size(), 0.0);
      }
    } else {
      const auto& seg = layout.at("hidden.weight");
      const std::size_t first = model.dims.d_a + model.dims.d_tau;
      for (std::size_t r = 0; r < seg.rows; ++r)
        for (std::size_t c = first; c < seg.cols; ++c) model.params[seg.offset + r * seg.cols + c] = 0.0;
    }
  }

  const SeededRng root(cfg.seed, 0x747261696eULL);
  std::vector<const CorpusItem*> probe_items(train_items.begin(),
                                             train_items.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(train_items.size(), 128)));
  const auto train_probe = fixed_batch(probe_items, cfg.objective, sched, root.substream(1), 1);
  const auto val_batch = fixed_batch(val_items, cfg.objective, sched, root.substream(2), 4);

  TrainReport report;
  report.initial_train_loss = batch_loss(model, train_probe);

  auto emit = [&](LogEntry e) {
    if (log) *log << to_json(e).dump() << '\n';
    report.curve.push_back(std::move(e));
  };

  Vec m1(model.params.size(), 0.0), m2(model.params.size(), 0.0);
  Vec best_params = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t bad_evals = 0;
  SeededRng rng = root.substream(3);
  std::vector<TrainExample> batch;
  batch.reserve(cfg.batch);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto* item = train_items[rng.uniform_index(train_items.size())];
      batch.push_back(make_example(*item, cfg.objective, sched, cfg.cond_mask_prob, rng));
    }
    const LossGrad lg = loss_and_grad(model, batch, cfg.workers);
    if (!std::isfinite(lg.loss)) throw Error(Errc::NumericalFailure, "training loss diverged at step " + std::to_string(step));

    const double lr = learning_rate(cfg, step);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < model.params.size(); ++k) {
      const double g = lg.grad[k];
      m1[k] = cfg.adam_beta1 * m1[k] + (1.0 - cfg.adam_beta1) * g;
      m2[k] = cfg.adam_beta2 * m2[k] + (1.0 - cfg.adam_beta2) * g * g;
      const double mhat = m1[k] / bc1;
      const double vhat = m2[k] / bc2;
      model.params[k] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * model.params[k]);
    }
    report.steps_run = step;

    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1)) emit({step, lg.loss, lr, "train"});
    if (cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps)) {
      const double val = batch_loss(model, val_batch);
      emit({step, val, lr, "val"});
      if (val < best_val) {
        best_val = val;
        best_params = model.params;
        bad_evals = 0;
      } else if (++bad_evals >= cfg.patience) {
        report.early_stop_step = step;
        break;
      }
    }
  }
  if (cfg.eval_every > 0 && std::isfinite(best_val)) model.params = best_params;
  round_to_f32(model.params);

  report.final_train_loss = batch_loss(model, train_probe);
  report.final_val_loss = batch_loss(model, val_batch);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  model.meta = json{{"schedule", to_json(sched)}, {"train_config", cfg}, {"steps_run", report.steps_run}};
  return {std::move(model), std::move(report)};
}

LatentSeq predict_clean(const DenoiserModel& model, const LatentSeq& z, int tau, const CondSeq& cond,
                        const NoiseSchedule& sched) {
  switch (model.objective) {
    case Objective::Sample:
      return forward(model, z, tau, cond);
    case Objective::Regression:
      return forward(model, model.mask(), 1, cond);
    case Objective::Epsilon: {
      const double ab = sched.alpha_bar_at(tau);
      const LatentSeq eps = forward(model, z, tau, cond);
      return axpby(1.0 / std::sqrt(ab), z, -std::sqrt(1.0 - ab) / std::sqrt(ab), eps);
    }
  }
  return forward(model, z, tau, cond);
}

LatentSeq guided_prediction(const DenoiserModel& model, const LatentSeq& z, int tau, const GuidanceSpec& g,
                            const NoiseSchedule& sched) {
  if (!std::isfinite(g.w)) throw Error(Errc::InvalidSpec, "guidance strength must be finite");
  LatentSeq pos = predict_clean(model, z, tau, g.positive, sched);
  // Both shortcuts are the exact value of the expression; the full form would
  // only add rounding.
  if (g.w == 0.0 || g.negative == g.positive) return pos;
  const LatentSeq neg = predict_clean(model, z, tau, g.negative, sched);
  return axpby(1.0 + g.w, pos, -g.w, neg);
}

LatentSeq ddim_step(const LatentSeq& z, const LatentSeq& clean, int tau_from, int tau_to, const NoiseSchedule& sched) {
  if (tau_from < 1 || tau_from > sched.N) throw Error(Errc::InvalidStep, "tau_from must be in 1..N");
  if (tau_to < 0 || tau_to > sched.N || tau_to == tau_from) throw Error(Errc::InvalidStep, "tau_to must be in 0..N and differ from tau_from");
  require_same_shape(z.frames, clean.frames);
  const double ab_from = sched.alpha_bar_at(tau_from);
  const double ab_to = sched.alpha_bar_at(tau_to);
  if (tau_to == 0) return clean;
  const double sa_from = std::sqrt(ab_from), sn_from = std::sqrt(1.0 - ab_from);
  const double sa_to = std::sqrt(ab_to), sn_to = std::sqrt(1.0 - ab_to);
  Mat out(z.frames.rows(), z.frames.cols());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double c = clean.frames.data()[k];
    const double eps = (z.frames.data()[k] - sa_from * c) / sn_from;
    out.data()[k] = sa_to * c + sn_to * eps;
  }
  return LatentSeq{std::move(out)};
}

LatentSeq denoise_from(const DenoiserModel& model, LatentSeq z, int from, const GuidanceSpec& g,
                       const NoiseSchedule& sched) {
  if (from < 1 || from > sched.N) throw Error(Errc::InvalidStep, "denoising must start in 1..N");
  for (int tau = from; tau >= 1; --tau) {
    const LatentSeq clean = guided_prediction(model, z, tau, g, sched);
    z = ddim_step(z, clean, tau, tau - 1, sched);
  }
  return z;
}

std::vector<LatentSeq> sample(const DenoiserModel& model, const GuidanceSpec& g, std::size_t n_q,
                              const NoiseSchedule& sched, std::uint64_t seed, std::size_t frames) {
  if (n_q == 0) throw Error(Errc::EmptyInput, "n_q must be at least 1");
  std::vector<LatentSeq> out;
  out.reserve(n_q);
  if (model.objective == Objective::Regression) {
    const LatentSeq mask = model.mask();
    for (std::size_t q = 0; q < n_q; ++q) out.push_back(guided_prediction(model, mask, 1, g, sched));
    return out;
  }
  if (frames == 0) throw Error(Errc::ShapeError, "sample needs at least one frame");
  for (std::size_t q = 0; q < n_q; ++q) {
    SeededRng rng(seed, q);
    LatentSeq z{gaussian_mat(rng, frames, model.dims.d_a)};
    out.push_back(denoise_from(model, std::move(z), sched.N, g, sched));
  }
  return out;
}

LatentSeq invert(const DenoiserModel& model, const LatentSeq& z0, const CondSeq& cond, int k,
                 const NoiseSchedule& sched) {
  if (k < 1 || k > sched.N) throw Error(Errc::InvalidStep, "inversion depth must be in 1..N");
  if (model.objective == Objective::Regression) throw Error(Errc::InvalidSpec, "regression models have no noise path to invert");
  // A literal 0 -> 1 move would divide by sqrt(1 - alpha_bar_0) = 0; with
  // alpha_bar_1 on both sides of the lift, z is unchanged instead.
  LatentSeq z = z0;
  for (int tau = 2; tau <= k; ++tau) {
    const LatentSeq clean = predict_clean(model, z, tau - 1, cond, sched);
    z = ddim_step(z, clean, tau - 1, tau, sched);
  }
  return z;
}

LatentSeq reconstruct(const DenoiserModel& model, LatentSeq pivot, int k, const GuidanceSpec& g,
                      const NoiseSchedule& sched) {
  if (k < 1 || k > sched.N) throw Error(Errc::InvalidStep, "inversion depth must be in 1..N");
  for (int tau = k; tau >= 2; --tau) {
    const LatentSeq clean = guided_prediction(model, pivot, tau, g, sched);
    pivot = ddim_step(pivot, clean, tau, tau - 1, sched);
  }
  return pivot;
}

LatentSeq edit(const DenoiserModel& model, const LatentSeq& z0, const GuidanceSpec& g, int k,
               const NoiseSchedule& sched, const std::optional<CondSeq>& cond_original) {
  const CondSeq anchor = cond_original ? *cond_original : CondSeq::null(model.dims.d_t);
  const LatentSeq pivot = invert(model, z0, anchor, k, sched);
  return reconstruct(model, pivot, k, g, sched);
}

}  // namespace gdr
