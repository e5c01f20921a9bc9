// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gdr/alignmetrics.hpp"
#include "gdr/diffusion.hpp"
#include "gdr/retrieval.hpp"
#include "json.hpp"

namespace gdr {

struct Prompt {
  std::string source_id;
  CondSeq cond;
  Labels wanted;  // genre and instrument of the source item
};

// Items of a split whose captions carry both attributes.
std::vector<Prompt> held_out_prompts(const Corpus& corpus, Split split = Split::Test);

// Seed for the p-th prompt of a run seeded with `seed`.
std::uint64_t prompt_seed(std::uint64_t seed, std::size_t p);

struct EvalSettings {
  double w = 2.0;
  std::size_t n_q = 5;
  std::uint64_t seed = 0;
  std::size_t frames = 16;
  std::vector<std::size_t> ks{1, 5, 10};
  bool align = false;
  double ridge = 1e-6;
};

nlohmann::json to_json(const EvalSettings& s);

// Ghost queries of every prompt, one cluster of pooled latents per prompt.
struct PromptSamples {
  std::vector<Mat> clusters;  // n_q x d_a each
  std::vector<Vec> queries;   // aggregated, unaligned
};

PromptSamples sample_prompts(const DenoiserModel& model, std::span<const Prompt> prompts,
                             const NoiseSchedule& sched, const EvalSettings& s);

// Maps pooled generated latents onto the index keys' distribution.
AlignmentTransform calibrate_alignment(const PromptSamples& samples, const CorpusIndex& index, double ridge);

struct EvalReport {
  RetrievalMetrics item;                    // target = source item of each prompt
  std::map<std::size_t, double> cell_recall;  // any top-k item in the prompt's cell
  double fd = 0.0;                          // pooled generated latents vs raw index keys
  double clap = 0.0;                        // mean cosine of query to its cell's mean key
  DiversityReport diversity;
  std::optional<AlignmentTransform> alignment;
  nlohmann::json provenance = nlohmann::json::object();
};

nlohmann::json to_json(const EvalReport& r);

EvalReport evaluate(const DenoiserModel& model, std::span<const Prompt> prompts, const CorpusIndex& index,
                    const NoiseSchedule& sched, const EvalSettings& s);

// Every key queries the index for itself.
RetrievalMetrics self_retrieval(const CorpusIndex& index, std::span<const std::size_t> ks);

// Mean of label_recall_at over n_perm random permutations of the wanted labels.
struct ChanceLevel {
  double mean = 0.0;
  double p95 = 0.0;
};
ChanceLevel permutation_chance(const CorpusIndex& index, std::span<const Vec> queries,
                               std::span<const Labels> wanted, std::size_t k, std::size_t n_perm,
                               std::uint64_t seed);

// Mean raw key of the index items carrying every wanted label.
Vec label_centroid(const CorpusIndex& index, const Labels& wanted);

}  // namespace gdr
