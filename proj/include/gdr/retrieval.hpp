// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gdr/alignmetrics.hpp"
#include "gdr/diffusion.hpp"
#include "gdr/latentdata.hpp"
#include "json.hpp"

namespace gdr {

// Unit-normalized pooled audio keys. Immutable after construction.
class CorpusIndex {
 public:
  CorpusIndex(std::vector<std::string> ids, const Mat& pooled, std::vector<Labels> labels);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return keys_.cols(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Mat& keys() const { return keys_; }
  const std::vector<Labels>& labels() const { return labels_; }
  // Pooled keys before normalization, kept for distribution statistics.
  const Mat& raw() const { return raw_; }
  std::optional<std::size_t> position(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  Mat keys_;
  Mat raw_;
  std::vector<Labels> labels_;
  std::map<std::string, std::size_t> pos_;
};

// Pools every item of the split (all items when split is empty).
CorpusIndex build_index(const Corpus& corpus, std::optional<Split> split = std::nullopt);

struct Hit {
  std::string id;
  double score = 0.0;
  std::size_t rank = 0;
  Labels labels;

  friend bool operator==(const Hit&, const Hit&) = default;
};

struct RankedResult {
  std::vector<Hit> hits;
  nlohmann::json query = nlohmann::json::object();

  friend bool operator==(const RankedResult&, const RankedResult&) = default;
};

nlohmann::json to_json(const RankedResult& r);

// Exact cosine ranking, descending, ties by ascending id; k is clamped to n.
RankedResult topk(const CorpusIndex& index, std::span<const double> query, std::size_t k);

// 1-based rank of id in the full ranking of query.
std::size_t rank_of(const CorpusIndex& index, std::span<const double> query, const std::string& id);

std::string cond_digest(const CondSeq& cond);

struct GhostQuery {
  std::vector<LatentSeq> latents;
  Vec query;  // aggregated (and aligned, when requested) retrieval vector
  RankedResult result;
};

GhostQuery run_ghost_query(const DenoiserModel& model, const GuidanceSpec& g, std::size_t n_q,
                           const NoiseSchedule& sched, std::uint64_t seed, const CorpusIndex& index, std::size_t k,
                           std::size_t frames, const AlignmentTransform* alignment = nullptr);

RankedResult ghost_query(const DenoiserModel& model, const GuidanceSpec& g, std::size_t n_q,
                         const NoiseSchedule& sched, std::uint64_t seed, const CorpusIndex& index, std::size_t k,
                         std::size_t frames, const AlignmentTransform* alignment = nullptr);

struct EvalQuery {
  Vec query;
  std::string target_id;
};

struct RetrievalMetrics {
  std::map<std::size_t, double> recall_at;
  double median_rank_pct = 0.0;
  std::size_t n_queries = 0;
};

nlohmann::json to_json(const RetrievalMetrics& m);

RetrievalMetrics eval_retrieval(const CorpusIndex& index, std::span<const EvalQuery> queries,
                                std::span<const std::size_t> ks);

// Fraction of queries whose top-k holds an item carrying every wanted label.
double label_recall_at(const CorpusIndex& index, std::span<const Vec> queries, std::span<const Labels> wanted,
                       std::size_t k);

// z_a + w (z_t_pos - z_t_neg)
Vec text_interp(std::span<const double> z_a, std::span<const double> z_t_pos, std::span<const double> z_t_neg,
                double w);
// z_gen + w (z_gen - z_gen_neg)
Vec audio_interp(std::span<const double> z_gen, std::span<const double> z_gen_neg, double w);

}  // namespace gdr
