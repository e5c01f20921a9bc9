// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "gdr/error.hpp"

namespace gdr {

using nlohmann::json;

CorpusIndex::CorpusIndex(std::vector<std::string> ids, const Mat& pooled, std::vector<Labels> labels)
    : ids_(std::move(ids)), keys_(pooled), raw_(pooled), labels_(std::move(labels)) {
  if (ids_.empty()) throw Error(Errc::BuildError, "index needs at least one item");
  if (pooled.rows() != ids_.size()) throw Error(Errc::BuildError, "one pooled key per id required");
  if (labels_.empty()) labels_.resize(ids_.size());
  if (labels_.size() != ids_.size()) throw Error(Errc::BuildError, "one label set per id required");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!pos_.emplace(ids_[i], i).second) throw Error(Errc::BuildError, "duplicate id " + ids_[i]);
    auto row = keys_.row(i);
    const double n = norm2(row);
    if (!(n > 0.0)) throw Error(Errc::DegenerateKey, "zero-norm pooled key for " + ids_[i]);
    for (double& x : row) x /= n;
  }
}

std::optional<std::size_t> CorpusIndex::position(const std::string& id) const {
  const auto it = pos_.find(id);
  if (it == pos_.end()) return std::nullopt;
  return it->second;
}

CorpusIndex build_index(const Corpus& corpus, std::optional<Split> split) {
  std::vector<std::string> ids;
  std::vector<Vec> pooled;
  std::vector<Labels> labels;
  for (const auto& it : corpus.items) {
    if (split && it.split != *split) continue;
    ids.push_back(it.id);
    pooled.push_back(pool(it.audio));
    labels.push_back(it.labels);
  }
  if (ids.empty()) throw Error(Errc::BuildError, "split has no items");
  return CorpusIndex(std::move(ids), Mat::from_rows(pooled), std::move(labels));
}

json to_json(const RankedResult& r) {
  json results = json::array();
  for (const auto& h : r.hits) results.push_back({{"id", h.id}, {"score", h.score}, {"rank", h.rank}, {"labels", h.labels}});
  return json{{"query", r.query}, {"results", results}};
}

namespace {

Vec scores_of(const CorpusIndex& index, std::span<const double> query) {
  if (query.size() != index.dim()) throw Error(Errc::ShapeError, "query dimension differs from index");
  const double qn = norm2(query);
  if (!(qn > 0.0)) throw Error(Errc::ZeroVector, "query has zero norm");
  Vec s(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) s[i] = std::clamp(dot(index.keys().row(i), query) / qn, -1.0, 1.0);
  return s;
}

std::vector<std::size_t> ranking(const CorpusIndex& index, const Vec& scores, std::size_t k) {
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.ids()[a] < index.ids()[b];
  };
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  order.resize(k);
  return order;
}

}  // namespace

RankedResult topk(const CorpusIndex& index, std::span<const double> query, std::size_t k) {
  if (k == 0) throw Error(Errc::EvalError, "k must be at least 1");
  const Vec scores = scores_of(index, query);
  RankedResult r;
  const auto order = ranking(index, scores, k);
  for (std::size_t i = 0; i < order.size(); ++i) {
    r.hits.push_back(Hit{index.ids()[order[i]], scores[order[i]], i + 1, index.labels()[order[i]]});
  }
  return r;
}

std::size_t rank_of(const CorpusIndex& index, std::span<const double> query, const std::string& id) {
  const auto pos = index.position(id);
  if (!pos) throw Error(Errc::EvalError, "target " + id + " is not in the index");
  const Vec scores = scores_of(index, query);
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == *pos) continue;
    if (scores[i] > scores[*pos] || (scores[i] == scores[*pos] && index.ids()[i] < id)) ++rank;
  }
  return rank;
}

std::string cond_digest(const CondSeq& cond) {
  // FNV-1a over the f32 token values plus shape and null flag.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t shape[3] = {cond.tokens.rows(), cond.tokens.cols(), cond.is_null ? 1u : 0u};
  mix(shape, sizeof shape);
  for (double x : cond.tokens.data()) {
    const float f = static_cast<float>(x);
    mix(&f, sizeof f);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

GhostQuery run_ghost_query(const DenoiserModel& model, const GuidanceSpec& g, std::size_t n_q,
                           const NoiseSchedule& sched, std::uint64_t seed, const CorpusIndex& index, std::size_t k,
                           std::size_t frames, const AlignmentTransform* alignment) {
  GhostQuery out;
  out.latents = sample(model, g, n_q, sched, seed, frames);
  out.query = aggregate(out.latents);
  if (alignment) out.query = apply_alignment(*alignment, out.query);
  out.result = topk(index, out.query, k);
  out.result.query = json{{"positive", cond_digest(g.positive)},
                          {"negative", cond_digest(g.negative)},
                          {"w", g.w},
                          {"n_q", n_q},
                          {"seed", seed},
                          {"schedule", sched.hash()},
                          {"aligned", alignment != nullptr}};
  return out;
}

RankedResult ghost_query(const DenoiserModel& model, const GuidanceSpec& g, std::size_t n_q,
                         const NoiseSchedule& sched, std::uint64_t seed, const CorpusIndex& index, std::size_t k,
                         std::size_t frames, const AlignmentTransform* alignment) {
  return run_ghost_query(model, g, n_q, sched, seed, index, k, frames, alignment).result;
}

json to_json(const RetrievalMetrics& m) {
  json recall = json::object();
  for (const auto& [k, v] : m.recall_at) recall["R@" + std::to_string(k)] = v;
  return json{{"recall", recall}, {"median_rank_pct", m.median_rank_pct}, {"n_queries", m.n_queries}};
}

RetrievalMetrics eval_retrieval(const CorpusIndex& index, std::span<const EvalQuery> queries,
                                std::span<const std::size_t> ks) {
  if (queries.empty()) throw Error(Errc::EvalError, "no queries");
  std::vector<double> ranks;
  ranks.reserve(queries.size());
  for (const auto& q : queries) ranks.push_back(static_cast<double>(rank_of(index, q.query, q.target_id)));
  RetrievalMetrics m;
  m.n_queries = queries.size();
  for (std::size_t k : ks) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](double r) { return r <= static_cast<double>(k); });
    m.recall_at[k] = static_cast<double>(hits) / static_cast<double>(ranks.size());
  }
  std::sort(ranks.begin(), ranks.end());
  const std::size_t n = ranks.size();
  const double median = n % 2 ? ranks[n / 2] : 0.5 * (ranks[n / 2 - 1] + ranks[n / 2]);
  m.median_rank_pct = 100.0 * median / static_cast<double>(index.size());
  return m;
}

double label_recall_at(const CorpusIndex& index, std::span<const Vec> queries, std::span<const Labels> wanted,
                       std::size_t k) {
  if (queries.size() != wanted.size() || queries.empty()) throw Error(Errc::EvalError, "one label set per query required");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const RankedResult r = topk(index, queries[q], k);
    const bool ok = std::any_of(r.hits.begin(), r.hits.end(), [&](const Hit& h) {
      return std::all_of(wanted[q].begin(), wanted[q].end(), [&](const auto& kv) {
        const auto it = h.labels.find(kv.first);
        return it != h.labels.end() && it->second == kv.second;
      });
    });
    hits += ok ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

Vec text_interp(std::span<const double> z_a, std::span<const double> z_t_pos, std::span<const double> z_t_neg,
                double w) {
  if (z_a.size() != z_t_pos.size() || z_a.size() != z_t_neg.size()) throw Error(Errc::ShapeError, "interpolation dims differ");
  Vec out(z_a.begin(), z_a.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += w * (z_t_pos[k] - z_t_neg[k]);
  return out;
}

Vec audio_interp(std::span<const double> z_gen, std::span<const double> z_gen_neg, double w) {
  if (z_gen.size() != z_gen_neg.size()) throw Error(Errc::ShapeError, "interpolation dims differ");
  Vec out(z_gen.begin(), z_gen.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += w * (z_gen[k] - z_gen_neg[k]);
  return out;
}

}  // namespace gdr
