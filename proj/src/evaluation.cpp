// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/evaluation.hpp"

#include <algorithm>

#include "gdr/error.hpp"

namespace gdr {

using nlohmann::json;

std::vector<Prompt> held_out_prompts(const Corpus& corpus, Split split) {
  std::vector<Prompt> out;
  for (const auto& it : corpus.items) {
    if (it.split != split || it.cond.is_null || it.cond.tokens.rows() != 2) continue;
    Labels wanted;
    for (const char* key : {"genre", "instrument"}) {
      const auto l = it.labels.find(key);
      if (l != it.labels.end()) wanted[key] = l->second;
    }
    out.push_back({it.id, it.cond, std::move(wanted)});
  }
  if (out.empty()) throw Error(Errc::EvalError, "split " + split_name(split) + " has no fully captioned items");
  return out;
}

std::uint64_t prompt_seed(std::uint64_t seed, std::size_t p) {
  return seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(p) + 1);
}

json to_json(const EvalSettings& s) {
  return json{{"w", s.w},         {"n_q", s.n_q},     {"seed", s.seed}, {"frames", s.frames},
              {"ks", s.ks},       {"align", s.align}, {"ridge", s.ridge}};
}

PromptSamples sample_prompts(const DenoiserModel& model, std::span<const Prompt> prompts,
                             const NoiseSchedule& sched, const EvalSettings& s) {
  PromptSamples out;
  const CondSeq null = CondSeq::null(model.dims.d_t);
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const GuidanceSpec g{s.w, prompts[p].cond, null};
    const auto latents = sample(model, g, s.n_q, sched, prompt_seed(s.seed, p), s.frames);
    std::vector<Vec> rows;
    for (const auto& z : latents) rows.push_back(pool(z));
    out.clusters.push_back(Mat::from_rows(rows));
    out.queries.push_back(aggregate(latents));
  }
  return out;
}

AlignmentTransform calibrate_alignment(const PromptSamples& samples, const CorpusIndex& index, double ridge) {
  std::vector<Vec> rows;
  for (const auto& c : samples.clusters)
    for (std::size_t r = 0; r < c.rows(); ++r) rows.emplace_back(c.row(r).begin(), c.row(r).end());
  return fit_alignment(Mat::from_rows(rows), index.raw(), ridge);
}

Vec label_centroid(const CorpusIndex& index, const Labels& wanted) {
  Vec c(index.dim(), 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& l = index.labels()[i];
    const bool match = std::all_of(wanted.begin(), wanted.end(), [&](const auto& kv) {
      const auto it = l.find(kv.first);
      return it != l.end() && it->second == kv.second;
    });
    if (!match) continue;
    const auto row = index.raw().row(i);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += row[k];
    ++n;
  }
  if (n == 0) throw Error(Errc::EvalError, "no index item carries the wanted labels");
  for (double& x : c) x /= static_cast<double>(n);
  return c;
}

json to_json(const EvalReport& r) {
  json cell = json::object();
  for (const auto& [k, v] : r.cell_recall) cell["R@" + std::to_string(k)] = v;
  json j{{"item", to_json(r.item)},
         {"cell_recall", cell},
         {"fd", r.fd},
         {"clap", r.clap},
         {"diversity", to_json(r.diversity)},
         {"provenance", r.provenance}};
  j["alignment"] = r.alignment ? to_json(*r.alignment) : json(nullptr);
  return j;
}

EvalReport evaluate(const DenoiserModel& model, std::span<const Prompt> prompts, const CorpusIndex& index,
                    const NoiseSchedule& sched, const EvalSettings& s) {
  if (prompts.empty()) throw Error(Errc::EvalError, "empty prompt set");
  const PromptSamples samples = sample_prompts(model, prompts, sched, s);
  EvalReport r;
  std::vector<Mat> clusters = samples.clusters;
  std::vector<Vec> queries = samples.queries;
  if (s.align) {
    r.alignment = calibrate_alignment(samples, index, s.ridge);
    for (auto& c : clusters) c = apply_alignment(*r.alignment, c);
    for (auto& q : queries) q = apply_alignment(*r.alignment, q);
  }

  std::vector<EvalQuery> eq;
  std::vector<Labels> wanted;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    eq.push_back({queries[p], prompts[p].source_id});
    wanted.push_back(prompts[p].wanted);
  }
  r.item = eval_retrieval(index, eq, s.ks);
  for (std::size_t k : s.ks) r.cell_recall[k] = label_recall_at(index, queries, wanted, k);

  std::vector<Vec> all;
  for (const auto& c : clusters)
    for (std::size_t i = 0; i < c.rows(); ++i) all.emplace_back(c.row(i).begin(), c.row(i).end());
  r.fd = frechet(Mat::from_rows(all), index.raw());

  double clap = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) clap += clap_score(queries[p], label_centroid(index, wanted[p]));
  r.clap = clap / static_cast<double>(prompts.size());

  if (s.n_q >= 2) r.diversity = diversity_report(clusters);
  r.provenance = to_json(s);
  r.provenance["schedule"] = sched.hash();
  r.provenance["n_prompts"] = prompts.size();
  r.provenance["index_size"] = index.size();
  return r;
}

RetrievalMetrics self_retrieval(const CorpusIndex& index, std::span<const std::size_t> ks) {
  std::vector<EvalQuery> eq;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto row = index.keys().row(i);
    eq.push_back({Vec(row.begin(), row.end()), index.ids()[i]});
  }
  return eval_retrieval(index, eq, ks);
}

ChanceLevel permutation_chance(const CorpusIndex& index, std::span<const Vec> queries,
                               std::span<const Labels> wanted, std::size_t k, std::size_t n_perm,
                               std::uint64_t seed) {
  if (n_perm == 0) throw Error(Errc::EvalError, "permutation count must be positive");
  std::vector<double> draws;
  std::vector<Labels> perm(wanted.begin(), wanted.end());
  SeededRng rng(seed, 0x7065726d);
  for (std::size_t t = 0; t < n_perm; ++t) {
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    draws.push_back(label_recall_at(index, queries, perm, k));
  }
  ChanceLevel c;
  for (double d : draws) c.mean += d;
  c.mean /= static_cast<double>(draws.size());
  std::sort(draws.begin(), draws.end());
  c.p95 = draws[std::min(draws.size() - 1, static_cast<std::size_t>(0.95 * static_cast<double>(draws.size())))];
  return c;
}

}  // namespace gdr
