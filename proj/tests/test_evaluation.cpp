// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "gdr/error.hpp"
#include "gdr/evaluation.hpp"
#include "testutil.hpp"

namespace gdr {
namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.n_genres = 2;
  s.n_instruments = 2;
  s.items_per_cell = 20;
  return s;
}

TEST(Prompts, FullCaptionsOfTheSplitOnly) {
  const Corpus c = gen_corpus(small_spec());
  const auto prompts = held_out_prompts(c);
  EXPECT_FALSE(prompts.empty());
  for (const auto& p : prompts) {
    const CorpusItem* it = c.find(p.source_id);
    ASSERT_NE(it, nullptr);
    EXPECT_EQ(it->split, Split::Test);
    EXPECT_EQ(p.cond.tokens.rows(), 2u);
    EXPECT_EQ(p.wanted.at("genre"), it->labels.at("genre"));
    EXPECT_EQ(p.wanted.at("instrument"), it->labels.at("instrument"));
  }
}

TEST(Prompts, SeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::size_t p = 0; p < 100; ++p) seen.insert(prompt_seed(7, p));
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(prompt_seed(7, 3), prompt_seed(7, 3));
}

TEST(SelfRetrieval, Perfect) {
  const CorpusIndex idx = build_index(gen_corpus(small_spec()));
  const std::vector<std::size_t> ks{1, 5};
  const RetrievalMetrics m = self_retrieval(idx, ks);
  EXPECT_EQ(m.recall_at.at(1), 1.0);
  EXPECT_DOUBLE_EQ(m.median_rank_pct, 100.0 / static_cast<double>(idx.size()));
}

TEST(LabelCentroid, MeanOfMatchingRawKeys) {
  const CorpusIndex idx({"a", "b", "c"}, Mat(3, 2, Vec{1, 0, 3, 2, 5, 5}),
                        {Labels{{"genre", "g0"}}, Labels{{"genre", "g0"}}, Labels{{"genre", "g1"}}});
  EXPECT_EQ(label_centroid(idx, Labels{{"genre", "g0"}}), (Vec{2, 1}));
  EXPECT_THROW(label_centroid(idx, Labels{{"genre", "g7"}}), Error);
}

TEST(PermutationChance, OracleQueriesFarAboveChance) {
  const Corpus c = gen_corpus(small_spec());
  const CorpusIndex idx = build_index(c);
  const SynthWorld w = *world_of(c);
  std::vector<Vec> queries;
  std::vector<Labels> wanted;
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < 2; ++i)
      for (int rep = 0; rep < 5; ++rep) {
        queries.push_back(w.centroid(g, i));
        wanted.push_back(Labels{{"genre", "g" + std::to_string(g)}, {"instrument", "i" + std::to_string(i)}});
      }
  EXPECT_EQ(label_recall_at(idx, queries, wanted, 1), 1.0);
  const ChanceLevel ch = permutation_chance(idx, queries, wanted, 1, 200, 3);
  EXPECT_NEAR(ch.mean, 0.25, 0.06);
  EXPECT_GE(ch.p95, ch.mean);
  EXPECT_LT(ch.p95, 1.0);
  EXPECT_EQ(ch.mean, permutation_chance(idx, queries, wanted, 1, 200, 3).mean);
}

TEST(Evaluate, ConstantModelReport) {
  const Corpus c = gen_corpus(small_spec());
  const CorpusIndex idx = build_index(c);
  const SynthWorld w = *world_of(c);
  const DenoiserModel m = testutil::constant_model(w.centroid(1, 0), c.d_t);
  const auto prompts = held_out_prompts(c);
  EvalSettings s;
  s.n_q = 3;
  s.frames = 4;
  const EvalReport r = evaluate(m, prompts, idx, build_schedule(), s);
  // Every query lands on cell (g1, i0): cell recall is that cell's prompt share.
  double share = 0.0;
  for (const auto& p : prompts) share += (p.wanted.at("genre") == "g1" && p.wanted.at("instrument") == "i0");
  share /= static_cast<double>(prompts.size());
  EXPECT_NEAR(r.cell_recall.at(1), share, 1e-12);
  EXPECT_DOUBLE_EQ(r.diversity.mics, 1.0);
  EXPECT_NEAR(r.diversity.minvs, 1.0, 1e-9);
  EXPECT_GT(r.fd, 0.0);
  const auto j = to_json(r);
  EXPECT_EQ(j.at("provenance").at("n_prompts"), prompts.size());
  EXPECT_TRUE(j.at("alignment").is_null());
  EXPECT_TRUE(j.at("item").at("recall").contains("R@10"));
}

TEST(Evaluate, Deterministic) {
  const Corpus c = gen_corpus(small_spec());
  const CorpusIndex idx = build_index(c);
  ModelDims d;
  d.d_t = c.d_t;
  const DenoiserModel m = init_model(Arch::PooledMlp, d, 4);
  const auto prompts = held_out_prompts(c);
  EvalSettings s;
  s.n_q = 2;
  s.frames = 4;
  s.seed = 9;
  EXPECT_EQ(to_json(evaluate(m, prompts, idx, build_schedule(), s)).dump(),
            to_json(evaluate(m, prompts, idx, build_schedule(), s)).dump());
}

TEST(Evaluate, AlignmentMovesSamplesOntoIndex) {
  const Corpus c = gen_corpus(small_spec());
  const CorpusIndex idx = build_index(c);
  ModelDims d;
  d.d_t = c.d_t;
  const DenoiserModel m = init_model(Arch::SeqAttn, d, 4);
  const auto prompts = held_out_prompts(c);
  EvalSettings s;
  s.n_q = 5;
  s.frames = 4;
  const NoiseSchedule sched = build_schedule();
  const EvalReport plain = evaluate(m, prompts, idx, sched, s);
  s.align = true;
  const EvalReport aligned = evaluate(m, prompts, idx, sched, s);
  ASSERT_TRUE(aligned.alignment.has_value());
  EXPECT_LT(aligned.fd, plain.fd);
}

}  // namespace
}  // namespace gdr
