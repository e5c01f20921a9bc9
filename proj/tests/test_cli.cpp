// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gdr/denoiser.hpp"
#include "gdr/latentdata.hpp"
#include "json.hpp"
#include "testutil.hpp"

namespace gdr {
namespace {

using nlohmann::json;

class Cli : public ::testing::Test {
 protected:
  testutil::TempDir dir;

  // Runs the binary inside the temp dir; returns its exit status.
  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = "cd '" + dir.path().string() + "' && " + env + " '" GDR_CLI_PATH "' " + args +
                            " >'" + (dir / "stdout").string() + "' 2>'" + (dir / "stderr").string() + "'";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  std::string read(const std::string& name) {
    std::ifstream in(dir / name, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  std::string path(const std::string& name) { return (dir / name).string(); }

  void small_corpus(const std::string& name = "c.gdrl") {
    ASSERT_EQ(run("gen-corpus -o " + name + " --grid 2x2 --items 8 --seed 3"), 0) << read("stderr");
  }

  void tiny_model(const std::string& extra = "", const std::string& name = "m.gdrm") {
    ASSERT_EQ(run("train --corpus c.gdrl -o " + name + " --steps 20 --batch 8 --warmup 2 --hidden 16 --workers 1 " + extra),
              0)
        << read("stderr");
  }
};

TEST_F(Cli, GenCorpusDefaultGrid) {
  ASSERT_EQ(run("gen-corpus -o c.gdrl --seed 0"), 0) << read("stderr");
  const Corpus c = load_corpus(path("c.gdrl"));
  EXPECT_EQ(c.items.size(), 256u);
  const json labels = json::parse(read("c.gdrl.labels.json"));
  EXPECT_EQ(labels.size(), 256u);
  const json snap = json::parse(read("c.gdrl.config.json"));
  EXPECT_EQ(snap.at("command"), "gen-corpus");
}

TEST_F(Cli, MissingOutputIsUsageError) {
  EXPECT_EQ(run("gen-corpus --seed 1"), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("gen-corpus -o c.gdrl --grid 0x3"), 1);
}

TEST_F(Cli, MissingInputFileFails) {
  EXPECT_NE(run("train --corpus absent.gdrl -o m.gdrm"), 0);
  EXPECT_FALSE(std::filesystem::exists(dir / "m.gdrm"));
}

TEST_F(Cli, TrainAndQueryAreByteIdenticalOnRerun) {
  small_corpus();
  tiny_model();
  const std::string m1 = read("m.gdrm");
  tiny_model("", "m2.gdrm");
  EXPECT_EQ(m1, read("m2.gdrm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "m.gdrm.log.jsonl"));
  const json report = json::parse(read("m.gdrm.report.json"));
  EXPECT_TRUE(report.contains("final_train_loss"));

  const std::string q = "query --model m.gdrm --corpus c.gdrl --cond g1,i0 --nq 2 --k 5 --frames 4 --seed 7 -o ";
  ASSERT_EQ(run(q + "q1.json"), 0) << read("stderr");
  ASSERT_EQ(run(q + "q2.json"), 0);
  EXPECT_EQ(read("q1.json"), read("q2.json"));
  const json r = json::parse(read("q1.json"));
  EXPECT_EQ(r.at("results").size(), 5u);
  EXPECT_EQ(r.at("query").at("seed"), 7);
}

TEST_F(Cli, SeedFromEnvironment) {
  small_corpus();
  tiny_model();
  const std::string q = "query --model m.gdrm --corpus c.gdrl --cond g0 --nq 2 --frames 4 -o ";
  ASSERT_EQ(run(q + "a.json", "GDR_SEED=11"), 0) << read("stderr");
  ASSERT_EQ(run(q + "b.json --seed 11"), 0);
  EXPECT_EQ(read("a.json"), read("b.json"));
  EXPECT_EQ(run(q + "c.json", "GDR_SEED=abc"), 2);
}

TEST_F(Cli, ReplayReproducesOutput) {
  small_corpus();
  tiny_model();
  ASSERT_EQ(run("query --model m.gdrm --corpus c.gdrl --cond g1 --negative i1 --nq 2 --frames 4 --seed 3 -o q.json"), 0)
      << read("stderr");
  ASSERT_EQ(run("replay q.json.config.json -o r.json"), 0) << read("stderr");
  EXPECT_EQ(read("q.json"), read("r.json"));
  ASSERT_EQ(run("query --config q.json.config.json -o s.json"), 0) << read("stderr");
  EXPECT_EQ(read("q.json"), read("s.json"));
}

TEST_F(Cli, InvertFromItem) {
  small_corpus();
  tiny_model();
  const Corpus c = load_corpus(path("c.gdrl"));
  ASSERT_EQ(run("query --model m.gdrm --corpus c.gdrl --cond g0,i1 --invert-from " + c.items[2].id +
                " --invert-steps 5 -o q.json"),
            0)
      << read("stderr");
  EXPECT_EQ(json::parse(read("q.json")).at("results").size(), 10u);
  EXPECT_NE(run("query --model m.gdrm --corpus c.gdrl --invert-from nope -o q.json"), 0);
}

TEST_F(Cli, GradcheckPassesAndZeroToleranceFails) {
  ASSERT_EQ(run("gradcheck -o g.json"), 0) << read("stderr");
  const json g = json::parse(read("g.json"));
  EXPECT_TRUE(g.dump().find("worst_segment") != std::string::npos);
  EXPECT_EQ(run("gradcheck --tolerance 0 -o g0.json"), 1);
}

TEST_F(Cli, SelfEvalIsPerfect) {
  small_corpus();
  tiny_model();
  ASSERT_EQ(run("eval --model m.gdrm --corpus c.gdrl --self --ks 1 -o e.json"), 0) << read("stderr");
  EXPECT_EQ(json::parse(read("e.json")).at("item").at("recall").at("R@1"), 1.0);
}

TEST_F(Cli, EvalWithAlignment) {
  small_corpus();
  tiny_model();
  ASSERT_EQ(run("eval --model m.gdrm --corpus c.gdrl --prompt-split train --nq 3 --frames 4 --align -o e.json"), 0)
      << read("stderr");
  const json e = json::parse(read("e.json"));
  EXPECT_TRUE(e.at("alignment").is_object());
  EXPECT_TRUE(e.at("cell_recall").contains("R@5"));
  ASSERT_EQ(run("align --model m.gdrm --corpus c.gdrl --nq 3 --frames 4 -o t.json"), 0) << read("stderr");
  ASSERT_EQ(run("query --model m.gdrm --corpus c.gdrl --cond g0 --nq 3 --frames 4 --align t.json -o q.json"), 0)
      << read("stderr");
  EXPECT_TRUE(json::parse(read("q.json")).at("query").at("aligned").get<bool>());
}

TEST_F(Cli, ObjectiveAndMaskingDispatch) {
  small_corpus();
  tiny_model("--objective regression", "r.gdrm");
  EXPECT_EQ(load_model(path("r.gdrm")).objective, Objective::Regression);
  EXPECT_GT(load_model(path("r.gdrm")).dims.mask_T, 0u);
  tiny_model("--objective epsilon --arch pooledmlp", "e.gdrm");
  EXPECT_EQ(load_model(path("e.gdrm")).arch, Arch::PooledMlp);
  tiny_model("--cond-mask-prob 1.0", "u.gdrm");
  const json snap = json::parse(read("u.gdrm.config.json"));
  EXPECT_EQ(snap.at("params").at("cond-mask-prob"), 1.0);
  EXPECT_EQ(run("train --corpus c.gdrl -o x.gdrm --cond-mask-prob 1.5 --steps 5 --warmup 1"), 1);
  EXPECT_NE(run("train --corpus c.gdrl -o x.gdrm --arch transformer"), 0);
}

TEST_F(Cli, SessionReplay) {
  small_corpus();
  tiny_model();
  const json snap{{"seed", 4},
                  {"history", json::array({json{{"op", "query"}, {"cond", "g1"}, {"n_q", 2}, {"k", 3}},
                                           json{{"op", "negative"}, {"neg_cond", "i0"}, {"k", 3}}})}};
  std::ofstream(dir / "s.json") << snap.dump();
  ASSERT_EQ(run("session-replay --model m.gdrm --corpus c.gdrl --session s.json -o out.json"), 0) << read("stderr");
  ASSERT_EQ(run("session-replay --model m.gdrm --corpus c.gdrl --session s.json -o out2.json"), 0);
  EXPECT_EQ(read("out.json"), read("out2.json"));
  EXPECT_EQ(json::parse(read("out.json")).at("results").size(), 3u);
}

}  // namespace
}  // namespace gdr
