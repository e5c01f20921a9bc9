// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

// gdr command-line tool. Every command that produces files also writes a
// "<output>.config.json" snapshot; `gdr replay <snapshot>` or
// `gdr <command> --config <snapshot>` re-runs it.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gdr/alignmetrics.hpp"
#include "gdr/diffusion.hpp"
#include "gdr/error.hpp"
#include "gdr/evaluation.hpp"
#include "gdr/retrieval.hpp"
#include "gdr/runconfig.hpp"
#include "gdr/service.hpp"
#include "httplib.h"
#include "json.hpp"

namespace {

using nlohmann::json;
using namespace gdr;

// Binds CLI options to variables and mirrors them into a params object.
class Params {
 public:
  explicit Params(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& name, T& ref, const std::string& desc, const std::string& shortname = "") {
    const std::string flags = shortname.empty() ? "--" + name : shortname + ",--" + name;
    CLI::Option* opt = app_->add_option(flags, ref, desc);
    if constexpr (!is_optional<T>::value) opt->capture_default_str();
    fields_.push_back({name, opt, [&ref, name](json& j) { put(j, name, ref); },
                       [&ref, name](const json& j) { take(j, name, ref); }});
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& ref, const std::string& desc) {
    CLI::Option* opt = app_->add_flag("--" + name, ref, desc);
    fields_.push_back({name, opt, [&ref, name](json& j) { j[name] = ref; },
                       [&ref, name](const json& j) { ref = j.at(name).get<bool>(); }});
    return opt;
  }

  json dump() const {
    json j = json::object();
    for (const auto& f : fields_) f.put(j);
    return j;
  }

  void load(const json& j) {
    try {
      for (const auto& f : fields_) f.take(j);
    } catch (const json::exception& e) {
      throw Error(Errc::FormatError, std::string("config snapshot does not match command: ") + e.what());
    }
  }

  bool given(const std::string& name) const {
    for (const auto& f : fields_)
      if (f.name == name) return f.opt->count() > 0;
    return false;
  }

 private:
  template <class T>
  struct is_optional : std::false_type {};
  template <class T>
  struct is_optional<std::optional<T>> : std::true_type {};

  template <class T>
  static void put(json& j, const std::string& k, const T& v) {
    if constexpr (is_optional<T>::value) {
      j[k] = v ? json(*v) : json(nullptr);
    } else {
      j[k] = v;
    }
  }
  template <class T>
  static void take(const json& j, const std::string& k, T& v) {
    if constexpr (is_optional<T>::value) {
      const json& x = j.at(k);
      if (x.is_null()) {
        v.reset();
      } else {
        v = x.get<typename T::value_type>();
      }
    } else {
      v = j.at(k).get<T>();
    }
  }

  struct Field {
    std::string name;
    CLI::Option* opt;
    std::function<void(json&)> put;
    std::function<void(const json&)> take;
  };
  CLI::App* app_;
  std::vector<Field> fields_;
};

// Shared plumbing of one subcommand: flag binding, --config replay,
// GDR_SEED, and the snapshot written before the command runs.
struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::unique_ptr<Params> params;
  std::string config_path;
  std::string snapshot_override;
  std::string output;
  bool has_seed = false;
  std::uint64_t* seed = nullptr;
  bool writes_snapshot = true;
  std::function<int()> run;
};

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(Errc::UsageError, std::string("missing required option --") + flag);
  return value;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    std::cout.flush();
  } else {
    write_text(path, text);
  }
}

void prepare(Command& c, const RunConfig* replayed) {
  if (replayed) {
    if (replayed->command != c.name) {
      throw Error(Errc::UsageError, "snapshot is for '" + replayed->command + "', not '" + c.name + "'");
    }
    const bool out_given = c.params->given("output");
    const std::string out = c.output;
    c.params->load(replayed->params);
    if (out_given) c.output = out;
  } else if (c.has_seed && !c.params->given("seed")) {
    if (const auto env = seed_from_env()) *c.seed = *env;
  }
  if (!c.writes_snapshot) return;
  std::filesystem::path snap = c.snapshot_override;
  if (snap.empty()) snap = c.output.empty() ? std::filesystem::path("gdr-" + c.name + ".config.json") : snapshot_path_for(c.output);
  save_run_config(RunConfig{c.name, c.params->dump()}, snap);
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t a = 0, b = 0;
    const std::string l = s.substr(0, x), r = s.substr(x + 1);
    const auto g = std::stoull(l, &a);
    const auto i = std::stoull(r, &b);
    if (a != l.size() || b != r.size()) throw std::invalid_argument(s);
    return {g, i};
  } catch (const std::exception&) {
    throw Error(Errc::UsageError, "--grid expects GxI, e.g. 4x4, got '" + s + "'");
  }
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(tok, &used);
      if (used != tok.size() || v == 0) throw std::invalid_argument(tok);
      ks.push_back(v);
    } catch (const std::exception&) {
      throw Error(Errc::UsageError, "--ks expects positive integers separated by commas");
    }
  }
  if (ks.empty()) throw Error(Errc::UsageError, "--ks is empty");
  return ks;
}

std::optional<Split> parse_split_opt(const std::string& s) {
  if (s == "all") return std::nullopt;
  return parse_split(s);
}

CondSeq cond_from(const Corpus& corpus, const std::string& attrs) {
  if (attrs.empty()) return CondSeq::null(corpus.d_t);
  const auto world = world_of(corpus);
  if (!world) throw Error(Errc::UsageError, "attribute conditioning needs a synthetic corpus");
  return world->cond_for(attrs);
}

NoiseSchedule schedule_of(const DenoiserModel& model) {
  if (!model.meta.contains("schedule")) return build_schedule();
  return schedule_from_json(model.meta["schedule"]);
}

std::string pretty_result(const RankedResult& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%5s  %-16s %9s  %s\n", "rank", "id", "score", "labels");
  os << line;
  for (const auto& h : r.hits) {
    std::string labels;
    for (const auto& [k, v] : h.labels) {
      if (k == "caption") continue;
      labels += (labels.empty() ? "" : " ") + k + "=" + v;
    }
    std::snprintf(line, sizeof line, "%5zu  %-16s %9.6f  %s\n", h.rank, h.id.c_str(), h.score, labels.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ghost-query diffusion retrieval on synthetic latent corpora"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> commands;

  auto make = [&](const std::string& name, const std::string& desc) -> Command& {
    auto c = std::make_unique<Command>();
    c->name = name;
    c->app = app.add_subcommand(name, desc);
    c->params = std::make_unique<Params>(c->app);
    c->app->add_option("--config", c->config_path, "replay the run recorded in a config snapshot");
    c->app->add_option("--snapshot", c->snapshot_override, "where to write the config snapshot");
    commands.push_back(std::move(c));
    return *commands.back();
  };

  // gen-corpus
  SynthSpec spec;
  std::string grid = "4x4";
  {
    Command& c = make("gen-corpus", "generate a synthetic latent corpus");
    Params& p = *c.params;
    p.add("output", c.output, "corpus file (.gdrl)", "-o");
    p.add("grid", grid, "genres x instruments");
    p.add("items", spec.items_per_cell, "items per cell");
    p.add("seed", spec.seed, "world and sampling seed");
    p.add("d-a", spec.d_a, "audio latent width");
    p.add("d-t", spec.d_t, "text token width");
    p.add("frames", spec.T, "frames per item");
    p.add("centroid-scale", spec.centroid_scale, "attribute direction scale");
    p.add("noise-scale", spec.noise_scale, "per-frame noise");
    p.add("token-noise", spec.token_noise, "caption token noise");
    p.add("partial-caption-prob", spec.partial_caption_prob, "probability of a one-attribute caption");
    p.add("val-fraction", spec.val_fraction, "validation share per cell");
    p.add("test-fraction", spec.test_fraction, "test share per cell");
    p.add("shift-scale", spec.shift_scale, "audio-space scale distortion");
    p.add("shift-offset-norm", spec.shift_offset_norm, "norm of the audio-space offset");
    p.add("shift-seed", spec.shift_seed, "seed of the offset direction");
    c.has_seed = true;
    c.seed = &spec.seed;
    c.run = [&c, &spec, &grid]() {
      const std::string out = require(c.output, "output");
      std::tie(spec.n_genres, spec.n_instruments) = parse_grid(grid);
      const Corpus corpus = gen_corpus(spec);
      save_corpus(corpus, out);
      json labels = json::object();
      for (const auto& it : corpus.items) labels[it.id] = {{"labels", it.labels}, {"split", split_name(it.split)}};
      write_text(out + ".labels.json", dump_json(labels));
      std::cerr << "wrote " << corpus.items.size() << " items to " << out << "\n";
      return 0;
    };
  }

  // train
  struct TrainArgs {
    std::string corpus, preset = "desk", arch = "seqattn", objective = "sample", log;
    std::optional<double> cond_mask_prob, lr;
    std::optional<std::size_t> steps, batch, warmup, hidden;
    std::uint64_t seed = 0;
    std::size_t d_tau = 32;
    unsigned workers = 0;
    int sched_n = 50;
    double beta_start = 1e-4, beta_end = 0.02;
  } ta;
  {
    Command& c = make("train", "train a denoiser on a corpus");
    Params& p = *c.params;
    p.add("corpus", ta.corpus, "training corpus (.gdrl)");
    p.add("output", c.output, "checkpoint file (.gdrm)", "-o");
    p.add("preset", ta.preset, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
    p.add("arch", ta.arch, "seqattn | pooledmlp")->check(CLI::IsMember({"seqattn", "pooledmlp"}));
    p.add("objective", ta.objective, "sample | epsilon | regression")
        ->check(CLI::IsMember({"sample", "epsilon", "regression"}));
    p.add("cond-mask-prob", ta.cond_mask_prob, "conditioning dropout (preset value when unset)");
    p.add("steps", ta.steps, "optimizer steps (preset value when unset)");
    p.add("batch", ta.batch, "batch size (preset value when unset)");
    p.add("lr", ta.lr, "peak learning rate (preset value when unset)");
    p.add("warmup", ta.warmup, "warmup steps (preset value when unset)");
    p.add("hidden", ta.hidden, "hidden width (64 seqattn, 256 pooledmlp when unset)");
    p.add("d-tau", ta.d_tau, "timestep embedding width");
    p.add("seed", ta.seed, "init and training seed");
    p.add("workers", ta.workers, "gradient worker threads (0 = hardware)");
    p.add("schedule-steps", ta.sched_n, "diffusion steps N");
    p.add("beta-start", ta.beta_start, "first beta");
    p.add("beta-end", ta.beta_end, "last beta");
    p.add("log", ta.log, "JSON-lines training log (default <output>.log.jsonl)");
    c.has_seed = true;
    c.seed = &ta.seed;
    c.run = [&c, &ta]() {
      const std::string out = require(c.output, "output");
      const Corpus corpus = load_corpus(require(ta.corpus, "corpus"));
      TrainConfig cfg = ta.preset == "paper" ? TrainConfig::paper() : TrainConfig::desk();
      cfg.objective = parse_objective(ta.objective);
      if (ta.cond_mask_prob) cfg.cond_mask_prob = *ta.cond_mask_prob;
      if (ta.steps) cfg.steps = *ta.steps;
      if (ta.batch) cfg.batch = *ta.batch;
      if (ta.lr) cfg.lr_peak = *ta.lr;
      if (ta.warmup) cfg.warmup_steps = *ta.warmup;
      cfg.seed = ta.seed;
      cfg.workers = ta.workers;
      cfg.validate();
      const Arch arch = parse_arch(ta.arch);
      ModelDims dims;
      dims.d_a = corpus.d_a;
      dims.d_t = corpus.d_t;
      dims.d_tau = ta.d_tau;
      dims.hidden = ta.hidden.value_or(arch == Arch::SeqAttn ? 64 : 256);
      if (cfg.objective == Objective::Regression) dims.mask_T = corpus.default_T;
      const NoiseSchedule sched = build_schedule(ta.sched_n, ta.beta_start, ta.beta_end);
      const DenoiserModel init = init_model(arch, dims, ta.seed, cfg.objective);

      const std::string log_path = ta.log.empty() ? out + ".log.jsonl" : ta.log;
      std::ostringstream log;
      const TrainResult r = train(init, corpus, sched, cfg, &log);
      save_model(r.model, out);
      write_text(log_path, log.str());
      json report{{"initial_train_loss", r.report.initial_train_loss},
                  {"final_train_loss", r.report.final_train_loss},
                  {"final_val_loss", r.report.final_val_loss},
                  {"steps_run", r.report.steps_run},
                  {"early_stop_step", r.report.early_stop_step ? json(*r.report.early_stop_step) : json(nullptr)},
                  {"train_config", cfg},
                  {"schedule", sched.hash()}};
      write_text(out + ".report.json", dump_json(report));
      std::cerr << "trained " << r.report.steps_run << " steps in " << r.report.wall_seconds << " s, loss "
                << r.report.initial_train_loss << " -> " << r.report.final_train_loss << "\n";
      return 0;
    };
  }

  // query
  struct QueryArgs {
    std::string model, corpus, cond, negative, invert_from, align, split = "all";
    std::size_t nq = 5, k = 10;
    std::optional<std::size_t> frames;
    double w = 2.0;
    int invert_steps = 20;
    std::uint64_t seed = 0;
    bool pretty = false;
  } qa;
  {
    Command& c = make("query", "run a ghost query and rank the corpus");
    Params& p = *c.params;
    p.add("model", qa.model, "checkpoint (.gdrm)");
    p.add("corpus", qa.corpus, "corpus to index (.gdrl)");
    p.add("cond", qa.cond, "attribute list, e.g. g2,i1 (empty = unconditional)");
    p.add("negative", qa.negative, "attributes to steer away from");
    p.add("nq", qa.nq, "ghost queries per prompt");
    p.add("w", qa.w, "guidance strength");
    p.add("k", qa.k, "results to return");
    p.add("seed", qa.seed, "sampling seed");
    p.add("frames", qa.frames, "frames per ghost query (corpus default when unset)");
    p.add("split", qa.split, "index split: all | train | val | test");
    p.add("align", qa.align, "alignment transform JSON from `gdr align`");
    p.add("invert-from", qa.invert_from, "corpus item id to edit instead of sampling");
    p.add("invert-steps", qa.invert_steps, "steps to re-noise when editing");
    p.add("output", c.output, "result file (stdout when unset)", "-o");
    p.flag("pretty", qa.pretty, "print a table instead of JSON");
    c.has_seed = true;
    c.seed = &qa.seed;
    c.run = [&c, &qa]() {
      if (qa.invert_from.empty() && c.params->given("invert-steps")) {
        throw Error(Errc::UsageError, "--invert-steps needs --invert-from");
      }
      const DenoiserModel model = load_model(require(qa.model, "model"));
      const Corpus corpus = load_corpus(require(qa.corpus, "corpus"));
      const NoiseSchedule sched = schedule_of(model);
      const CorpusIndex index = build_index(corpus, parse_split_opt(qa.split));
      std::optional<AlignmentTransform> alignment;
      if (!qa.align.empty()) {
        std::ifstream in(qa.align);
        if (!in) throw Error(Errc::FileError, "cannot open " + qa.align);
        const json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw Error(Errc::FormatError, qa.align + " is not JSON");
        alignment = alignment_from_json(j);
      }
      const GuidanceSpec g{qa.w, cond_from(corpus, qa.cond), cond_from(corpus, qa.negative)};
      RankedResult result;
      if (qa.invert_from.empty()) {
        result = ghost_query(model, g, qa.nq, sched, qa.seed, index, qa.k, qa.frames.value_or(corpus.default_T),
                             alignment ? &*alignment : nullptr);
      } else {
        const CorpusItem* src = corpus.find(qa.invert_from);
        if (src == nullptr) throw Error(Errc::UsageError, "no corpus item '" + qa.invert_from + "'");
        const LatentSeq edited = edit(model, src->audio, g, qa.invert_steps, sched, src->cond);
        Vec q = pool(edited);
        if (alignment) q = apply_alignment(*alignment, q);
        result = topk(index, q, qa.k);
        result.query = json{{"positive", cond_digest(g.positive)},
                            {"negative", cond_digest(g.negative)},
                            {"w", g.w},
                            {"invert_from", qa.invert_from},
                            {"invert_steps", qa.invert_steps},
                            {"schedule", sched.hash()},
                            {"aligned", alignment.has_value()}};
      }
      write_output(c.output, qa.pretty ? pretty_result(result) : dump_json(to_json(result)));
      return 0;
    };
  }

  // eval
  struct EvalArgs {
    std::string model, corpus, prompts, prompt_split = "test", ks = "1,5,10";
    std::size_t nq = 5;
    std::optional<std::size_t> frames;
    double w = 2.0, ridge = 1e-6;
    std::uint64_t seed = 0;
    bool align = false, self = false;
  } ea;
  {
    Command& c = make("eval", "retrieval and diversity metrics over a prompt set");
    Params& p = *c.params;
    p.add("model", ea.model, "checkpoint (.gdrm)");
    p.add("corpus", ea.corpus, "corpus to index (.gdrl)");
    p.add("prompts", ea.prompts, "corpus supplying the prompts (index corpus when unset)");
    p.add("prompt-split", ea.prompt_split, "split whose fully captioned items are the prompts");
    p.add("nq", ea.nq, "ghost queries per prompt");
    p.add("w", ea.w, "guidance strength");
    p.add("seed", ea.seed, "sampling seed");
    p.add("frames", ea.frames, "frames per ghost query (corpus default when unset)");
    p.add("ks", ea.ks, "recall cut-offs");
    p.add("ridge", ea.ridge, "alignment ridge");
    p.flag("align", ea.align, "align generated latents to the index distribution");
    p.flag("self", ea.self, "query the index with its own keys");
    p.add("output", c.output, "metrics file (stdout when unset)", "-o");
    c.has_seed = true;
    c.seed = &ea.seed;
    c.run = [&c, &ea]() {
      const Corpus corpus = load_corpus(require(ea.corpus, "corpus"));
      const CorpusIndex index = build_index(corpus);
      const auto ks = parse_ks(ea.ks);
      json out;
      if (ea.self) {
        out = json{{"item", to_json(self_retrieval(index, ks))}, {"mode", "self"}};
      } else {
        const DenoiserModel model = load_model(require(ea.model, "model"));
        const Corpus prompt_corpus = ea.prompts.empty() ? corpus : load_corpus(ea.prompts);
        const auto prompts = held_out_prompts(prompt_corpus, parse_split(ea.prompt_split));
        EvalSettings s;
        s.w = ea.w;
        s.n_q = ea.nq;
        s.seed = ea.seed;
        s.frames = ea.frames.value_or(corpus.default_T);
        s.ks = ks;
        s.align = ea.align;
        s.ridge = ea.ridge;
        out = to_json(evaluate(model, prompts, index, schedule_of(model), s));
        out["mode"] = "ghost";
      }
      write_output(c.output, dump_json(out));
      return 0;
    };
  }

  // align
  struct AlignArgs {
    std::string model, corpus, prompts, prompt_split = "train";
    std::size_t nq = 5;
    std::optional<std::size_t> frames;
    double w = 2.0, ridge = 1e-6;
    std::uint64_t seed = 0;
  } aa;
  {
    Command& c = make("align", "fit a transform from generated latents to a corpus");
    Params& p = *c.params;
    p.add("model", aa.model, "checkpoint (.gdrm)");
    p.add("corpus", aa.corpus, "target corpus (.gdrl)");
    p.add("prompts", aa.prompts, "corpus supplying the calibration prompts (target when unset)");
    p.add("prompt-split", aa.prompt_split, "split whose fully captioned items are the prompts");
    p.add("nq", aa.nq, "ghost queries per prompt");
    p.add("w", aa.w, "guidance strength");
    p.add("seed", aa.seed, "sampling seed");
    p.add("frames", aa.frames, "frames per ghost query (corpus default when unset)");
    p.add("ridge", aa.ridge, "covariance ridge");
    p.add("output", c.output, "transform JSON", "-o");
    c.has_seed = true;
    c.seed = &aa.seed;
    c.run = [&c, &aa]() {
      const std::string out = require(c.output, "output");
      const DenoiserModel model = load_model(require(aa.model, "model"));
      const Corpus corpus = load_corpus(require(aa.corpus, "corpus"));
      const Corpus prompt_corpus = aa.prompts.empty() ? corpus : load_corpus(aa.prompts);
      const CorpusIndex index = build_index(corpus);
      EvalSettings s;
      s.w = aa.w;
      s.n_q = aa.nq;
      s.seed = aa.seed;
      s.frames = aa.frames.value_or(corpus.default_T);
      const auto prompts = held_out_prompts(prompt_corpus, parse_split(aa.prompt_split));
      const auto samples = sample_prompts(model, prompts, schedule_of(model), s);
      write_text(out, dump_json(to_json(calibrate_alignment(samples, index, aa.ridge))));
      return 0;
    };
  }

  // gradcheck
  struct GradArgs {
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
  } ga;
  {
    Command& c = make("gradcheck", "finite-difference check of both architectures");
    Params& p = *c.params;
    p.add("tolerance", ga.tolerance, "maximum relative error");
    p.add("seed", ga.seed, "parameter and batch seed");
    p.add("output", c.output, "report file (stdout when unset)", "-o");
    c.has_seed = true;
    c.seed = &ga.seed;
    c.run = [&c, &ga]() {
      json out = json::object();
      bool pass = true;
      const ModelDims tiny{6, 5, 8, 6, 0};
      for (Arch arch : {Arch::SeqAttn, Arch::PooledMlp}) {
        const DenoiserModel m = init_model(arch, tiny, ga.seed);
        SeededRng rng(ga.seed, 1);
        const GradientReport r = grad_check(m, ga.tolerance, rng);
        out[arch_name(arch)] = to_json(r);
        pass = pass && r.pass;
        std::cerr << arch_name(arch) << ": max rel error " << r.max_rel_error << " in " << r.worst_segment << "["
                  << r.worst_index << "] " << (r.pass ? "pass" : "FAIL") << "\n";
      }
      out["pass"] = pass;
      write_output(c.output, dump_json(out));
      return pass ? 0 : 1;
    };
  }

  // serve
  struct ServeArgs {
    std::string model, corpus, host = "127.0.0.1";
    int port = 8080;
    std::size_t session_cap = 64;
  } sa;
  {
    Command& c = make("serve", "HTTP API for interactive retrieval sessions");
    Params& p = *c.params;
    p.add("model", sa.model, "checkpoint (.gdrm)");
    p.add("corpus", sa.corpus, "corpus to index (.gdrl)");
    p.add("host", sa.host, "bind address");
    p.add("port", sa.port, "listen port");
    p.add("session-cap", sa.session_cap, "maximum live sessions");
    c.writes_snapshot = false;
    c.run = [&sa]() {
      DenoiserModel model = load_model(require(sa.model, "model"));
      Corpus corpus = load_corpus(require(sa.corpus, "corpus"));
      ServiceConfig cfg;
      cfg.model_name = std::filesystem::path(sa.model).stem().string();
      cfg.corpus_name = std::filesystem::path(sa.corpus).stem().string();
      cfg.session_cap = sa.session_cap;
      cfg.frames = corpus.default_T;
      const NoiseSchedule sched = schedule_of(model);
      auto ctx = std::make_shared<const ServiceContext>(std::move(model), std::move(corpus), sched, cfg);
      Service service(ctx);
      httplib::Server server;
      service.mount(server);
      std::cerr << "serving model '" << cfg.model_name << "' and corpus '" << cfg.corpus_name << "' on " << sa.host
                << ":" << sa.port << "\n";
      if (!server.listen(sa.host, sa.port)) throw Error(Errc::FileError, "cannot listen on port " + std::to_string(sa.port));
      return 0;
    };
  }

  // session-replay
  struct SessionReplayArgs {
    std::string model, corpus, session;
  } sr;
  {
    Command& c = make("session-replay", "recompute a service session's last results from its snapshot");
    Params& p = *c.params;
    p.add("model", sr.model, "checkpoint (.gdrm)");
    p.add("corpus", sr.corpus, "corpus (.gdrl)");
    p.add("session", sr.session, "session snapshot JSON (GET /sessions/{id})");
    p.add("output", c.output, "result file (stdout when unset)", "-o");
    c.run = [&c, &sr]() {
      DenoiserModel model = load_model(require(sr.model, "model"));
      Corpus corpus = load_corpus(require(sr.corpus, "corpus"));
      std::ifstream in(require(sr.session, "session"));
      if (!in) throw Error(Errc::FileError, "cannot open " + sr.session);
      const json snap = json::parse(in, nullptr, false);
      if (snap.is_discarded()) throw Error(Errc::FormatError, sr.session + " is not JSON");
      ServiceConfig cfg;
      cfg.frames = corpus.default_T;
      const NoiseSchedule sched = schedule_of(model);
      const ServiceContext ctx(std::move(model), std::move(corpus), sched, cfg);
      write_output(c.output, dump_json(replay_session(ctx, snap).last_results));
      return 0;
    };
  }

  // replay
  std::string replay_path, replay_output;
  CLI::App* replay = app.add_subcommand("replay", "re-run the command recorded in a config snapshot");
  replay->add_option("snapshot", replay_path, "config snapshot")->required();
  replay->add_option("-o,--output", replay_output, "override the recorded output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    std::optional<RunConfig> replayed;
    Command* chosen = nullptr;
    if (replay->parsed()) {
      replayed = load_run_config(replay_path);
      for (auto& c : commands)
        if (c->name == replayed->command) chosen = c.get();
      if (chosen == nullptr) throw Error(Errc::UsageError, "snapshot names unknown command '" + replayed->command + "'");
      if (!replay_output.empty()) replayed->params["output"] = replay_output;
    } else {
      for (auto& c : commands)
        if (c->app->parsed()) chosen = c.get();
      if (chosen && !chosen->config_path.empty()) replayed = load_run_config(chosen->config_path);
    }
    prepare(*chosen, replayed ? &*replayed : nullptr);
    return chosen->run();
  } catch (const Error& e) {
    std::cerr << "gdr: " << e.what() << "\n";
    return e.code() == Errc::UsageError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "gdr: " << e.what() << "\n";
    return 1;
  }
}
