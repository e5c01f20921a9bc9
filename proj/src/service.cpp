// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "gdr/alignmetrics.hpp"
#include "gdr/error.hpp"
#include "httplib.h"

namespace gdr {

using nlohmann::json;

ServiceContext::ServiceContext(DenoiserModel m, Corpus c, NoiseSchedule s, ServiceConfig cfg)
    : model(std::move(m)), corpus(std::move(c)), index(build_index(corpus)), sched(std::move(s)),
      world(world_of(corpus)), config(std::move(cfg)) {
  if (model.dims.d_a != corpus.d_a || model.dims.d_t != corpus.d_t) {
    throw Error(Errc::ShapeError, "model and corpus dimensions differ");
  }
}

namespace {

[[noreturn]] void fail(int status, std::string msg) { throw ServiceError{status, std::move(msg)}; }

CondSeq parse_cond(const ServiceContext& ctx, const json& j) {
  const std::size_t d_t = ctx.model.dims.d_t;
  if (j.is_null()) return CondSeq::null(d_t);
  if (j.is_string()) {
    if (!ctx.world) fail(422, "attribute conditioning needs a synthetic corpus");
    try {
      return ctx.world->cond_for(j.get<std::string>());
    } catch (const Error& e) {
      fail(422, e.what());
    }
  }
  if (j.is_object() && j.contains("tokens") && j["tokens"].is_array()) {
    const auto& rows = j["tokens"];
    if (rows.empty()) fail(422, "cond.tokens must have at least one row");
    Mat tokens(rows.size(), d_t);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r].is_array() || rows[r].size() != d_t) fail(422, "cond token rows must have length " + std::to_string(d_t));
      for (std::size_t c = 0; c < d_t; ++c) {
        if (!rows[r][c].is_number()) fail(422, "cond tokens must be numbers");
        const double v = rows[r][c].get<double>();
        if (!std::isfinite(v)) fail(422, "cond tokens must be finite");
        tokens(r, c) = v;
      }
    }
    return CondSeq{std::move(tokens), false};
  }
  fail(422, "cond must be null, an attribute list string, or {\"tokens\": [[...]]}");
}

double get_w(const json& body, double fallback) {
  const json v = body.value("w", json(fallback));
  if (!v.is_number()) fail(422, "w must be a number");
  const double w = v.get<double>();
  if (!std::isfinite(w) || w < 0.0) fail(422, "w must be finite and non-negative");
  return w;
}

std::size_t get_count(const json& body, const char* key, std::size_t fallback, std::size_t max) {
  const json v = body.value(key, json(fallback));
  if (!v.is_number_integer()) fail(422, std::string(key) + " must be an integer");
  const auto n = v.get<std::int64_t>();
  if (n < 1 || static_cast<std::size_t>(n) > max) {
    fail(422, std::string(key) + " must be in 1.." + std::to_string(max));
  }
  return static_cast<std::size_t>(n);
}

constexpr std::size_t kMaxNq = 256;

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

json require_object(const std::string& body) {
  if (body.empty()) return json::object();
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(422, "request body must be a JSON object");
  return j;
}

}  // namespace

json apply_step(const ServiceContext& ctx, SessionState& state, const json& step) {
  const auto& cfg = ctx.config;
  const std::string op = step.value("op", "");
  const std::size_t k_max = ctx.index.size();

  if (op == "query") {
    const CondSeq positive = parse_cond(ctx, step.value("cond", json(nullptr)));
    json rec{{"op", "query"},
             {"cond", step.value("cond", json(nullptr))},
             {"w", get_w(step, cfg.default_w)},
             {"n_q", get_count(step, "n_q", cfg.default_n_q, kMaxNq)},
             {"k", get_count(step, "k", cfg.default_k, k_max)},
             {"seed", state.seed}};
    const GuidanceSpec g{rec["w"].get<double>(), positive, CondSeq::null(ctx.model.dims.d_t)};
    auto gq = run_ghost_query(ctx.model, g, rec["n_q"].get<std::size_t>(), ctx.sched, state.seed, ctx.index,
                              rec["k"].get<std::size_t>(), cfg.frames);
    state.latents = std::move(gq.latents);
    state.positive = positive;
    state.sample_seed = state.seed;
    state.last_results = to_json(gq.result);
    state.history.push_back(rec);
    return state.last_results;
  }

  if (op == "negative") {
    if (!state.positive || !state.sample_seed || state.latents.empty()) fail(409, "session has no prior query");
    const CondSeq negative = parse_cond(ctx, step.value("neg_cond", json(nullptr)));
    json rec{{"op", "negative"},
             {"neg_cond", step.value("neg_cond", json(nullptr))},
             {"w", get_w(step, cfg.default_w)},
             {"k", get_count(step, "k", cfg.default_k, k_max)},
             {"n_q", state.latents.size()},
             {"seed", *state.sample_seed}};
    const GuidanceSpec g{rec["w"].get<double>(), *state.positive, negative};
    auto gq = run_ghost_query(ctx.model, g, state.latents.size(), ctx.sched, *state.sample_seed, ctx.index,
                              rec["k"].get<std::size_t>(), cfg.frames);
    state.latents = std::move(gq.latents);
    state.last_results = to_json(gq.result);
    state.history.push_back(rec);
    return state.last_results;
  }

  if (op == "invert") {
    if (state.latents.empty() || !state.positive) fail(409, "session has no latents to edit");
    const json cond_j = step.contains("new_cond") ? step["new_cond"] : json(nullptr);
    const CondSeq next = parse_cond(ctx, cond_j);
    const json ks = step.value("k_steps", json(cfg.default_invert_steps));
    if (!ks.is_number_integer()) fail(422, "k_steps must be an integer");
    const auto k_steps = ks.get<std::int64_t>();
    if (k_steps < 1 || k_steps > ctx.sched.N) fail(422, "k_steps must be in 1.." + std::to_string(ctx.sched.N));
    if (ctx.model.objective == Objective::Regression) fail(422, "regression models cannot be inverted");
    json rec{{"op", "invert"},
             {"new_cond", cond_j},
             {"k_steps", k_steps},
             {"w", get_w(step, cfg.default_w)},
             {"k", get_count(step, "k", cfg.default_k, k_max)}};
    const GuidanceSpec g{rec["w"].get<double>(), next, CondSeq::null(ctx.model.dims.d_t)};
    std::vector<LatentSeq> edited;
    for (const auto& z : state.latents) {
      edited.push_back(edit(ctx.model, z, g, static_cast<int>(k_steps), ctx.sched, *state.positive));
    }
    const Vec before = aggregate(state.latents);
    const Vec after = aggregate(edited);
    RankedResult r = topk(ctx.index, after, rec["k"].get<std::size_t>());
    r.query = json{{"positive", cond_digest(next)},
                   {"original", cond_digest(*state.positive)},
                   {"w", g.w},
                   {"k_steps", k_steps},
                   {"n_q", edited.size()},
                   {"schedule", ctx.sched.hash()}};
    json out = to_json(r);
    out["retention"] = clap_score(before, after);
    state.latents = std::move(edited);
    state.positive = next;
    state.last_results = out;
    state.history.push_back(rec);
    return out;
  }

  fail(422, "unknown history op '" + op + "'");
}

SessionState replay_session(const ServiceContext& ctx, const json& snapshot) {
  SessionState state;
  try {
    state.seed = snapshot.at("seed").get<std::uint64_t>();
    for (const auto& step : snapshot.at("history")) apply_step(ctx, state, step);
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("bad session snapshot: ") + e.what());
  } catch (const ServiceError& e) {
    throw Error(Errc::FormatError, "session snapshot step rejected: " + e.message);
  }
  return state;
}

Service::Service(std::shared_ptr<const ServiceContext> ctx) : ctx_(std::move(ctx)) {
  if (!ctx_) throw Error(Errc::InvalidSpec, "service needs a context");
  if (ctx_->config.session_cap == 0) throw Error(Errc::InvalidSpec, "session cap must be positive");
  id_salt_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
}

std::size_t Service::session_count() const {
  std::lock_guard lk(table_mu_);
  return sessions_.size();
}

std::string Service::fresh_id() {
  std::uint64_t z = id_salt_ + 0x9e3779b97f4a7c15ULL * ++id_counter_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  char buf[24];
  std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(z));
  return buf;
}

Service::Response Service::create_session(const json& body) {
  const std::string corpus = body.value("corpus", ctx_->config.corpus_name);
  const std::string model = body.value("model", ctx_->config.model_name);
  if (model != ctx_->config.model_name) return {404, {{"error", "unknown model '" + model + "'"}}};
  if (corpus != ctx_->config.corpus_name) return {404, {{"error", "unknown corpus '" + corpus + "'"}}};
  std::uint64_t seed = 0;
  if (body.contains("seed") && !body["seed"].is_null()) {
    if (!body["seed"].is_number_unsigned()) fail(422, "seed must be a non-negative integer");
    seed = body["seed"].get<std::uint64_t>();
  } else {
    seed = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
  }

  auto s = std::make_shared<Session>();
  s->state.seed = seed;
  s->created_ms = s->updated_ms = now_ms();

  std::lock_guard lk(table_mu_);
  if (sessions_.size() >= ctx_->config.session_cap) {
    std::vector<std::pair<std::uint64_t, std::string>> order;
    for (const auto& [id, sess] : sessions_) order.emplace_back(sess->last_used, id);
    std::sort(order.begin(), order.end());
    bool evicted = false;
    for (const auto& [used, id] : order) {
      auto& victim = sessions_.at(id);
      std::unique_lock vl(victim->mu, std::try_to_lock);
      if (!vl.owns_lock()) continue;
      vl.unlock();
      sessions_.erase(id);
      evicted = true;
      break;
    }
    if (!evicted) return {429, {{"error", "session cap reached"}}};
  }
  s->id = fresh_id();
  while (sessions_.count(s->id)) s->id = fresh_id();
  s->last_used = ++tick_;
  sessions_.emplace(s->id, s);
  return {201, {{"session_id", s->id}, {"seed", seed}}};
}

std::shared_ptr<Service::Session> Service::lookup(const std::string& id) {
  std::lock_guard lk(table_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  it->second->last_used = ++tick_;
  return it->second;
}

Service::Response Service::session_step(const std::string& id, const std::string& op, const json& body) {
  auto s = lookup(id);
  if (!s) return {404, {{"error", "unknown session '" + id + "'"}}};
  json step = body;
  step["op"] = op;
  std::lock_guard lk(s->mu);
  SessionState trial = s->state;  // a rejected step leaves the session untouched
  json out = apply_step(*ctx_, trial, step);
  s->state = std::move(trial);
  s->updated_ms = now_ms();
  return {200, std::move(out)};
}

Service::Response Service::snapshot(const std::string& id) {
  auto s = lookup(id);
  if (!s) return {404, {{"error", "unknown session '" + id + "'"}}};
  std::lock_guard lk(s->mu);
  return {200,
          {{"session_id", s->id},
           {"seed", s->state.seed},
           {"model", ctx_->config.model_name},
           {"corpus", ctx_->config.corpus_name},
           {"created_ms", s->created_ms},
           {"updated_ms", s->updated_ms},
           {"history", s->state.history},
           {"n_latents", s->state.latents.size()},
           {"last_results", s->state.last_results}}};
}

Service::Response Service::corpus_items(const std::map<std::string, std::string>& query) const {
  auto num = [&](const char* key, std::size_t fallback) -> std::size_t {
    const auto it = query.find(key);
    if (it == query.end()) return fallback;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(it->second, &used);
      if (used != it->second.size() || v < 0) throw std::invalid_argument(key);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      fail(422, std::string(key) + " must be a non-negative integer");
    }
  };
  const std::size_t offset = num("offset", 0);
  const std::size_t limit = num("limit", 50);
  if (limit == 0 || limit > 1000) fail(422, "limit must be in 1..1000");
  const auto& items = ctx_->corpus.items;
  json out = json::array();
  for (std::size_t i = offset; i < std::min(items.size(), offset + limit); ++i) {
    out.push_back({{"id", items[i].id}, {"labels", items[i].labels}, {"split", split_name(items[i].split)}});
  }
  return {200, {{"total", items.size()}, {"offset", offset}, {"limit", limit}, {"items", out}}};
}

Service::Response Service::health() const {
  return {200,
          {{"status", "ok"},
           {"model", ctx_->config.model_name},
           {"corpus", ctx_->config.corpus_name},
           {"index_size", ctx_->index.size()},
           {"sessions", session_count()},
           {"schedule", ctx_->sched.hash()}}};
}

Service::Response Service::handle(const std::string& method, const std::string& path, const std::string& body,
                                  const std::map<std::string, std::string>& query) {
  std::vector<std::string> parts;
  for (std::size_t pos = 0; pos < path.size();) {
    const std::size_t next = path.find('/', pos);
    const std::string seg = path.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!seg.empty()) parts.push_back(seg);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  try {
    if (method == "GET" && parts == std::vector<std::string>{"health"}) return health();
    if (method == "GET" && parts == std::vector<std::string>{"corpus", "items"}) return corpus_items(query);
    if (!parts.empty() && parts[0] == "sessions") {
      if (method == "POST" && parts.size() == 1) return create_session(require_object(body));
      if (method == "GET" && parts.size() == 2) return snapshot(parts[1]);
      if (method == "POST" && parts.size() == 3 && parts[2] == "query") {
        return session_step(parts[1], "query", require_object(body));
      }
      if (method == "POST" && parts.size() == 4 && parts[2] == "refine" &&
          (parts[3] == "negative" || parts[3] == "invert")) {
        return session_step(parts[1], parts[3], require_object(body));
      }
    }
    return {404, {{"error", "no route for " + method + " " + path}}};
  } catch (const ServiceError& e) {
    return {e.status, {{"error", e.message}}};
  } catch (const Error& e) {
    return {422, {{"error", e.what()}}};
  } catch (const std::exception& e) {
    return {500, {{"error", e.what()}}};
  }
}

void Service::mount(httplib::Server& server) {
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    const Response r = handle(req.method, req.path, req.body, query);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(".*", route);
  server.Post(".*", route);
}

}  // namespace gdr
