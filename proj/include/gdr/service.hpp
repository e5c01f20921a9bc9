// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gdr/diffusion.hpp"
#include "gdr/retrieval.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace gdr {

struct ServiceConfig {
  std::string model_name = "default";
  std::string corpus_name = "default";
  std::size_t session_cap = 64;
  std::size_t frames = 16;
  double default_w = 2.0;
  std::size_t default_n_q = 5;
  std::size_t default_k = 10;
  int default_invert_steps = 20;
};

// Immutable state shared by every session.
struct ServiceContext {
  DenoiserModel model;
  Corpus corpus;
  CorpusIndex index;
  NoiseSchedule sched;
  std::optional<SynthWorld> world;
  ServiceConfig config;

  ServiceContext(DenoiserModel m, Corpus c, NoiseSchedule s, ServiceConfig cfg);
};

// Latents and results after a sequence of history steps.
struct SessionState {
  std::uint64_t seed = 0;
  std::vector<LatentSeq> latents;
  std::optional<CondSeq> positive;  // conditioning that produced `latents`
  std::optional<std::uint64_t> sample_seed;
  nlohmann::json last_results = nullptr;
  nlohmann::json history = nlohmann::json::array();
};

// A validated request-level failure carrying its HTTP status.
struct ServiceError {
  int status = 500;
  std::string message;
};

// Applies one history step ({"op": "query" | "negative" | "invert", ...}),
// returning the response body. Throws ServiceError on invalid input.
nlohmann::json apply_step(const ServiceContext& ctx, SessionState& state, const nlohmann::json& step);

// Re-runs a recorded history from a session snapshot.
SessionState replay_session(const ServiceContext& ctx, const nlohmann::json& snapshot);

class Service {
 public:
  explicit Service(std::shared_ptr<const ServiceContext> ctx);

  struct Response {
    int status = 200;
    nlohmann::json body;
  };

  // Transport-free dispatch; query holds URL query parameters.
  Response handle(const std::string& method, const std::string& path, const std::string& body,
                  const std::map<std::string, std::string>& query = {});

  void mount(httplib::Server& server);

  std::size_t session_count() const;

 private:
  struct Session {
    std::mutex mu;
    std::string id;
    SessionState state;
    std::int64_t created_ms = 0;
    std::int64_t updated_ms = 0;
    std::uint64_t last_used = 0;
  };

  Response create_session(const nlohmann::json& body);
  Response session_step(const std::string& id, const std::string& op, const nlohmann::json& body);
  Response snapshot(const std::string& id);
  Response corpus_items(const std::map<std::string, std::string>& query) const;
  Response health() const;
  std::shared_ptr<Session> lookup(const std::string& id);
  std::string fresh_id();

  std::shared_ptr<const ServiceContext> ctx_;
  mutable std::mutex table_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t tick_ = 0;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;
};

}  // namespace gdr
