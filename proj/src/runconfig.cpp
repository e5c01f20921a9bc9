// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/runconfig.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>

#include "binio.hpp"
#include "gdr/error.hpp"

namespace gdr {

using nlohmann::json;

namespace {
constexpr int kFormat = 1;
}

json to_json(const RunConfig& c) { return json{{"format", kFormat}, {"command", c.command}, {"params", c.params}}; }

RunConfig run_config_from_json(const json& j) {
  try {
    if (j.at("format").get<int>() != kFormat) throw Error(Errc::FormatError, "unsupported config snapshot format");
    RunConfig c{j.at("command").get<std::string>(), j.at("params")};
    if (!c.params.is_object()) throw Error(Errc::FormatError, "config params must be an object");
    return c;
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("bad config snapshot: ") + e.what());
  }
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) { write_text(path, dump_json(to_json(c))); }

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) throw Error(Errc::FormatError, "config snapshot " + path.string() + " is not JSON");
  return run_config_from_json(j);
}

std::filesystem::path snapshot_path_for(const std::filesystem::path& output) {
  return std::filesystem::path(output.string() + ".config.json");
}

std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("GDR_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  std::uint64_t seed = 0;
  const char* end = v + std::strlen(v);
  const auto [p, ec] = std::from_chars(v, end, seed);
  if (ec != std::errc() || p != end) throw Error(Errc::UsageError, std::string("GDR_SEED is not an integer: ") + v);
  return seed;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace gdr
