// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

namespace gdr {

// Fully resolved parameters of one CLI run. Keys of params are the long flag
// names of the command, so a snapshot can be fed back through --config.
struct RunConfig {
  std::string command;
  nlohmann::json params = nlohmann::json::object();
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

void save_run_config(const RunConfig& c, const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);

// "<output>.config.json"
std::filesystem::path snapshot_path_for(const std::filesystem::path& output);

// Value of GDR_SEED, if set. Malformed values are a UsageError.
std::optional<std::uint64_t> seed_from_env();

// Canonical text form used for every JSON file the tools write.
std::string dump_json(const nlohmann::json& j);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gdr
