// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gdr/numerics.hpp"
#include "json.hpp"

namespace gdr {

using Labels = std::map<std::string, std::string>;

// T x d_a audio latent frames.
struct LatentSeq {
  Mat frames;

  std::size_t steps() const noexcept { return frames.rows(); }
  std::size_t dim() const noexcept { return frames.cols(); }

  friend bool operator==(const LatentSeq&, const LatentSeq&) = default;
};

// L x d_t conditioning tokens. The null sequence is a single all-zero token
// flagged is_null; models skip conditioning entirely for it.
struct CondSeq {
  Mat tokens;
  bool is_null = false;

  static CondSeq null(std::size_t d_t);

  std::size_t length() const noexcept { return tokens.rows(); }
  std::size_t dim() const noexcept { return tokens.cols(); }

  friend bool operator==(const CondSeq&, const CondSeq&) = default;
};

enum class Split { Train, Val, Test };

std::string split_name(Split s);
Split parse_split(const std::string& name);

struct CorpusItem {
  std::string id;
  LatentSeq audio;
  CondSeq cond;
  Labels labels;
  Split split = Split::Train;

  friend bool operator==(const CorpusItem&, const CorpusItem&) = default;
};

struct Corpus {
  std::size_t d_a = 0;
  std::size_t d_t = 0;
  std::size_t default_T = 0;
  std::vector<CorpusItem> items;
  nlohmann::json provenance = nlohmann::json::object();

  std::vector<const CorpusItem*> in_split(Split s) const;
  const CorpusItem* find(const std::string& id) const;
  bool is_synthetic() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Compositional genre x instrument world. Every attribute value owns an audio
// direction (orthonormal across all values) and a conditioning token.
struct SynthSpec {
  std::size_t n_genres = 4;
  std::size_t n_instruments = 4;
  std::size_t d_a = 32;
  std::size_t d_t = 16;
  std::size_t T = 16;
  std::size_t items_per_cell = 16;
  double centroid_scale = 4.0;
  double noise_scale = 1.0;
  double token_noise = 0.1;
  // Probability that a caption names only one of the two attributes.
  double partial_caption_prob = 0.25;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  std::uint64_t seed = 7;
  // Optional affine distortion of the audio space: x -> shift_scale * x + offset,
  // with offset a seeded random direction of norm shift_offset_norm.
  double shift_scale = 1.0;
  double shift_offset_norm = 0.0;
  std::uint64_t shift_seed = 0;

  void validate() const;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

std::string genre_name(std::size_t g);
std::string instrument_name(std::size_t i);

struct SynthWorld {
  SynthSpec spec;
  Mat genre_dirs;       // n_genres x d_a
  Mat instrument_dirs;  // n_instruments x d_a
  Mat genre_tokens;     // n_genres x d_t
  Mat instrument_tokens;
  Vec offset;           // d_a

  // Pooled-space centroid of cell (g, i), including the affine distortion.
  Vec centroid(std::size_t g, std::size_t i) const;
  // Undistorted audio-space direction of an attribute value scaled by
  // centroid_scale, e.g. "g2" -> c * u_g2. Used to lift text into audio space.
  Vec lift(const std::string& attribute_value) const;
  // Clean conditioning tokens for a comma separated attribute list ("g2,i1").
  CondSeq cond_for(const std::string& attributes) const;
};

SynthWorld make_world(const SynthSpec& spec);
std::optional<SynthWorld> world_of(const Corpus& corpus);

Corpus gen_corpus(const SynthSpec& spec);

// Nearest cell centroid in Euclidean distance, ties to the lowest index.
Labels oracle_label(const Corpus& corpus, std::span<const double> pooled);
Labels oracle_label(const SynthWorld& world, std::span<const double> pooled);

Vec pool(const LatentSeq& seq);
Vec aggregate(std::span<const LatentSeq> queries);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_corpus(const Corpus& corpus);
Corpus deserialize_corpus(std::span<const std::uint8_t> bytes);

}  // namespace gdr
