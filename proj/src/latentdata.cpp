// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/latentdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "gdr/error.hpp"

namespace gdr {

using nlohmann::json;

CondSeq CondSeq::null(std::size_t d_t) { return CondSeq{Mat(1, d_t), true}; }

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error(Errc::FormatError, "unknown split '" + name + "'");
}

std::vector<const CorpusItem*> Corpus::in_split(Split s) const {
  std::vector<const CorpusItem*> out;
  for (const auto& it : items)
    if (it.split == s) out.push_back(&it);
  return out;
}

const CorpusItem* Corpus::find(const std::string& id) const {
  for (const auto& it : items)
    if (it.id == id) return &it;
  return nullptr;
}

bool Corpus::is_synthetic() const {
  return provenance.is_object() && provenance.value("kind", "") == "synthetic";
}

void SynthSpec::validate() const {
  if (n_genres == 0 || n_instruments == 0 || n_genres * n_instruments < 2)
    throw Error(Errc::InvalidSpec, "attribute grid needs at least two cells");
  if (d_a == 0 || d_t == 0 || T == 0 || items_per_cell == 0)
    throw Error(Errc::InvalidSpec, "dimensions and counts must be positive");
  if (d_a < n_genres + n_instruments)
    throw Error(Errc::InvalidSpec, "d_a must be at least n_genres + n_instruments for orthonormal directions");
  if (!(centroid_scale > 0.0) || !(noise_scale >= 0.0) || !(noise_scale < centroid_scale))
    throw Error(Errc::InvalidSpec, "need 0 <= noise_scale < centroid_scale");
  if (!(token_noise >= 0.0) || !(partial_caption_prob >= 0.0 && partial_caption_prob <= 1.0))
    throw Error(Errc::InvalidSpec, "token_noise and partial_caption_prob out of range");
  if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) || val_fraction + test_fraction >= 1.0)
    throw Error(Errc::InvalidSpec, "split fractions must leave room for a train split");
  if (!(shift_scale > 0.0) || !(shift_offset_norm >= 0.0))
    throw Error(Errc::InvalidSpec, "shift_scale must be positive and shift_offset_norm non-negative");
}

void to_json(json& j, const SynthSpec& s) {
  j = json{{"n_genres", s.n_genres},
           {"n_instruments", s.n_instruments},
           {"d_a", s.d_a},
           {"d_t", s.d_t},
           {"T", s.T},
           {"items_per_cell", s.items_per_cell},
           {"centroid_scale", s.centroid_scale},
           {"noise_scale", s.noise_scale},
           {"token_noise", s.token_noise},
           {"partial_caption_prob", s.partial_caption_prob},
           {"val_fraction", s.val_fraction},
           {"test_fraction", s.test_fraction},
           {"seed", s.seed},
           {"shift_scale", s.shift_scale},
           {"shift_offset_norm", s.shift_offset_norm},
           {"shift_seed", s.shift_seed}};
}

void from_json(const json& j, SynthSpec& s) {
  SynthSpec d;
  s.n_genres = j.value("n_genres", d.n_genres);
  s.n_instruments = j.value("n_instruments", d.n_instruments);
  s.d_a = j.value("d_a", d.d_a);
  s.d_t = j.value("d_t", d.d_t);
  s.T = j.value("T", d.T);
  s.items_per_cell = j.value("items_per_cell", d.items_per_cell);
  s.centroid_scale = j.value("centroid_scale", d.centroid_scale);
  s.noise_scale = j.value("noise_scale", d.noise_scale);
  s.token_noise = j.value("token_noise", d.token_noise);
  s.partial_caption_prob = j.value("partial_caption_prob", d.partial_caption_prob);
  s.val_fraction = j.value("val_fraction", d.val_fraction);
  s.test_fraction = j.value("test_fraction", d.test_fraction);
  s.seed = j.value("seed", d.seed);
  s.shift_scale = j.value("shift_scale", d.shift_scale);
  s.shift_offset_norm = j.value("shift_offset_norm", d.shift_offset_norm);
  s.shift_seed = j.value("shift_seed", d.shift_seed);
}

std::string genre_name(std::size_t g) { return "g" + std::to_string(g); }
std::string instrument_name(std::size_t i) { return "i" + std::to_string(i); }

namespace {

// Gram-Schmidt over the rows of m, in place. Rows must be independent.
void orthonormalize_rows(Mat& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < r; ++p) {
        const double proj = dot(row, m.row(p));
        auto prev = m.row(p);
        for (std::size_t k = 0; k < row.size(); ++k) row[k] -= proj * prev[k];
      }
    }
    const double n = norm2(row);
    if (n < 1e-12) throw Error(Errc::NumericalFailure, "degenerate attribute directions");
    for (double& x : row) x /= n;
  }
}

void normalize_rows(Mat& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double n = norm2(row);
    for (double& x : row) x /= n;
  }
}

// Parses "g2" / "i1" into (is_genre, index).
std::pair<bool, std::size_t> parse_attribute(const SynthSpec& s, const std::string& v) {
  auto bad = [&] { return Error(Errc::InvalidSpec, "unknown attribute value '" + v + "'"); };
  if (v.size() < 2 || (v[0] != 'g' && v[0] != 'i')) throw bad();
  std::size_t idx = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] < '0' || v[k] > '9') throw bad();
    idx = idx * 10 + static_cast<std::size_t>(v[k] - '0');
  }
  const bool genre = v[0] == 'g';
  if (idx >= (genre ? s.n_genres : s.n_instruments)) throw bad();
  return {genre, idx};
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }), tok.end());
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

}  // namespace

Vec SynthWorld::centroid(std::size_t g, std::size_t i) const {
  Vec c(spec.d_a);
  for (std::size_t k = 0; k < spec.d_a; ++k)
    c[k] = spec.shift_scale * spec.centroid_scale * (genre_dirs(g, k) + instrument_dirs(i, k)) + offset[k];
  return c;
}

Vec SynthWorld::lift(const std::string& attribute_value) const {
  const auto [genre, idx] = parse_attribute(spec, attribute_value);
  auto dir = genre ? genre_dirs.row(idx) : instrument_dirs.row(idx);
  Vec out(dir.begin(), dir.end());
  for (double& x : out) x *= spec.centroid_scale;
  return out;
}

CondSeq SynthWorld::cond_for(const std::string& attributes) const {
  const auto names = split_csv(attributes);
  if (names.empty()) return CondSeq::null(spec.d_t);
  Mat tokens(names.size(), spec.d_t);
  for (std::size_t r = 0; r < names.size(); ++r) {
    const auto [genre, idx] = parse_attribute(spec, names[r]);
    auto src = genre ? genre_tokens.row(idx) : instrument_tokens.row(idx);
    std::copy(src.begin(), src.end(), tokens.row(r).begin());
  }
  return CondSeq{std::move(tokens), false};
}

SynthWorld make_world(const SynthSpec& spec) {
  spec.validate();
  SynthWorld w;
  w.spec = spec;
  const SeededRng root(spec.seed, 0);

  SeededRng dir_rng = root.substream(1);
  Mat dirs = gaussian_mat(dir_rng, spec.n_genres + spec.n_instruments, spec.d_a);
  orthonormalize_rows(dirs);
  SeededRng tok_rng = root.substream(2);
  Mat toks = gaussian_mat(tok_rng, spec.n_genres + spec.n_instruments, spec.d_t);
  if (spec.d_t >= toks.rows()) {
    orthonormalize_rows(toks);
  } else {
    normalize_rows(toks);
  }
  round_to_f32(dirs.data());
  round_to_f32(toks.data());

  auto take = [](const Mat& m, std::size_t from, std::size_t n) {
    Mat out(n, m.cols());
    for (std::size_t r = 0; r < n; ++r) std::copy(m.row(from + r).begin(), m.row(from + r).end(), out.row(r).begin());
    return out;
  };
  w.genre_dirs = take(dirs, 0, spec.n_genres);
  w.instrument_dirs = take(dirs, spec.n_genres, spec.n_instruments);
  w.genre_tokens = take(toks, 0, spec.n_genres);
  w.instrument_tokens = take(toks, spec.n_genres, spec.n_instruments);

  w.offset.assign(spec.d_a, 0.0);
  if (spec.shift_offset_norm > 0.0) {
    SeededRng off_rng(spec.shift_seed, 3);
    for (double& x : w.offset) x = off_rng.normal();
    const double n = norm2(w.offset);
    for (double& x : w.offset) x = to_f32(x * spec.shift_offset_norm / n);
  }
  return w;
}

std::optional<SynthWorld> world_of(const Corpus& corpus) {
  if (!corpus.is_synthetic() || !corpus.provenance.contains("spec")) return std::nullopt;
  return make_world(corpus.provenance.at("spec").get<SynthSpec>());
}

Corpus gen_corpus(const SynthSpec& spec) {
  const SynthWorld world = make_world(spec);
  Corpus corpus;
  corpus.d_a = spec.d_a;
  corpus.d_t = spec.d_t;
  corpus.default_T = spec.T;
  corpus.provenance = json{{"kind", "synthetic"}, {"spec", spec}};

  const SeededRng root(spec.seed, 0);
  const std::size_t m = spec.items_per_cell;
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(m)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(m)));

  for (std::size_t g = 0; g < spec.n_genres; ++g) {
    for (std::size_t i = 0; i < spec.n_instruments; ++i) {
      const std::size_t cell = g * spec.n_instruments + i;

      // Stratified split: a seeded permutation of the cell's slots.
      SeededRng split_rng = root.substream(1000 + cell);
      std::vector<std::size_t> perm(m);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t k = m; k > 1; --k) std::swap(perm[k - 1], perm[split_rng.uniform_index(k)]);
      std::vector<Split> split_of(m, Split::Train);
      for (std::size_t k = 0; k < m; ++k) {
        if (m < 3) break;
        if (k < n_test) {
          split_of[perm[k]] = Split::Test;
        } else if (k < n_test + n_val) {
          split_of[perm[k]] = Split::Val;
        }
      }

      const Vec center = [&] {
        Vec c(spec.d_a);
        for (std::size_t k = 0; k < spec.d_a; ++k)
          c[k] = spec.centroid_scale * (world.genre_dirs(g, k) + world.instrument_dirs(i, k));
        return c;
      }();

      for (std::size_t k = 0; k < m; ++k) {
        SeededRng rng = root.substream(1'000'000 + cell * m + k);
        CorpusItem item;
        char id[64];
        std::snprintf(id, sizeof id, "g%zu_i%zu_%03zu", g, i, k);
        item.id = id;
        item.split = split_of[k];

        Mat frames(spec.T, spec.d_a);
        for (std::size_t t = 0; t < spec.T; ++t)
          for (std::size_t c = 0; c < spec.d_a; ++c)
            frames(t, c) = spec.shift_scale * (center[c] + spec.noise_scale * rng.normal()) + world.offset[c];
        round_to_f32(frames.data());
        item.audio = LatentSeq{std::move(frames)};

        std::string caption = genre_name(g) + "," + instrument_name(i);
        if (rng.uniform() < spec.partial_caption_prob) {
          caption = rng.uniform() < 0.5 ? genre_name(g) : instrument_name(i);
        }
        CondSeq cond = world.cond_for(caption);
        for (double& x : cond.tokens.data()) x += spec.token_noise * rng.normal();
        round_to_f32(cond.tokens.data());
        item.cond = std::move(cond);

        item.labels = {{"genre", genre_name(g)}, {"instrument", instrument_name(i)}, {"caption", caption}};
        corpus.items.push_back(std::move(item));
      }
    }
  }
  return corpus;
}

Labels oracle_label(const SynthWorld& world, std::span<const double> pooled) {
  if (pooled.size() != world.spec.d_a) throw Error(Errc::ShapeError, "pooled vector has wrong dimension");
  double best = std::numeric_limits<double>::infinity();
  std::size_t bg = 0, bi = 0;
  for (std::size_t g = 0; g < world.spec.n_genres; ++g) {
    for (std::size_t i = 0; i < world.spec.n_instruments; ++i) {
      const Vec c = world.centroid(g, i);
      double d = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) d += (pooled[k] - c[k]) * (pooled[k] - c[k]);
      if (d < best) {
        best = d;
        bg = g;
        bi = i;
      }
    }
  }
  return {{"genre", genre_name(bg)}, {"instrument", instrument_name(bi)}};
}

Labels oracle_label(const Corpus& corpus, std::span<const double> pooled) {
  const auto world = world_of(corpus);
  if (!world) throw Error(Errc::NoOracle, "corpus is not synthetic; no ground-truth centroids");
  return oracle_label(*world, pooled);
}

Vec pool(const LatentSeq& seq) {
  const std::size_t T = seq.steps();
  if (T == 0) throw Error(Errc::EmptyInput, "cannot pool an empty sequence");
  Vec out(seq.dim(), 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    auto row = seq.frames.row(t);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  for (double& x : out) x /= static_cast<double>(T);
  return out;
}

Vec aggregate(std::span<const LatentSeq> queries) {
  if (queries.empty()) throw Error(Errc::EmptyInput, "aggregate of zero queries");
  const std::size_t d = queries.front().dim();
  Vec out(d, 0.0);
  for (const auto& q : queries) {
    if (q.dim() != d) throw Error(Errc::ShapeError, "queries differ in latent dimension");
    const Vec p = pool(q);
    for (std::size_t c = 0; c < d; ++c) out[c] += p[c];
  }
  for (double& x : out) x /= static_cast<double>(queries.size());
  return out;
}

// ---------------------------------------------------------------------------
// GDRL container

namespace {

constexpr char kCorpusMagic[4] = {'G', 'D', 'R', 'L'};
constexpr std::uint32_t kCorpusVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_corpus(const Corpus& corpus) {
  json header;
  header["d_a"] = corpus.d_a;
  header["d_t"] = corpus.d_t;
  header["default_T"] = corpus.default_T;
  header["n_items"] = corpus.items.size();
  header["provenance"] = corpus.provenance;
  json items = json::array();
  for (const auto& it : corpus.items) {
    if (it.audio.dim() != corpus.d_a || it.cond.dim() != corpus.d_t)
      throw Error(Errc::ShapeError, "item " + it.id + " does not match corpus dims");
    items.push_back(json{{"id", it.id},
                         {"T", it.audio.steps()},
                         {"L", it.cond.length()},
                         {"labels", it.labels},
                         {"split", split_name(it.split)},
                         {"null_cond", it.cond.is_null}});
  }
  header["items"] = std::move(items);
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.bytes(kCorpusMagic, 4);
  w.u32(kCorpusVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  const std::size_t payload_start = w.size();
  for (const auto& it : corpus.items) {
    for (double x : it.audio.frames.data()) w.f32(x);
    for (double x : it.cond.tokens.data()) w.f32(x);
  }
  const std::uint32_t crc = detail::crc32_of(std::span(w.buffer()).subspan(payload_start));
  w.u32(crc);
  return std::move(w.buffer());
}

Corpus deserialize_corpus(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "corpus");
  if (r.str(4) != std::string(kCorpusMagic, 4)) {
    throw Error(Errc::FormatError, "corpus: bad magic at byte offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kCorpusVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t hlen = r.u32();
  const std::size_t header_at = r.offset();
  json header;
  try {
    header = json::parse(r.str(hlen));
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("corpus: malformed header at byte offset ") +
                                       std::to_string(header_at) + ": " + e.what());
  }

  Corpus c;
  std::size_t expected_floats = 0;
  try {
    c.d_a = header.at("d_a").get<std::size_t>();
    c.d_t = header.at("d_t").get<std::size_t>();
    c.default_T = header.value("default_T", std::size_t{0});
    c.provenance = header.value("provenance", json::object());
    const auto& items = header.at("items");
    if (items.size() != header.at("n_items").get<std::size_t>()) r.fail("n_items disagrees with item list");
    for (const auto& ji : items) {
      const std::size_t T = ji.at("T").get<std::size_t>();
      const std::size_t L = ji.at("L").get<std::size_t>();
      if (T == 0 || L == 0) r.fail("item with zero-length sequence");
      expected_floats += T * c.d_a + L * c.d_t;
    }
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("corpus: bad header fields at byte offset ") +
                                       std::to_string(header_at) + ": " + e.what());
  }
  if (r.remaining() != expected_floats * 4 + 4) {
    r.fail("header dims imply " + std::to_string(expected_floats * 4 + 4) + " payload bytes but " +
           std::to_string(r.remaining()) + " remain");
  }
  const std::size_t payload_start = r.offset();
  const std::uint32_t crc = detail::crc32_of(r.view(payload_start, payload_start + expected_floats * 4));

  std::set<std::string> seen;
  for (const auto& ji : header.at("items")) {
    CorpusItem it;
    it.id = ji.at("id").get<std::string>();
    if (!seen.insert(it.id).second) r.fail("duplicate item id " + it.id);
    it.labels = ji.value("labels", Labels{});
    it.split = parse_split(ji.value("split", std::string("train")));
    const std::size_t T = ji.at("T").get<std::size_t>();
    const std::size_t L = ji.at("L").get<std::size_t>();
    std::vector<double> a(T * c.d_a), t(L * c.d_t);
    for (double& x : a) x = r.f32();
    for (double& x : t) x = r.f32();
    try {
      it.audio = LatentSeq{Mat(T, c.d_a, std::move(a))};
      it.cond = CondSeq{Mat(L, c.d_t, std::move(t)), ji.value("null_cond", false)};
    } catch (const Error&) {
      r.fail("non-finite value in item " + it.id);
    }
    c.items.push_back(std::move(it));
  }
  if (r.u32() != crc) {
    throw Error(Errc::FormatError, "corpus: payload CRC32 mismatch at byte offset " + std::to_string(r.offset() - 4));
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  detail::write_file(path, serialize_corpus(corpus));
}

Corpus load_corpus(const std::filesystem::path& path) { return deserialize_corpus(detail::read_file(path)); }

}  // namespace gdr
