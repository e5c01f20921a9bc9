// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gdr/latentdata.hpp"
#include "gdr/numerics.hpp"
#include "json.hpp"

namespace gdr {

enum class Arch { SeqAttn, PooledMlp };

// What the network output is trained to match. Sample and Regression models
// predict the clean latent; Epsilon models predict the injected noise.
enum class Objective { Sample, Epsilon, Regression };

std::string arch_name(Arch a);
Arch parse_arch(const std::string& s);
std::string objective_name(Objective o);
Objective parse_objective(const std::string& s);

struct ModelDims {
  std::size_t d_a = 32;
  std::size_t d_t = 16;
  std::size_t hidden = 64;
  std::size_t d_tau = 32;
  // Frames of the learned mask sequence; non-zero only for regression models.
  std::size_t mask_T = 0;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

// Named, contiguous parameter blocks in flat-vector order.
class ParamLayout {
 public:
  ParamLayout(Arch arch, const ModelDims& dims);

  const std::vector<ParamSegment>& segments() const { return segments_; }
  const ParamSegment& at(const std::string& name) const;
  const ParamSegment* find(const std::string& name) const;
  std::size_t total() const { return total_; }
  // Segment containing flat index k.
  const ParamSegment& owner(std::size_t k) const;

 private:
  void add(std::string name, std::size_t rows, std::size_t cols);

  std::vector<ParamSegment> segments_;
  std::size_t total_ = 0;
};

struct DenoiserModel {
  Arch arch = Arch::SeqAttn;
  Objective objective = Objective::Sample;
  ModelDims dims;
  Vec params;
  // Free-form provenance recorded in checkpoints (schedule hash, training digest).
  nlohmann::json meta = nlohmann::json::object();

  ParamLayout layout() const { return ParamLayout(arch, dims); }
  std::size_t param_count() const { return params.size(); }
  // The learned mask frames of a regression model.
  LatentSeq mask() const;
};

// Sinusoidal features of the integer step; first half sines, second half cosines.
Vec timestep_embedding(int step, std::size_t width);

// Weights i.i.d. N(0, 1/fan_in), biases zero, mask frames N(0, 1).
// Parameters are rounded to f32 so checkpoints round-trip exactly.
DenoiserModel init_model(Arch arch, const ModelDims& dims, std::uint64_t seed,
                         Objective objective = Objective::Sample);

LatentSeq forward(const DenoiserModel& model, const LatentSeq& z, int step, const CondSeq& cond);

struct TrainExample {
  // Network input; std::nullopt feeds the model's learned mask sequence.
  std::optional<LatentSeq> input;
  int step = 1;
  CondSeq cond;
  LatentSeq target;
};

struct LossGrad {
  double loss = 0.0;
  Vec grad;
};

// Mean squared error over every element of the batch and its exact gradient.
// Items are reduced in a fixed order, so the result does not depend on workers.
LossGrad loss_and_grad(const DenoiserModel& model, std::span<const TrainExample> batch,
                       unsigned workers = 0);

double batch_loss(const DenoiserModel& model, std::span<const TrainExample> batch);

struct SegmentError {
  std::string segment;
  double max_rel_error = 0.0;
};

struct GradientReport {
  double max_rel_error = 0.0;
  std::string worst_segment;
  std::size_t worst_index = 0;
  std::vector<SegmentError> per_segment;
  double tolerance = 0.0;
  bool pass = false;
};

// Central differences (step 1e-3) on a random two-item batch; relative error
// |ga - gfd| / max(1e-8, |ga| + |gfd|).
GradientReport grad_check(const DenoiserModel& model, double tolerance, SeededRng& rng,
                          std::size_t frames = 3, std::size_t tokens = 2);

nlohmann::json to_json(const GradientReport& r);

void save_model(const DenoiserModel& model, const std::filesystem::path& path);
DenoiserModel load_model(const std::filesystem::path& path, std::optional<Arch> expected = std::nullopt);

std::vector<std::uint8_t> serialize_model(const DenoiserModel& model);
DenoiserModel deserialize_model(std::span<const std::uint8_t> bytes, std::optional<Arch> expected = std::nullopt);

}  // namespace gdr
