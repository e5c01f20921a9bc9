// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gdr {

enum class Errc {
  InvalidMatrix,
  NumericalFailure,
  ZeroVector,
  InsufficientSamples,
  InvalidSpec,
  NoOracle,
  EmptyInput,
  FormatError,
  ShapeError,
  InvalidSchedule,
  InvalidStep,
  DegenerateKey,
  BuildError,
  EvalError,
  FileError,
  UsageError,
};

std::string_view errc_name(Errc code);

// All library failures are reported as gdr::Error; code() identifies the kind.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace gdr
