// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/error.hpp"

namespace gdr {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidMatrix: return "InvalidMatrix";
    case Errc::NumericalFailure: return "NumericalFailure";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::NoOracle: return "NoOracle";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::FormatError: return "FormatError";
    case Errc::ShapeError: return "ShapeError";
    case Errc::InvalidSchedule: return "InvalidSchedule";
    case Errc::InvalidStep: return "InvalidStep";
    case Errc::DegenerateKey: return "DegenerateKey";
    case Errc::BuildError: return "BuildError";
    case Errc::EvalError: return "EvalError";
    case Errc::FileError: return "FileError";
    case Errc::UsageError: return "UsageError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

}  // namespace gdr
