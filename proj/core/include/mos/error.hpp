// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mos {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or out-of-range slice bounds.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (bad axis, empty input, wrong arity).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation precondition (non-scalar loss, non-simplex input).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Architecture is not a member of the search space.
class MembershipError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyperparameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::int64_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

/// Latency measurement protocol misuse.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Latency predictor cannot be fitted on the given dataset.
class FitError : public Error {
 public:
  using Error::Error;
};

/// No candidate satisfied the latency constraint.
class InfeasibleError : public Error {
 public:
  InfeasibleError(double constraint_ms, double tightest_ms)
      : Error("no architecture satisfies latency constraint " + std::to_string(constraint_ms) +
              " ms; tightest latency seen " + std::to_string(tightest_ms) + " ms"),
        constraint_ms_(constraint_ms),
        tightest_ms_(tightest_ms) {}
  double constraint_ms() const noexcept { return constraint_ms_; }
  double tightest_ms() const noexcept { return tightest_ms_; }

 private:
  double constraint_ms_;
  double tightest_ms_;
};

/// A metric is mathematically undefined for the input (all ties, zero norm).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// Operation requested on a model whose sharing scheme does not support it.
class UnsupportedScheme : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint or data file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mos
