// SPDX-License-Identifier: Apache-2.0
//
// Latency measurement, synthetic latency, and the MLP latency predictor
// used to screen candidates during search.
#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mos/checkpoint.hpp"
#include "mos/supernet.hpp"

namespace mos {

/// Mean after dropping floor(fraction * N) samples from each end of the
/// sorted list. Throws ProtocolError when fewer than 10 samples are given.
double trimmed_mean(std::vector<double> samples, double fraction = 0.1);

struct LatencyProtocol {
  std::size_t repeats = 300;
  std::size_t warmup = 3;
  std::size_t batch_size = 1;
  std::size_t seq_len = 0;  // 0: the space's max_seq_len

  nlohmann::json to_json() const;
  static LatencyProtocol from_json(const nlohmann::json& j);
  bool operator==(const LatencyProtocol&) const = default;
};

/// Wall-clock milliseconds per forward pass on a fixed-shape input, as the
/// trimmed mean of `repeats` timings.
double measure_latency(const StaticModel& model, const LatencyProtocol& protocol);

/// Deterministic stand-in: base_ms + per_param_ms * parameter_count.
struct SyntheticLatency {
  double base_ms = 1.0;
  double per_param_ms = 1e-4;

  nlohmann::json to_json() const;
  static SyntheticLatency from_json(const nlohmann::json& j);
  bool operator==(const SyntheticLatency&) const = default;
};

using LatencyOracle = std::function<double(const ArchDescriptor&)>;

LatencyOracle synthetic_latency_oracle(const SearchSpace& space, SyntheticLatency latency);
/// Collapses each arch from `model` and measures it. The model must outlive
/// the oracle.
LatencyOracle measured_latency_oracle(const SupernetModel& model, LatencyProtocol protocol);

struct LatencySample {
  std::string arch;
  std::vector<double> encoding;  // normalized
  double latency_ms = 0;
};

/// Samples `count` archs and records their latency. Archs whose measurement
/// throws or yields a non-positive value are reported to `log` and skipped.
std::vector<LatencySample> build_latency_dataset(const SearchSpace& space, const LatencyOracle& oracle,
                                                 std::size_t count, Rng& rng, std::ostream* log = nullptr);

void write_latency_dataset(const std::string& path, const std::vector<LatencySample>& samples);
std::vector<LatencySample> read_latency_dataset(const std::string& path);

struct PredictorConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 1500;
  double learning_rate = 3e-3;
  double split = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PredictorConfig from_json(const nlohmann::json& j);
  bool operator==(const PredictorConfig&) const = default;
};

struct PredictorFit;

/// Three-layer perceptron n_enc -> hidden -> hidden -> 1 with ReLU, trained
/// with Adam on standardized features and targets.
class LatencyPredictor {
 public:
  /// Throws FitError for fewer than 20 samples, mismatched encoding sizes,
  /// or zero target variance.
  static PredictorFit fit(const std::vector<LatencySample>& samples, const PredictorConfig& config);

  double predict(std::span<const double> encoding) const;
  double predict(const SearchSpace& space, const ArchDescriptor& arch) const;
  std::size_t input_size() const { return mean_.size(); }
  const ParameterSet& parameters() const { return params_; }

  Checkpoint to_checkpoint() const;
  static LatencyPredictor from_checkpoint(const Checkpoint& checkpoint);

 private:
  LatencyPredictor() = default;
  Tensor forward(const Tensor& x) const;

  ParameterSet params_;
  std::vector<double> mean_, scale_;
  double target_mean_ = 0, target_scale_ = 1;
};

struct PredictorFit {
  LatencyPredictor predictor;
  std::size_t train_size = 0, test_size = 0;
  double train_mse = 0;  // standardized units
  double heldout_mae = 0;  // milliseconds
  std::optional<double> heldout_kendall;
};

}  // namespace mos
