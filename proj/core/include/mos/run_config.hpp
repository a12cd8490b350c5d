// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with nested sections. See
// docs/config.md for the full syntax.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mos/checkpoint.hpp"
#include "mos/latency.hpp"
#include "mos/search.hpp"
#include "mos/space.hpp"
#include "mos/supernet.hpp"
#include "mos/training.hpp"

namespace mos {

enum class LatencyMode { Synthetic, Measured };
std::string to_string(LatencyMode mode);
LatencyMode parse_latency_mode(std::string_view text);

struct LatencySettings {
  LatencyMode mode = LatencyMode::Synthetic;
  SyntheticLatency synthetic;
  LatencyProtocol protocol;
  std::size_t dataset_size = 200;
  PredictorConfig predictor;
  std::vector<double> constraints;  // ms; empty: search.latency_constraint_ms only

  bool operator==(const LatencySettings&) const = default;
};

struct EvalSettings {
  std::size_t batch_size = 32;
  std::size_t batches = 16;

  bool operator==(const EvalSettings&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  Scheme scheme = Scheme::LayerMoS;
  Dtype checkpoint_dtype = Dtype::F64;
  SearchSpace space = SearchSpace::encoder_default();
  RouterSharing router_sharing = RouterSharing::SharedTrunk;
  double init_std = 0.02;
  SyntheticTask task;
  TrainConfig train;
  SearchConfig search;
  LatencySettings latency;
  EvalSettings eval;

  /// Sub-component seeds follow the top-level seed.
  void set_seed(std::uint64_t value);
  SupernetConfig supernet_config() const;
  /// Throws ConfigError on inconsistent sections.
  void validate() const;

  /// Requires "seed"; every other key is optional. Unknown keys are errors.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Pretty-printed JSON; parse(emit()) reproduces the config.
  std::string emit() const;
  static RunConfig parse(const std::string& text);
  /// Throws ConfigError naming the path when it cannot be read or parsed.
  static RunConfig load(const std::string& path);
};

}  // namespace mos
