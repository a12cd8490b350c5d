// SPDX-License-Identifier: Apache-2.0
//
// Weight-sharing supernet over a search space. Attention, embeddings and
// layer norms use leading-block extraction; the two FFN linears of every
// layer follow the configured scheme. collapse() materializes one
// architecture as a StaticModel whose forward reproduces the supernet's.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mos/elastic.hpp"
#include "mos/params.hpp"
#include "mos/router.hpp"
#include "mos/space.hpp"
#include "mos/transformer.hpp"

namespace mos {

struct SupernetConfig {
  Scheme scheme = Scheme::Standard;
  std::size_t experts = 2;  // m; ignored by the standard scheme
  std::size_t router_hidden = 128;
  RouterSharing router_sharing = RouterSharing::SharedTrunk;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  /// Throws ConfigError on invalid values.
  void validate() const;
  nlohmann::json to_json() const;
  static SupernetConfig from_json(const nlohmann::json& j);
  bool operator==(const SupernetConfig&) const = default;
};

/// Mean cross-entropy of [B, S, V] logits over the batch's predicted positions.
Tensor batch_loss(const Tensor& logits, const Batch& batch, double smoothing = 0.0);

/// A router-free network for one architecture. Tensor names match
/// network_layout() for the architecture's shape.
class StaticModel {
 public:
  StaticModel(SearchSpace space, ArchDescriptor arch, ParameterSet params);

  /// Freshly initialized model (normal(0, init_std) matrices, unit gammas).
  static StaticModel fresh(const SearchSpace& space, const ArchDescriptor& arch, std::uint64_t seed,
                           double init_std = 0.02);

  const SearchSpace& space() const { return space_; }
  const ArchDescriptor& arch() const { return arch_; }
  const ArchShape& shape() const { return shape_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  std::int64_t parameter_count() const { return static_cast<std::int64_t>(params_.numel()); }

  Tensor forward(const Batch& batch) const;
  Tensor loss(const Batch& batch, double smoothing = 0.0) const;

 private:
  SearchSpace space_;
  ArchDescriptor arch_;
  ArchShape shape_;
  ParameterSet params_;
};

class SupernetModel {
 public:
  SupernetModel(SearchSpace space, SupernetConfig config);

  SupernetModel(const SupernetModel&) = delete;
  SupernetModel& operator=(const SupernetModel&) = delete;
  SupernetModel(SupernetModel&&) = default;
  SupernetModel& operator=(SupernetModel&&) = default;

  const SearchSpace& space() const { return space_; }
  const SupernetConfig& config() const { return config_; }
  Scheme scheme() const { return config_.scheme; }
  /// Experts per routed layer (1 for the standard scheme).
  std::size_t experts() const;
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// The learned router, or nullptr for the standard and rule-based schemes.
  const Router* router() const { return router_ ? &*router_ : nullptr; }
  const PartitionRule& partition_rule() const { return rule_; }
  /// Names of the routed FFN linears ("enc.0.fc1", ...) in supernet order.
  const std::vector<std::string>& routed_layers() const { return routed_; }
  /// Expert bank of one routed layer.
  ExpertBank expert_bank(const std::string& layer) const;

  /// Alignment of every routed layer that is active in `arch`, keyed by
  /// layer name. Throws UnsupportedScheme under the standard scheme.
  std::vector<std::pair<std::string, AlignmentVector>> alignments(const ArchDescriptor& arch,
                                                                  UsageMap* usage = nullptr) const;

  /// Weights of `arch` as a differentiable function of the supernet
  /// parameters. Reads are recorded in usage when given.
  NetworkWeights resolve(const ArchDescriptor& arch, UsageMap* usage = nullptr) const;
  Tensor forward(const ArchDescriptor& arch, const Batch& batch, UsageMap* usage = nullptr) const;
  Tensor loss(const ArchDescriptor& arch, const Batch& batch, double smoothing = 0.0,
              UsageMap* usage = nullptr) const;

  StaticModel collapse(const ArchDescriptor& arch) const;

 private:
  bool mixes() const { return config_.scheme != Scheme::Standard; }

  SearchSpace space_;
  SupernetConfig config_;
  ParameterSet params_;
  std::optional<Router> router_;
  PartitionRule rule_;
  std::vector<std::string> routed_;
};

/// Initialization stream key of expert `index` of a weight. Expert 0 shares
/// the standard weight's key, so m = 1 reproduces the standard supernet.
std::string expert_init_key(const std::string& weight_name, std::size_t index);

}  // namespace mos
