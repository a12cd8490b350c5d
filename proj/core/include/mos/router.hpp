// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mos/elastic.hpp"
#include "mos/params.hpp"
#include "mos/space.hpp"

namespace mos {

enum class RouterSharing { SharedTrunk, PerLayer };

std::string to_string(RouterSharing sharing);
RouterSharing parse_router_sharing(std::string_view text);

/// One routed linear layer: its name and output width in the supernet.
struct RouterHead {
  std::string name;
  std::size_t n_out_big = 0;
};

/// Learned map from a normalized architecture encoding to alignment vectors:
/// Linear(n_enc, hidden) -> ReLU -> Linear(hidden, arity) -> softmax, with a
/// distinct output projection per routed layer. The hidden trunk is either
/// shared by all heads or duplicated per head.
class Router {
 public:
  Router(AlignMode mode, std::size_t n_enc, std::size_t hidden, std::size_t experts, std::vector<RouterHead> heads,
         RouterSharing sharing, ParameterSet& params, std::uint64_t seed);

  AlignMode mode() const { return mode_; }
  std::size_t experts() const { return experts_; }
  std::size_t input_size() const { return n_enc_; }
  std::size_t hidden() const { return hidden_; }
  RouterSharing sharing() const { return sharing_; }
  const std::vector<RouterHead>& heads() const { return heads_; }
  std::size_t head_index(std::string_view name) const;

  /// Raw output width of a head before the softmax: m in layer mode,
  /// n_out_big * m in neuron mode.
  std::size_t output_arity(std::size_t head) const;

  AlignmentVector route(std::span<const double> encoding, std::size_t head, UsageMap* usage = nullptr) const;
  /// All heads at once; the shared trunk is evaluated a single time.
  std::vector<AlignmentVector> route_all(std::span<const double> encoding, UsageMap* usage = nullptr) const;
  /// Selected heads only, in the order given.
  std::vector<AlignmentVector> route_heads(std::span<const double> encoding, const std::vector<std::size_t>& heads,
                                           UsageMap* usage = nullptr) const;

  /// Every router parameter, in registration order.
  std::vector<Tensor> parameters() const;

 private:
  struct Layer {
    Tensor weight, bias;
  };
  Tensor trunk(const Tensor& input, std::size_t head, UsageMap* usage) const;
  AlignmentVector finish(const Tensor& hidden, std::size_t head, UsageMap* usage) const;

  AlignMode mode_;
  std::size_t n_enc_, hidden_, experts_;
  std::vector<RouterHead> heads_;
  RouterSharing sharing_;
  std::vector<Layer> trunks_;
  std::vector<Layer> outputs_;
};

/// Rule-based router: expert index from the architecture's parameter count
/// against ascending thresholds (m - 1 of them).
class PartitionRule {
 public:
  PartitionRule() = default;
  explicit PartitionRule(std::vector<std::int64_t> thresholds) : thresholds_(std::move(thresholds)) {}

  /// Quantile thresholds of parameter_count over the space (enumerated when
  /// small, otherwise sampled with a fixed seed). m = 2 gives the median rule.
  static PartitionRule quantiles(const SearchSpace& space, std::size_t experts);

  std::size_t experts() const { return thresholds_.size() + 1; }
  const std::vector<std::int64_t>& thresholds() const { return thresholds_; }
  std::size_t expert_for(std::int64_t parameter_count) const;
  std::size_t expert_for(const SearchSpace& space, const ArchDescriptor& arch) const {
    return expert_for(space.parameter_count(arch));
  }
  AlignmentVector route(const SearchSpace& space, const ArchDescriptor& arch) const {
    return one_hot_alignment(expert_for(space, arch), experts());
  }

 private:
  std::vector<std::int64_t> thresholds_;
};

}  // namespace mos
