// SPDX-License-Identifier: Apache-2.0
#include "mos/router.hpp"

#include <algorithm>
#include <cmath>

#include "mos/error.hpp"
#include "mos/ops.hpp"

namespace mos {

std::string to_string(RouterSharing sharing) {
  return sharing == RouterSharing::SharedTrunk ? "shared" : "per-layer";
}

RouterSharing parse_router_sharing(std::string_view text) {
  if (text == "shared") return RouterSharing::SharedTrunk;
  if (text == "per-layer") return RouterSharing::PerLayer;
  throw ConfigError("unknown router sharing '" + std::string(text) + "' (expected shared or per-layer)");
}

Router::Router(AlignMode mode, std::size_t n_enc, std::size_t hidden, std::size_t experts,
               std::vector<RouterHead> heads, RouterSharing sharing, ParameterSet& params, std::uint64_t seed)
    : mode_(mode), n_enc_(n_enc), hidden_(hidden), experts_(experts), heads_(std::move(heads)), sharing_(sharing) {
  if (n_enc_ == 0 || hidden_ == 0 || experts_ == 0) throw ConfigError("router sizes must be positive");
  if (heads_.empty()) throw ConfigError("router needs at least one head");

  auto make_layer = [&](const std::string& name, std::size_t out, std::size_t in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer layer;
    layer.weight =
        params.add(name + ".weight", Tensor::parameter({out, in}, uniform_init(out * in, bound, seed, name + ".weight")));
    layer.bias = params.add(name + ".bias", Tensor::parameter({out}, uniform_init(out, bound, seed, name + ".bias")));
    return layer;
  };

  if (sharing_ == RouterSharing::SharedTrunk) trunks_.push_back(make_layer("router.trunk", hidden_, n_enc_));
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    if (sharing_ == RouterSharing::PerLayer) {
      trunks_.push_back(make_layer("router.trunk." + heads_[h].name, hidden_, n_enc_));
    }
    outputs_.push_back(make_layer("router.out." + heads_[h].name, output_arity(h), hidden_));
  }
}

std::size_t Router::head_index(std::string_view name) const {
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    if (heads_[h].name == name) return h;
  }
  throw ArgumentError("router has no head '" + std::string(name) + "'");
}

std::size_t Router::output_arity(std::size_t head) const {
  if (mode_ == AlignMode::Layer) return experts_;
  return heads_.at(head).n_out_big * experts_;
}

Tensor Router::trunk(const Tensor& input, std::size_t head, UsageMap* usage) const {
  const Layer& t = trunks_[sharing_ == RouterSharing::SharedTrunk ? 0 : head];
  LinearWeights w{read_block(t.weight, hidden_, n_enc_, usage), read_block(t.bias, 1, hidden_, usage)};
  return relu(linear(input, w));
}

AlignmentVector Router::finish(const Tensor& hidden, std::size_t head, UsageMap* usage) const {
  const Layer& o = outputs_[head];
  std::size_t arity = output_arity(head);
  LinearWeights w{read_block(o.weight, arity, hidden_, usage), read_block(o.bias, 1, arity, usage)};
  Tensor logits = linear(hidden, w);  // 1 x arity
  if (mode_ == AlignMode::Layer) return {AlignMode::Layer, reshape(softmax_rows(logits), {experts_})};
  Tensor grid = reshape(logits, {heads_[head].n_out_big, experts_});
  return {AlignMode::Neuron, softmax_rows(grid)};
}

AlignmentVector Router::route(std::span<const double> encoding, std::size_t head, UsageMap* usage) const {
  if (encoding.size() != n_enc_) {
    throw ArgumentError("router expects an encoding of size " + std::to_string(n_enc_) + ", got " +
                        std::to_string(encoding.size()));
  }
  if (head >= heads_.size()) throw ArgumentError("router head index out of range");
  Tensor input = Tensor::from({1, n_enc_}, std::vector<double>(encoding.begin(), encoding.end()));
  return finish(trunk(input, head, usage), head, usage);
}

std::vector<AlignmentVector> Router::route_all(std::span<const double> encoding, UsageMap* usage) const {
  std::vector<std::size_t> all(heads_.size());
  for (std::size_t h = 0; h < all.size(); ++h) all[h] = h;
  return route_heads(encoding, all, usage);
}

std::vector<AlignmentVector> Router::route_heads(std::span<const double> encoding,
                                                 const std::vector<std::size_t>& heads, UsageMap* usage) const {
  if (encoding.size() != n_enc_) {
    throw ArgumentError("router expects an encoding of size " + std::to_string(n_enc_) + ", got " +
                        std::to_string(encoding.size()));
  }
  Tensor input = Tensor::from({1, n_enc_}, std::vector<double>(encoding.begin(), encoding.end()));
  std::vector<AlignmentVector> out;
  Tensor shared;
  if (sharing_ == RouterSharing::SharedTrunk && !heads.empty()) shared = trunk(input, 0, usage);
  for (std::size_t h : heads) {
    if (h >= heads_.size()) throw ArgumentError("router head index out of range");
    out.push_back(finish(shared.defined() ? shared : trunk(input, h, usage), h, usage));
  }
  return out;
}

std::vector<Tensor> Router::parameters() const {
  std::vector<Tensor> out;
  for (const Layer& l : trunks_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  for (const Layer& l : outputs_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

PartitionRule PartitionRule::quantiles(const SearchSpace& space, std::size_t experts) {
  if (experts == 0) throw ConfigError("partition rule needs at least one expert");
  std::vector<std::int64_t> counts;
  if (space.cardinality() <= 100000.0) {
    for (const ArchDescriptor& a : space.enumerate()) counts.push_back(space.parameter_count(a));
  } else {
    Rng rng = derive_rng(0, "partition-rule");
    for (int i = 0; i < 20000; ++i) counts.push_back(space.parameter_count(space.sample_random(rng)));
  }
  std::sort(counts.begin(), counts.end());
  std::vector<std::int64_t> thresholds;
  for (std::size_t k = 1; k < experts; ++k) {
    std::size_t idx = (k * counts.size()) / experts;
    thresholds.push_back(counts[idx == 0 ? 0 : idx - 1]);
  }
  return PartitionRule(std::move(thresholds));
}

std::size_t PartitionRule::expert_for(std::int64_t parameter_count) const {
  std::size_t idx = 0;
  for (std::int64_t t : thresholds_) {
    if (parameter_count > t) ++idx;
  }
  return idx;
}

}  // namespace mos
