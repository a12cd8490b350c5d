// SPDX-License-Identifier: Apache-2.0
#include "mos/supernet.hpp"

#include <unordered_map>

#include "mos/error.hpp"
#include "mos/ops.hpp"

namespace mos {
namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_ffn_tensor(const std::string& name) {
  return ends_with(name, ".fc1.weight") || ends_with(name, ".fc1.bias") || ends_with(name, ".fc2.weight") ||
         ends_with(name, ".fc2.bias");
}

std::vector<double> initial_values(const ParamSpec& spec, std::uint64_t seed, double init_std,
                                   const std::string& key) {
  const std::size_t n = shape_size(spec.shape);
  switch (spec.init) {
    case InitKind::Normal: return normal_init(n, init_std, seed, key);
    case InitKind::Ones: return std::vector<double>(n, 1.0);
    case InitKind::Zeros: break;
  }
  return std::vector<double>(n, 0.0);
}

std::string expert_name(const std::string& layer, std::size_t index, const char* what) {
  return layer + ".expert" + std::to_string(index) + "." + what;
}

std::vector<std::string> active_layers(const ArchShape& shape) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < shape.encoder.size(); ++l) {
    out.push_back("enc." + std::to_string(l) + ".fc1");
    out.push_back("enc." + std::to_string(l) + ".fc2");
  }
  for (std::size_t l = 0; l < shape.decoder.size(); ++l) {
    out.push_back("dec." + std::to_string(l) + ".fc1");
    out.push_back("dec." + std::to_string(l) + ".fc2");
  }
  return out;
}

}  // namespace

std::string expert_init_key(const std::string& weight_name, std::size_t index) {
  return index == 0 ? weight_name : weight_name + "#" + std::to_string(index);
}

void SupernetConfig::validate() const {
  if (experts < 1) throw ConfigError("expert count m must be at least 1");
  if (router_hidden < 1) throw ConfigError("router hidden size must be at least 1");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

nlohmann::json SupernetConfig::to_json() const {
  return {{"scheme", to_string(scheme)},
          {"experts", experts},
          {"router_hidden", router_hidden},
          {"router_sharing", to_string(router_sharing)},
          {"init_std", init_std},
          {"seed", seed}};
}

SupernetConfig SupernetConfig::from_json(const nlohmann::json& j) {
  SupernetConfig c;
  c.scheme = parse_scheme(j.at("scheme").get<std::string>());
  c.experts = j.value("experts", c.experts);
  c.router_hidden = j.value("router_hidden", c.router_hidden);
  c.router_sharing = parse_router_sharing(j.value("router_sharing", to_string(c.router_sharing)));
  c.init_std = j.value("init_std", c.init_std);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Tensor batch_loss(const Tensor& logits, const Batch& batch, double smoothing) {
  const std::size_t V = logits.cols();
  return cross_entropy(reshape(logits, {batch.batch * batch.seq_len, V}), batch.loss_targets(), smoothing);
}

StaticModel::StaticModel(SearchSpace space, ArchDescriptor arch, ParameterSet params)
    : space_(std::move(space)), arch_(std::move(arch)), params_(std::move(params)) {
  space_.require_member(arch_);
  shape_ = space_.shape(arch_);
  for (const ParamSpec& spec : network_layout(shape_, space_.fixed())) {
    if (!params_.contains(spec.name)) throw ArgumentError("static model is missing tensor '" + spec.name + "'");
    if (params_.at(spec.name).shape() != spec.shape) {
      throw DimensionError("static tensor '" + spec.name + "' has shape " +
                           shape_string(params_.at(spec.name).shape()) + ", expected " + shape_string(spec.shape));
    }
  }
}

StaticModel StaticModel::fresh(const SearchSpace& space, const ArchDescriptor& arch, std::uint64_t seed,
                               double init_std) {
  space.require_member(arch);
  ParameterSet params;
  for (const ParamSpec& spec : network_layout(space.shape(arch), space.fixed())) {
    params.add(spec.name, Tensor::parameter(spec.shape, initial_values(spec, seed, init_std, spec.name)));
  }
  return StaticModel(space, arch, std::move(params));
}

Tensor StaticModel::forward(const Batch& batch) const {
  return run_network(resolve_network(params_, shape_, space_.fixed()), batch);
}

Tensor StaticModel::loss(const Batch& batch, double smoothing) const {
  return batch_loss(forward(batch), batch, smoothing);
}

SupernetModel::SupernetModel(SearchSpace space, SupernetConfig config)
    : space_(std::move(space)), config_(config) {
  config_.validate();
  const std::size_t m = experts();
  std::vector<RouterHead> heads;
  for (const ParamSpec& spec : network_layout(space_.max_shape(), space_.fixed())) {
    if (!mixes() || !is_ffn_tensor(spec.name)) {
      params_.add(spec.name, Tensor::parameter(spec.shape, initial_values(spec, config_.seed, config_.init_std,
                                                                          spec.name)));
      continue;
    }
    const bool weight = ends_with(spec.name, ".weight");
    const std::string layer = spec.name.substr(0, spec.name.rfind('.'));
    if (weight) {
      routed_.push_back(layer);
      heads.push_back({layer, spec.shape[0]});
    }
    for (std::size_t i = 0; i < m; ++i) {
      params_.add(expert_name(layer, i, weight ? "weight" : "bias"),
                  Tensor::parameter(spec.shape, initial_values(spec, config_.seed, config_.init_std,
                                                               expert_init_key(spec.name, i))));
    }
  }
  if (config_.scheme == Scheme::LayerMoS || config_.scheme == Scheme::NeuronMoS) {
    AlignMode mode = config_.scheme == Scheme::LayerMoS ? AlignMode::Layer : AlignMode::Neuron;
    router_.emplace(mode, space_.encoding_size(), config_.router_hidden, m, std::move(heads), config_.router_sharing,
                    params_, config_.seed);
  } else if (config_.scheme == Scheme::FewShot) {
    rule_ = PartitionRule::quantiles(space_, m);
  }
}

std::size_t SupernetModel::experts() const { return mixes() ? config_.experts : 1; }

ExpertBank SupernetModel::expert_bank(const std::string& layer) const {
  ExpertBank bank;
  if (!mixes()) {
    bank.experts.push_back(params_.at(layer + ".weight"));
    bank.biases.push_back(params_.at(layer + ".bias"));
    return bank;
  }
  for (std::size_t i = 0; i < experts(); ++i) {
    bank.experts.push_back(params_.at(expert_name(layer, i, "weight")));
    bank.biases.push_back(params_.at(expert_name(layer, i, "bias")));
  }
  return bank;
}

std::vector<std::pair<std::string, AlignmentVector>> SupernetModel::alignments(const ArchDescriptor& arch,
                                                                               UsageMap* usage) const {
  if (!mixes()) throw UnsupportedScheme("the standard scheme has no alignment vectors");
  space_.require_member(arch);
  const std::vector<std::string> layers = active_layers(space_.shape(arch));
  std::vector<std::pair<std::string, AlignmentVector>> out;
  if (router_) {
    std::vector<std::size_t> heads;
    for (const std::string& l : layers) heads.push_back(router_->head_index(l));
    std::vector<AlignmentVector> routed = router_->route_heads(space_.encode(arch).normalized, heads, usage);
    for (std::size_t i = 0; i < layers.size(); ++i) out.emplace_back(layers[i], std::move(routed[i]));
    return out;
  }
  AlignmentVector one_hot = rule_.route(space_, arch);
  for (const std::string& l : layers) out.emplace_back(l, one_hot);
  return out;
}

NetworkWeights SupernetModel::resolve(const ArchDescriptor& arch, UsageMap* usage) const {
  space_.require_member(arch);
  const ArchShape shape = space_.shape(arch);
  if (!mixes()) return resolve_network(params_, shape, space_.fixed(), usage);

  std::unordered_map<std::string, AlignmentVector> routes;
  for (auto& [layer, align] : alignments(arch, usage)) routes.emplace(layer, std::move(align));
  FfnResolver ffn = [&](const std::string& prefix, const std::string& which, std::size_t n_out, std::size_t n_in) {
    const std::string layer = prefix + "." + which;
    return mix(expert_bank(layer), routes.at(layer), n_out, n_in, usage);
  };
  return resolve_network(params_, shape, space_.fixed(), usage, ffn);
}

Tensor SupernetModel::forward(const ArchDescriptor& arch, const Batch& batch, UsageMap* usage) const {
  return run_network(resolve(arch, usage), batch);
}

Tensor SupernetModel::loss(const ArchDescriptor& arch, const Batch& batch, double smoothing, UsageMap* usage) const {
  return batch_loss(forward(arch, batch, usage), batch, smoothing);
}

StaticModel SupernetModel::collapse(const ArchDescriptor& arch) const {
  NoGradGuard no_grad;
  NetworkWeights weights = resolve(arch);
  ParameterSet params;
  for (auto& [name, tensor] : flatten_network(weights)) {
    params.add(name, Tensor::parameter(tensor.shape(), tensor.to_vector()));
  }
  return StaticModel(space_, arch, std::move(params));
}

}  // namespace mos
