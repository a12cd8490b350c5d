// SPDX-License-Identifier: Apache-2.0
//
// Pre-LN transformer forward pass over fully resolved weights. Supernets
// resolve weights per architecture (slicing and expert mixing); static models
// hold them directly. Both feed the same forward below.
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mos/elastic.hpp"
#include "mos/params.hpp"
#include "mos/space.hpp"
#include "mos/tensor.hpp"

namespace mos {

/// A batch of token sequences, batch-major. Encoder-only models read `src`;
/// encoder-decoder models read `src` and the teacher-forced `tgt_in`.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> src;
  std::vector<int> tgt_in;
  std::vector<int> labels;         // target token at every position
  std::vector<std::uint8_t> mask;  // 1 where the position is predicted

  /// labels where mask is set, -1 elsewhere.
  std::vector<int> loss_targets() const;
  std::size_t predicted_positions() const;
};

struct NormWeights {
  Tensor gamma, beta;
};

struct AttentionWeights {
  LinearWeights q, k, v, o;
  std::size_t heads = 0;
};

struct LayerWeights {
  NormWeights ln1, ln2, ln3;
  AttentionWeights self_attn;
  AttentionWeights cross_attn;  // decoder layers only
  LinearWeights fc1, fc2;
  std::size_t attend_layers = 0;  // decoder layers only
};

struct StackWeights {
  Tensor tok_emb, pos_emb;
  std::vector<LayerWeights> layers;
  NormWeights final_ln;
};

struct NetworkWeights {
  StackWeights encoder;
  std::optional<StackWeights> decoder;
  LinearWeights head;
};

/// Logits of shape [batch, seq_len, vocab].
Tensor run_network(const NetworkWeights& weights, const Batch& batch);

enum class InitKind { Normal, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::Normal;
};

/// Names and shapes of every tensor of the static network with this shape.
/// FFN linears are named "<stack>.<layer>.fc1.weight" and so on.
std::vector<ParamSpec> network_layout(const ArchShape& shape, const FixedDims& fixed);

/// Resolves weights for `shape` from a parameter set laid out by
/// network_layout(), taking leading blocks where the stored tensors are
/// larger. `ffn` supplies the two FFN linears of each layer when set.
using FfnResolver = std::function<LinearWeights(const std::string& layer_prefix, const std::string& which,
                                                std::size_t n_out, std::size_t n_in)>;
NetworkWeights resolve_network(const ParameterSet& params, const ArchShape& shape, const FixedDims& fixed,
                               UsageMap* usage = nullptr, const FfnResolver& ffn = {});

/// Every tensor of resolved weights under its static name, in
/// network_layout() order.
std::vector<std::pair<std::string, Tensor>> flatten_network(const NetworkWeights& weights);

}  // namespace mos
