// SPDX-License-Identifier: Apache-2.0
//
// Elastic linear layers: top-left block extraction from a supernet weight and
// the two architecture-routed mixtures over an expert bank.
//
//   layer-wise:   W_a = sum_i alpha[i] * top(E_i)
//   neuron-wise:  row j of W_a = sum_i beta[j, i] * row j of top(E_i)
//
// Biases mix with the same coefficients as their matrix rows, so a collapsed
// layer is reproduced exactly by one weight and one bias.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mos/tensor.hpp"

namespace mos {

enum class Scheme { Standard, LayerMoS, NeuronMoS, FewShot };

std::string to_string(Scheme scheme);
Scheme parse_scheme(std::string_view text);

struct LinearWeights {
  Tensor weight;  // n_out x n_in
  Tensor bias;    // n_out
};

/// x[N x n_in] -> x W^T + b.
Tensor linear(const Tensor& x, const LinearWeights& w);

/// Records which parameter coordinates a forward pass reads, keyed by leaf.
using UsageMap = std::unordered_map<const detail::Node*, std::vector<std::uint8_t>>;

/// Leading n_rows x n_cols block of a parameter (rank-1 parameters: leading
/// n_cols entries), marking the block as read in usage when given.
Tensor read_block(const Tensor& param, std::size_t n_rows, std::size_t n_cols, UsageMap* usage = nullptr);

/// First n_out rows and first n_in columns of w.
Tensor extract_top(const Tensor& w, std::size_t n_out, std::size_t n_in);
/// First n_out entries of b.
Tensor extract_top_bias(const Tensor& b, std::size_t n_out);

/// m expert weights of one elastic linear layer, each n_out_big x n_in_big,
/// plus one bias per expert. With m == 1 this is the standard supernet weight.
struct ExpertBank {
  std::vector<Tensor> experts;
  std::vector<Tensor> biases;

  std::size_t size() const { return experts.size(); }
  std::size_t n_out_big() const { return experts.front().rows(); }
  std::size_t n_in_big() const { return experts.front().cols(); }
  /// Throws DimensionError unless every expert and bias shares one shape.
  void validate() const;
};

enum class AlignMode { Layer, Neuron };

/// Router output for one layer: alpha (length m, sums to one) in layer mode,
/// beta (n_out_big x m, rows sum to one) in neuron mode.
struct AlignmentVector {
  AlignMode mode = AlignMode::Layer;
  Tensor weights;

  std::size_t experts() const { return weights.cols(); }
  /// Numeric copy, row-major.
  std::vector<double> values() const { return weights.to_vector(); }
};

/// Constant one-hot alignment selecting expert `index` out of m.
AlignmentVector one_hot_alignment(std::size_t index, std::size_t m);

/// W_a and b_a for the layer-wise mixture. Experts whose coefficient is a
/// constant zero are skipped, so they receive no gradient at all.
LinearWeights mix_layerwise(const ExpertBank& bank, const Tensor& alpha, std::size_t n_out, std::size_t n_in,
                            UsageMap* usage = nullptr);
/// W_a and b_a for the neuron-wise mixture; beta is n_out_big x m.
LinearWeights mix_neuronwise(const ExpertBank& bank, const Tensor& beta, std::size_t n_out, std::size_t n_in,
                             UsageMap* usage = nullptr);
/// Dispatches on the alignment's mode.
LinearWeights mix(const ExpertBank& bank, const AlignmentVector& align, std::size_t n_out, std::size_t n_in,
                  UsageMap* usage = nullptr);

Tensor layerwise_forward(const Tensor& x, const ExpertBank& bank, const Tensor& alpha, std::size_t n_out,
                         std::size_t n_in);
Tensor neuronwise_forward(const Tensor& x, const ExpertBank& bank, const Tensor& beta, std::size_t n_out,
                          std::size_t n_in);
Tensor standard_forward(const Tensor& x, const LinearWeights& big, std::size_t n_out, std::size_t n_in);

}  // namespace mos
