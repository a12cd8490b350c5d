// SPDX-License-Identifier: Apache-2.0
#include "mos/elastic.hpp"

#include "mos/error.hpp"
#include "mos/ops.hpp"

namespace mos {

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::Standard: return "standard";
    case Scheme::LayerMoS: return "layer-mos";
    case Scheme::NeuronMoS: return "neuron-mos";
    case Scheme::FewShot: return "fewshot-rule";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view text) {
  if (text == "standard") return Scheme::Standard;
  if (text == "layer-mos") return Scheme::LayerMoS;
  if (text == "neuron-mos") return Scheme::NeuronMoS;
  if (text == "fewshot-rule") return Scheme::FewShot;
  throw ConfigError("unknown scheme '" + std::string(text) +
                    "' (expected standard, layer-mos, neuron-mos or fewshot-rule)");
}

Tensor linear(const Tensor& x, const LinearWeights& w) { return add(matmul_bt(x, w.weight), w.bias); }

Tensor read_block(const Tensor& param, std::size_t n_rows, std::size_t n_cols, UsageMap* usage) {
  if (usage) {
    auto& mask = (*usage)[param.node().get()];
    if (mask.empty()) mask.assign(param.size(), 0);
    std::size_t cols = param.cols();
    std::size_t rows = param.rank() == 1 ? 1 : n_rows;
    for (std::size_t r = 0; r < rows && r < param.rows(); ++r) {
      for (std::size_t c = 0; c < n_cols && c < cols; ++c) mask[r * cols + c] = 1;
    }
  }
  if (param.rank() == 1) {
    if (n_cols == param.cols()) return param;
    return slice(param, 0, 1, 0, n_cols);
  }
  if (n_rows == param.rows() && n_cols == param.cols()) return param;
  return slice(param, 0, n_rows, 0, n_cols);
}

Tensor extract_top(const Tensor& w, std::size_t n_out, std::size_t n_in) {
  if (n_out < 1 || n_in < 1 || n_out > w.rows() || n_in > w.cols()) {
    throw DimensionError("extract_top: target " + std::to_string(n_out) + "x" + std::to_string(n_in) +
                         " outside weight " + shape_string(w.shape()));
  }
  return read_block(w, n_out, n_in);
}

Tensor extract_top_bias(const Tensor& b, std::size_t n_out) {
  if (n_out < 1 || n_out > b.size()) {
    throw DimensionError("extract_top_bias: " + std::to_string(n_out) + " entries of " + shape_string(b.shape()));
  }
  return read_block(b, 1, n_out);
}

void ExpertBank::validate() const {
  if (experts.empty()) throw DimensionError("expert bank needs at least one expert");
  if (biases.size() != experts.size()) throw DimensionError("expert bank needs one bias per expert");
  const Shape& w = experts.front().shape();
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (experts[i].rank() != 2 || experts[i].shape() != w) {
      throw DimensionError("expert " + std::to_string(i) + " has shape " + shape_string(experts[i].shape()) +
                           ", expected " + shape_string(w));
    }
    if (biases[i].size() != w[0]) throw DimensionError("bias " + std::to_string(i) + " does not match expert rows");
  }
}

AlignmentVector one_hot_alignment(std::size_t index, std::size_t m) {
  if (index >= m) throw ArgumentError("one-hot index outside expert count");
  std::vector<double> v(m, 0.0);
  v[index] = 1.0;
  return {AlignMode::Layer, Tensor::from({m}, std::move(v))};
}

namespace {

void check_target(const ExpertBank& bank, std::size_t n_out, std::size_t n_in) {
  bank.validate();
  if (n_out < 1 || n_in < 1 || n_out > bank.n_out_big() || n_in > bank.n_in_big()) {
    throw DimensionError("target " + std::to_string(n_out) + "x" + std::to_string(n_in) + " outside expert bank " +
                         std::to_string(bank.n_out_big()) + "x" + std::to_string(bank.n_in_big()));
  }
}

Tensor accumulate(Tensor total, const Tensor& term) { return total.defined() ? add(total, term) : term; }

}  // namespace

LinearWeights mix_layerwise(const ExpertBank& bank, const Tensor& alpha, std::size_t n_out, std::size_t n_in,
                            UsageMap* usage) {
  check_target(bank, n_out, n_in);
  if (alpha.size() != bank.size()) {
    throw DimensionError("alpha has " + std::to_string(alpha.size()) + " entries for " + std::to_string(bank.size()) +
                         " experts");
  }
  const bool constant = !alpha.requires_grad();
  LinearWeights out;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (constant && alpha.data()[i] == 0.0) continue;
    Tensor coef = slice(alpha, 0, 1, i, 1);
    out.weight = accumulate(out.weight, mul(read_block(bank.experts[i], n_out, n_in, usage), coef));
    out.bias = accumulate(out.bias, mul(read_block(bank.biases[i], 1, n_out, usage), coef));
  }
  if (!out.weight.defined()) throw ArgumentError("alpha selects no expert");
  return out;
}

LinearWeights mix_neuronwise(const ExpertBank& bank, const Tensor& beta, std::size_t n_out, std::size_t n_in,
                             UsageMap* usage) {
  check_target(bank, n_out, n_in);
  if (beta.rank() != 2 || beta.rows() != bank.n_out_big() || beta.cols() != bank.size()) {
    throw DimensionError("beta has shape " + shape_string(beta.shape()) + ", expected " +
                         std::to_string(bank.n_out_big()) + "x" + std::to_string(bank.size()));
  }
  LinearWeights out;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    Tensor column = slice(beta, 0, n_out, i, 1);  // n_out x 1
    out.weight = accumulate(out.weight, mul(read_block(bank.experts[i], n_out, n_in, usage), column));
    Tensor bias = reshape(read_block(bank.biases[i], 1, n_out, usage), {n_out, 1});
    out.bias = accumulate(out.bias, mul(bias, column));
  }
  out.bias = reshape(out.bias, {n_out});
  return out;
}

LinearWeights mix(const ExpertBank& bank, const AlignmentVector& align, std::size_t n_out, std::size_t n_in,
                  UsageMap* usage) {
  if (align.mode == AlignMode::Layer) return mix_layerwise(bank, align.weights, n_out, n_in, usage);
  return mix_neuronwise(bank, align.weights, n_out, n_in, usage);
}

Tensor layerwise_forward(const Tensor& x, const ExpertBank& bank, const Tensor& alpha, std::size_t n_out,
                         std::size_t n_in) {
  if (x.cols() != n_in) throw DimensionError("input width does not match n_in");
  return linear(x, mix_layerwise(bank, alpha, n_out, n_in));
}

Tensor neuronwise_forward(const Tensor& x, const ExpertBank& bank, const Tensor& beta, std::size_t n_out,
                          std::size_t n_in) {
  if (x.cols() != n_in) throw DimensionError("input width does not match n_in");
  return linear(x, mix_neuronwise(bank, beta, n_out, n_in));
}

Tensor standard_forward(const Tensor& x, const LinearWeights& big, std::size_t n_out, std::size_t n_in) {
  if (x.cols() != n_in) throw DimensionError("input width does not match n_in");
  return linear(x, {extract_top(big.weight, n_out, n_in), extract_top_bias(big.bias, n_out)});
}

}  // namespace mos
