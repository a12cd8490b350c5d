// SPDX-License-Identifier: Apache-2.0
#include "mos/transformer.hpp"

#include "mos/error.hpp"
#include "mos/ops.hpp"

namespace mos {

std::vector<int> Batch::loss_targets() const {
  std::vector<int> out(labels.size(), -1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mask.empty() || mask[i]) out[i] = labels[i];
  }
  return out;
}

std::size_t Batch::predicted_positions() const {
  if (mask.empty()) return labels.size();
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

namespace {

Tensor attention_block(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w, std::size_t batch,
                       bool causal) {
  Tensor q = linear(x_q, w.q);
  Tensor k = linear(x_kv, w.k);
  Tensor v = linear(x_kv, w.v);
  return linear(attention(q, k, v, batch, w.heads, causal), w.o);
}

Tensor ffn_block(const Tensor& x, const LayerWeights& w) { return linear(relu(linear(x, w.fc1)), w.fc2); }

Tensor norm(const Tensor& x, const NormWeights& w) { return layer_norm(x, w.gamma, w.beta); }

Tensor embed(const StackWeights& stack, const std::vector<int>& ids, std::size_t batch, std::size_t seq_len) {
  std::vector<int> positions(batch * seq_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq_len; ++t) positions[b * seq_len + t] = static_cast<int>(t);
  }
  return add(embedding(stack.tok_emb, ids), embedding(stack.pos_emb, positions));
}

}  // namespace

Tensor run_network(const NetworkWeights& weights, const Batch& batch) {
  const std::size_t B = batch.batch, S = batch.seq_len;
  if (B == 0 || S == 0 || batch.src.size() != B * S) throw DimensionError("batch src does not match batch x seq_len");
  if (S > weights.encoder.pos_emb.rows()) {
    throw DimensionError("sequence length " + std::to_string(S) + " exceeds position table");
  }

  Tensor h = embed(weights.encoder, batch.src, B, S);
  std::vector<Tensor> layer_out;
  for (const LayerWeights& l : weights.encoder.layers) {
    h = add(h, attention_block(norm(h, l.ln1), norm(h, l.ln1), l.self_attn, B, false));
    h = add(h, ffn_block(norm(h, l.ln2), l));
    layer_out.push_back(h);
  }
  const std::size_t enc_layers = layer_out.size();
  std::vector<Tensor> memory(enc_layers);
  auto normalized_output = [&](std::size_t i) -> const Tensor& {
    if (!memory[i].defined()) memory[i] = norm(layer_out[i], weights.encoder.final_ln);
    return memory[i];
  };

  Tensor top;
  if (!weights.decoder) {
    top = normalized_output(enc_layers - 1);
  } else {
    const StackWeights& dec = *weights.decoder;
    if (batch.tgt_in.size() != B * S) throw DimensionError("batch tgt_in does not match batch x seq_len");
    Tensor d = embed(dec, batch.tgt_in, B, S);
    for (const LayerWeights& l : dec.layers) {
      if (l.attend_layers < 1 || l.attend_layers > enc_layers) {
        throw DimensionError("decoder layer attends " + std::to_string(l.attend_layers) + " of " +
                             std::to_string(enc_layers) + " encoder layers");
      }
      Tensor a = norm(d, l.ln1);
      d = add(d, attention_block(a, a, l.self_attn, B, true));
      std::vector<Tensor> parts;
      for (std::size_t i = enc_layers - l.attend_layers; i < enc_layers; ++i) parts.push_back(normalized_output(i));
      Tensor mem = parts.size() == 1 ? parts.front() : concat_seq(parts, B);
      d = add(d, attention_block(norm(d, l.ln2), mem, l.cross_attn, B, false));
      d = add(d, ffn_block(norm(d, l.ln3), l));
    }
    top = norm(d, dec.final_ln);
  }
  Tensor logits = linear(top, weights.head);
  return reshape(logits, {B, S, logits.cols()});
}

namespace {

void push_linear(std::vector<ParamSpec>& out, const std::string& name, std::size_t n_out, std::size_t n_in) {
  out.push_back({name + ".weight", {n_out, n_in}, InitKind::Normal});
  out.push_back({name + ".bias", {n_out}, InitKind::Zeros});
}

void push_norm(std::vector<ParamSpec>& out, const std::string& name, std::size_t width) {
  out.push_back({name + ".gamma", {width}, InitKind::Ones});
  out.push_back({name + ".beta", {width}, InitKind::Zeros});
}

void push_attention(std::vector<ParamSpec>& out, const std::string& name, std::size_t width, std::size_t kv_width,
                    std::size_t inner) {
  push_linear(out, name + ".q", inner, width);
  push_linear(out, name + ".k", inner, kv_width);
  push_linear(out, name + ".v", inner, kv_width);
  push_linear(out, name + ".o", width, inner);
}

}  // namespace

std::vector<ParamSpec> network_layout(const ArchShape& shape, const FixedDims& fixed) {
  const std::size_t V = fixed.vocab_size, S = fixed.max_seq_len, d = fixed.head_dim;
  const std::size_t he = shape.enc_hidden;
  std::vector<ParamSpec> out;
  out.push_back({"enc.tok_emb", {V, he}, InitKind::Normal});
  out.push_back({"enc.pos_emb", {S, he}, InitKind::Normal});
  for (std::size_t l = 0; l < shape.encoder.size(); ++l) {
    const std::string p = "enc." + std::to_string(l);
    const LayerShape& ls = shape.encoder[l];
    push_norm(out, p + ".ln1", he);
    push_attention(out, p + ".self_attn", he, he, ls.heads * d);
    push_norm(out, p + ".ln2", he);
    push_linear(out, p + ".fc1", ls.ffn, he);
    push_linear(out, p + ".fc2", he, ls.ffn);
  }
  push_norm(out, "enc.final_ln", he);
  std::size_t head_in = he;
  if (shape.has_decoder()) {
    const std::size_t hd = shape.dec_hidden;
    out.push_back({"dec.tok_emb", {V, hd}, InitKind::Normal});
    out.push_back({"dec.pos_emb", {S, hd}, InitKind::Normal});
    for (std::size_t l = 0; l < shape.decoder.size(); ++l) {
      const std::string p = "dec." + std::to_string(l);
      const LayerShape& ls = shape.decoder[l];
      push_norm(out, p + ".ln1", hd);
      push_attention(out, p + ".self_attn", hd, hd, ls.heads * d);
      push_norm(out, p + ".ln2", hd);
      push_attention(out, p + ".cross_attn", hd, he, ls.cross_heads * d);
      push_norm(out, p + ".ln3", hd);
      push_linear(out, p + ".fc1", ls.ffn, hd);
      push_linear(out, p + ".fc2", hd, ls.ffn);
    }
    push_norm(out, "dec.final_ln", hd);
    head_in = hd;
  }
  push_linear(out, "head", V, head_in);
  return out;
}

NetworkWeights resolve_network(const ParameterSet& params, const ArchShape& shape, const FixedDims& fixed,
                               UsageMap* usage, const FfnResolver& ffn) {
  const std::size_t V = fixed.vocab_size, S = fixed.max_seq_len, d = fixed.head_dim;
  auto block = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    return read_block(params.at(name), rows, cols, usage);
  };
  auto vec = [&](const std::string& name, std::size_t n) { return read_block(params.at(name), 1, n, usage); };
  auto lin = [&](const std::string& name, std::size_t n_out, std::size_t n_in) {
    return LinearWeights{block(name + ".weight", n_out, n_in), vec(name + ".bias", n_out)};
  };
  auto ln = [&](const std::string& name, std::size_t width) {
    return NormWeights{vec(name + ".gamma", width), vec(name + ".beta", width)};
  };
  auto attn = [&](const std::string& name, std::size_t width, std::size_t kv_width, std::size_t heads) {
    const std::size_t inner = heads * d;
    return AttentionWeights{lin(name + ".q", inner, width), lin(name + ".k", inner, kv_width),
                            lin(name + ".v", inner, kv_width), lin(name + ".o", width, inner), heads};
  };
  auto ffn_linear = [&](const std::string& prefix, const std::string& which, std::size_t n_out, std::size_t n_in) {
    if (ffn) return ffn(prefix, which, n_out, n_in);
    return lin(prefix + "." + which, n_out, n_in);
  };

  NetworkWeights w;
  const std::size_t he = shape.enc_hidden;
  w.encoder.tok_emb = block("enc.tok_emb", V, he);
  w.encoder.pos_emb = block("enc.pos_emb", S, he);
  for (std::size_t l = 0; l < shape.encoder.size(); ++l) {
    const std::string p = "enc." + std::to_string(l);
    const LayerShape& ls = shape.encoder[l];
    LayerWeights lw;
    lw.ln1 = ln(p + ".ln1", he);
    lw.self_attn = attn(p + ".self_attn", he, he, ls.heads);
    lw.ln2 = ln(p + ".ln2", he);
    lw.fc1 = ffn_linear(p, "fc1", ls.ffn, he);
    lw.fc2 = ffn_linear(p, "fc2", he, ls.ffn);
    w.encoder.layers.push_back(std::move(lw));
  }
  w.encoder.final_ln = ln("enc.final_ln", he);
  std::size_t head_in = he;
  if (shape.has_decoder()) {
    const std::size_t hd = shape.dec_hidden;
    StackWeights dec;
    dec.tok_emb = block("dec.tok_emb", V, hd);
    dec.pos_emb = block("dec.pos_emb", S, hd);
    for (std::size_t l = 0; l < shape.decoder.size(); ++l) {
      const std::string p = "dec." + std::to_string(l);
      const LayerShape& ls = shape.decoder[l];
      LayerWeights lw;
      lw.ln1 = ln(p + ".ln1", hd);
      lw.self_attn = attn(p + ".self_attn", hd, hd, ls.heads);
      lw.ln2 = ln(p + ".ln2", hd);
      lw.cross_attn = attn(p + ".cross_attn", hd, he, ls.cross_heads);
      lw.ln3 = ln(p + ".ln3", hd);
      lw.fc1 = ffn_linear(p, "fc1", ls.ffn, hd);
      lw.fc2 = ffn_linear(p, "fc2", hd, ls.ffn);
      lw.attend_layers = static_cast<std::size_t>(ls.attend_layers);
      dec.layers.push_back(std::move(lw));
    }
    dec.final_ln = ln("dec.final_ln", hd);
    w.decoder = std::move(dec);
    head_in = hd;
  }
  w.head = lin("head", V, head_in);
  return w;
}

std::vector<std::pair<std::string, Tensor>> flatten_network(const NetworkWeights& weights) {
  std::vector<std::pair<std::string, Tensor>> out;
  auto lin = [&](const std::string& name, const LinearWeights& w) {
    out.emplace_back(name + ".weight", w.weight);
    out.emplace_back(name + ".bias", w.bias);
  };
  auto ln = [&](const std::string& name, const NormWeights& w) {
    out.emplace_back(name + ".gamma", w.gamma);
    out.emplace_back(name + ".beta", w.beta);
  };
  auto attn = [&](const std::string& name, const AttentionWeights& w) {
    lin(name + ".q", w.q);
    lin(name + ".k", w.k);
    lin(name + ".v", w.v);
    lin(name + ".o", w.o);
  };
  auto stack = [&](const std::string& prefix, const StackWeights& s, bool decoder) {
    out.emplace_back(prefix + ".tok_emb", s.tok_emb);
    out.emplace_back(prefix + ".pos_emb", s.pos_emb);
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      const std::string p = prefix + "." + std::to_string(l);
      const LayerWeights& lw = s.layers[l];
      ln(p + ".ln1", lw.ln1);
      attn(p + ".self_attn", lw.self_attn);
      ln(p + ".ln2", lw.ln2);
      if (decoder) {
        attn(p + ".cross_attn", lw.cross_attn);
        ln(p + ".ln3", lw.ln3);
      }
      lin(p + ".fc1", lw.fc1);
      lin(p + ".fc2", lw.fc2);
    }
    ln(prefix + ".final_ln", s.final_ln);
  };
  stack("enc", weights.encoder, false);
  if (weights.decoder) stack("dec", *weights.decoder, true);
  lin("head", weights.head);
  return out;
}

}  // namespace mos
