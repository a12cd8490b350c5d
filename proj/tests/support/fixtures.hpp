// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "mos/random.hpp"
#include "mos/space.hpp"
#include "mos/transformer.hpp"

namespace mos::testing {

/// Random tokens with every position predicted; tgt_in is filled for
/// encoder-decoder spaces.
inline Batch random_batch(const SearchSpace& space, std::size_t batch, std::size_t seq_len, Rng& rng) {
  const std::size_t V = static_cast<std::size_t>(space.fixed().vocab_size);
  Batch b;
  b.batch = batch;
  b.seq_len = seq_len;
  for (std::size_t i = 0; i < batch * seq_len; ++i) {
    b.src.push_back(static_cast<int>(uniform_index(rng, V)));
    b.labels.push_back(static_cast<int>(uniform_index(rng, V)));
    if (space.kind() == SpaceKind::EncoderDecoder) b.tgt_in.push_back(static_cast<int>(uniform_index(rng, V)));
  }
  b.mask.assign(batch * seq_len, 1);
  return b;
}

/// Small spaces keep finite-difference sweeps quick.
inline SearchSpace toy_encoder_space() {
  return SearchSpace(SpaceKind::Encoder, {{"layers", {1, 2}}, {"hidden", {8, 16}}, {"ffn_ratio", {1, 2}}, {"heads", {1, 2}}},
                     FixedDims{8, 4, 4});
}

inline SearchSpace toy_encoder_decoder_space() {
  return SearchSpace(SpaceKind::EncoderDecoder,
                     {{"enc_embed", {8, 16}},
                      {"enc_layers", {2}},
                      {"enc_ffn", {8, 16}},
                      {"enc_heads", {1, 2}},
                      {"dec_embed", {8, 16}},
                      {"dec_layers", {1, 2}},
                      {"dec_ffn", {8, 16}},
                      {"dec_self_heads", {1, 2}},
                      {"dec_cross_heads", {1, 2}},
                      {"dec_arbitrary", {-1, 1}}},
                     FixedDims{8, 4, 4});
}

/// max |a - b| / (1 + |b|) element-wise.
inline double max_scaled_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / (1.0 + std::abs(b[i])));
  }
  return worst;
}

}  // namespace mos::testing
