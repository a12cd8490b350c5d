// SPDX-License-Identifier: Apache-2.0
//
// Architecture search spaces, architecture descriptors and their encodings.
//
// A descriptor is a flat vector of genes. Homogeneous dims contribute one
// gene; per-layer dims contribute one gene per layer slot (genes of inactive
// layers are carried along but ignored, as in HAT-style spaces).
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "mos/random.hpp"

namespace mos {

enum class SpaceKind { Encoder, EncoderDecoder };

std::string to_string(SpaceKind kind);
SpaceKind parse_space_kind(std::string_view text);

struct Dim {
  std::string name;
  std::vector<int> values;  // sorted ascending, unique
  std::size_t slots = 1;    // > 1 for per-layer dims
  std::size_t offset = 0;   // first gene index
};

/// Dimensions that are not searched but shape every network in the space.
struct FixedDims {
  int vocab_size = 32;
  int max_seq_len = 16;
  int head_dim = 8;

  bool operator==(const FixedDims&) const = default;
};

struct ArchDescriptor {
  std::vector<int> genes;

  auto operator<=>(const ArchDescriptor&) const = default;
};

/// Concrete per-layer sizes of one architecture.
struct LayerShape {
  int ffn = 0;
  int heads = 0;
  int cross_heads = 0;    // decoder layers only
  int attend_layers = 0;  // decoder layers only: number of trailing encoder layers attended

  bool operator==(const LayerShape&) const = default;
};

struct ArchShape {
  int enc_hidden = 0;
  std::vector<LayerShape> encoder;
  int dec_hidden = 0;
  std::vector<LayerShape> decoder;

  bool has_decoder() const { return !decoder.empty(); }
  bool operator==(const ArchShape&) const = default;
};

struct ArchEncoding {
  std::vector<double> raw;
  std::vector<double> normalized;
};

class SearchSpace {
 public:
  /// values maps dim name to its value set. Encoder spaces need layers,
  /// hidden, ffn_ratio and heads; encoder-decoder spaces need enc_embed,
  /// enc_layers, enc_ffn, enc_heads, dec_embed, dec_layers, dec_ffn,
  /// dec_self_heads, dec_cross_heads and dec_arbitrary.
  SearchSpace(SpaceKind kind, const std::map<std::string, std::vector<int>>& values, FixedDims fixed = {});

  /// layers {2,3,4}, hidden {16,32,48,64}, ffn_ratio {2,3,4}, heads {2,4}: 72 architectures.
  static SearchSpace encoder_default(FixedDims fixed = {});
  /// Encoder-decoder space mirroring the HAT dimensions at 1/32 width.
  static SearchSpace encoder_decoder_default(FixedDims fixed = {});

  SpaceKind kind() const { return kind_; }
  const FixedDims& fixed() const { return fixed_; }
  const std::vector<Dim>& dims() const { return dims_; }
  const Dim& dim(std::string_view name) const;
  std::size_t gene_count() const { return gene_count_; }
  /// Number of distinct descriptors (product of gene set sizes).
  double cardinality() const;

  int value(const ArchDescriptor& arch, std::string_view dim, std::size_t slot = 0) const;
  void set(ArchDescriptor& arch, std::string_view dim, std::size_t slot, int value) const;
  bool contains(const ArchDescriptor& arch) const;
  /// Throws MembershipError naming the offending gene.
  void require_member(const ArchDescriptor& arch) const;
  /// Value set governing gene i.
  const std::vector<int>& gene_values(std::size_t gene) const;

  ArchDescriptor sample_random(Rng& rng) const;
  ArchDescriptor sample_big() const;
  ArchDescriptor sample_small() const;
  /// Every descriptor in lexicographic gene order. Throws if more than limit.
  std::vector<ArchDescriptor> enumerate(std::size_t limit = 1'000'000) const;

  ArchShape shape(const ArchDescriptor& arch) const;
  /// Largest per-layer sizes; what a supernet over this space must allocate.
  ArchShape max_shape() const { return shape(sample_big()); }

  std::size_t encoding_size() const;
  ArchEncoding encode(const ArchDescriptor& arch) const;
  const std::vector<double>& encoding_min() const { return enc_min_; }
  const std::vector<double>& encoding_max() const { return enc_max_; }

  std::int64_t parameter_count(const ArchDescriptor& arch) const;

  /// "layers=2 hidden=32 ffn_ratio=4 heads=2"; per-layer genes join with '/'.
  std::string format(const ArchDescriptor& arch) const;
  /// Accepts format() output; ',' also separates fields. Missing per-layer
  /// slots repeat the last given value.
  ArchDescriptor parse(std::string_view text) const;

  nlohmann::json to_json() const;
  static SearchSpace from_json(const nlohmann::json& j);

  bool operator==(const SearchSpace& other) const;

 private:
  std::vector<double> raw_encoding(const ArchDescriptor& arch) const;

  SpaceKind kind_;
  FixedDims fixed_;
  std::vector<Dim> dims_;
  std::vector<std::size_t> gene_dim_;
  std::size_t gene_count_ = 0;
  std::vector<double> enc_min_, enc_max_;
};

/// Weight plus optional bias of one n_out x n_in linear map.
std::int64_t linear_param_count(std::int64_t n_out, std::int64_t n_in, bool bias = true);
/// Exact parameter count of the static network with this shape.
std::int64_t parameter_count(const ArchShape& shape, const FixedDims& fixed);

/// Number of encoder layers attended for an arbitrary-attention gene value:
/// -1 means the last layer, k >= 1 means the last k+1 layers.
int attended_layers(int arbitrary_value);

}  // namespace mos
