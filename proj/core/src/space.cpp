// SPDX-License-Identifier: Apache-2.0
#include "mos/space.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <span>

#include "mos/error.hpp"

namespace mos {
namespace {

struct DimSpec {
  const char* name;
  const char* layers_dim;  // nullptr for homogeneous dims
};

constexpr DimSpec kEncoderDims[] = {
    {"layers", nullptr}, {"hidden", nullptr}, {"ffn_ratio", nullptr}, {"heads", nullptr}};

constexpr DimSpec kEncoderDecoderDims[] = {
    {"enc_embed", nullptr},          {"enc_layers", nullptr},       {"enc_ffn", "enc_layers"},
    {"enc_heads", "enc_layers"},     {"dec_embed", nullptr},        {"dec_layers", nullptr},
    {"dec_ffn", "dec_layers"},       {"dec_self_heads", "dec_layers"}, {"dec_cross_heads", "dec_layers"},
    {"dec_arbitrary", "dec_layers"}};

std::span<const DimSpec> specs_for(SpaceKind kind) {
  if (kind == SpaceKind::Encoder) return kEncoderDims;
  return kEncoderDecoderDims;
}

double mean_of(const std::vector<int>& v) {
  return static_cast<double>(std::accumulate(v.begin(), v.end(), 0LL)) / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(SpaceKind kind) { return kind == SpaceKind::Encoder ? "encoder" : "encoder-decoder"; }

SpaceKind parse_space_kind(std::string_view text) {
  if (text == "encoder") return SpaceKind::Encoder;
  if (text == "encoder-decoder") return SpaceKind::EncoderDecoder;
  throw ConfigError("unknown search space kind '" + std::string(text) + "'");
}

int attended_layers(int arbitrary_value) {
  if (arbitrary_value == -1) return 1;
  if (arbitrary_value >= 1) return arbitrary_value + 1;
  throw ConfigError("arbitrary attention value must be -1 or >= 1, got " + std::to_string(arbitrary_value));
}

std::int64_t linear_param_count(std::int64_t n_out, std::int64_t n_in, bool bias) {
  return n_out * n_in + (bias ? n_out : 0);
}

std::int64_t parameter_count(const ArchShape& shape, const FixedDims& fixed) {
  const std::int64_t V = fixed.vocab_size, S = fixed.max_seq_len, d = fixed.head_dim;
  const std::int64_t he = shape.enc_hidden;
  std::int64_t total = V * he + S * he;
  for (const LayerShape& l : shape.encoder) {
    const std::int64_t inner = l.heads * d;
    total += 2 * he + 3 * linear_param_count(inner, he) + linear_param_count(he, inner);
    total += 2 * he + linear_param_count(l.ffn, he) + linear_param_count(he, l.ffn);
  }
  total += 2 * he;
  if (!shape.has_decoder()) return total + linear_param_count(V, he);

  const std::int64_t hd = shape.dec_hidden;
  total += V * hd + S * hd;
  for (const LayerShape& l : shape.decoder) {
    const std::int64_t self_inner = l.heads * d;
    const std::int64_t cross_inner = l.cross_heads * d;
    total += 2 * hd + 3 * linear_param_count(self_inner, hd) + linear_param_count(hd, self_inner);
    total += 2 * hd + linear_param_count(cross_inner, hd) + 2 * linear_param_count(cross_inner, he) +
             linear_param_count(hd, cross_inner);
    total += 2 * hd + linear_param_count(l.ffn, hd) + linear_param_count(hd, l.ffn);
  }
  total += 2 * hd;
  return total + linear_param_count(V, hd);
}

SearchSpace::SearchSpace(SpaceKind kind, const std::map<std::string, std::vector<int>>& values, FixedDims fixed)
    : kind_(kind), fixed_(fixed) {
  if (fixed_.vocab_size < 4) throw ConfigError("vocab_size must be >= 4");
  if (fixed_.max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
  if (fixed_.head_dim < 1) throw ConfigError("head_dim must be >= 1");

  auto specs = specs_for(kind);
  for (const auto& [name, _] : values) {
    bool known = std::any_of(specs.begin(), specs.end(), [&](const DimSpec& s) { return name == s.name; });
    if (!known) throw ConfigError("dim '" + name + "' is not part of a " + to_string(kind) + " space");
  }
  for (const DimSpec& spec : specs) {
    auto it = values.find(spec.name);
    if (it == values.end()) throw ConfigError(std::string("missing dim '") + spec.name + "'");
    const auto& set = it->second;
    if (set.empty()) throw ConfigError(std::string("dim '") + spec.name + "' has no values");
    for (std::size_t i = 1; i < set.size(); ++i) {
      if (set[i] <= set[i - 1]) {
        throw ConfigError(std::string("dim '") + spec.name + "' must be sorted ascending without duplicates");
      }
    }
    bool signed_dim = std::string_view(spec.name) == "dec_arbitrary";
    if (!signed_dim && set.front() < 1) throw ConfigError(std::string("dim '") + spec.name + "' must be positive");
    Dim dim{spec.name, set, 1, 0};
    if (spec.layers_dim) dim.slots = static_cast<std::size_t>(values.at(spec.layers_dim).back());
    dims_.push_back(std::move(dim));
  }
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    dims_[i].offset = gene_count_;
    gene_count_ += dims_[i].slots;
    gene_dim_.insert(gene_dim_.end(), dims_[i].slots, i);
  }
  if (kind_ == SpaceKind::EncoderDecoder) {
    int min_enc_layers = dim("enc_layers").values.front();
    for (int v : dim("dec_arbitrary").values) {
      if (attended_layers(v) > min_enc_layers) {
        throw ConfigError("dec_arbitrary value " + std::to_string(v) + " attends more encoder layers than " +
                          std::to_string(min_enc_layers));
      }
    }
  }
  if (cardinality() <= 1.0) throw ConfigError("search space must contain more than one architecture");

  if (kind_ == SpaceKind::Encoder) {
    for (const Dim& d : dims_) {
      enc_min_.push_back(d.values.front());
      enc_max_.push_back(d.values.back());
    }
  } else {
    for (const char* name : {"enc_embed", "enc_layers", "enc_ffn", "enc_heads", "dec_embed", "dec_layers", "dec_ffn",
                             "dec_self_heads", "dec_cross_heads", "dec_arbitrary"}) {
      enc_min_.push_back(dim(name).values.front());
      enc_max_.push_back(dim(name).values.back());
    }
  }
}

SearchSpace SearchSpace::encoder_default(FixedDims fixed) {
  return SearchSpace(SpaceKind::Encoder,
                     {{"layers", {2, 3, 4}}, {"hidden", {16, 32, 48, 64}}, {"ffn_ratio", {2, 3, 4}}, {"heads", {2, 4}}},
                     fixed);
}

SearchSpace SearchSpace::encoder_decoder_default(FixedDims fixed) {
  return SearchSpace(SpaceKind::EncoderDecoder,
                     {{"enc_embed", {16, 32}},
                      {"enc_layers", {2, 3}},
                      {"enc_ffn", {32, 64, 96}},
                      {"enc_heads", {2, 4}},
                      {"dec_embed", {16, 32}},
                      {"dec_layers", {1, 2}},
                      {"dec_ffn", {32, 64, 96}},
                      {"dec_self_heads", {2, 4}},
                      {"dec_cross_heads", {2, 4}},
                      {"dec_arbitrary", {-1, 1}}},
                     fixed);
}

const Dim& SearchSpace::dim(std::string_view name) const {
  for (const Dim& d : dims_) {
    if (d.name == name) return d;
  }
  throw ArgumentError("search space has no dim '" + std::string(name) + "'");
}

double SearchSpace::cardinality() const {
  double n = 1.0;
  for (const Dim& d : dims_) {
    for (std::size_t s = 0; s < d.slots; ++s) n *= static_cast<double>(d.values.size());
  }
  return n;
}

int SearchSpace::value(const ArchDescriptor& arch, std::string_view name, std::size_t slot) const {
  const Dim& d = dim(name);
  if (slot >= d.slots) throw ArgumentError("slot out of range for dim '" + d.name + "'");
  if (arch.genes.size() != gene_count_) throw MembershipError("descriptor has wrong gene count");
  return arch.genes[d.offset + slot];
}

void SearchSpace::set(ArchDescriptor& arch, std::string_view name, std::size_t slot, int v) const {
  const Dim& d = dim(name);
  if (slot >= d.slots) throw ArgumentError("slot out of range for dim '" + d.name + "'");
  arch.genes.at(d.offset + slot) = v;
}

const std::vector<int>& SearchSpace::gene_values(std::size_t gene) const { return dims_.at(gene_dim_.at(gene)).values; }

bool SearchSpace::contains(const ArchDescriptor& arch) const {
  if (arch.genes.size() != gene_count_) return false;
  for (std::size_t g = 0; g < gene_count_; ++g) {
    const auto& set = gene_values(g);
    if (!std::binary_search(set.begin(), set.end(), arch.genes[g])) return false;
  }
  return true;
}

void SearchSpace::require_member(const ArchDescriptor& arch) const {
  if (arch.genes.size() != gene_count_) {
    throw MembershipError("descriptor has " + std::to_string(arch.genes.size()) + " genes, space expects " +
                          std::to_string(gene_count_));
  }
  for (std::size_t g = 0; g < gene_count_; ++g) {
    const auto& set = gene_values(g);
    if (!std::binary_search(set.begin(), set.end(), arch.genes[g])) {
      throw MembershipError("value " + std::to_string(arch.genes[g]) + " is not in dim '" + dims_[gene_dim_[g]].name +
                            "'");
    }
  }
}

ArchDescriptor SearchSpace::sample_random(Rng& rng) const {
  ArchDescriptor a;
  a.genes.resize(gene_count_);
  for (std::size_t g = 0; g < gene_count_; ++g) {
    const auto& set = gene_values(g);
    a.genes[g] = set[uniform_index(rng, set.size())];
  }
  return a;
}

ArchDescriptor SearchSpace::sample_big() const {
  ArchDescriptor a;
  for (std::size_t g = 0; g < gene_count_; ++g) a.genes.push_back(gene_values(g).back());
  return a;
}

ArchDescriptor SearchSpace::sample_small() const {
  ArchDescriptor a;
  for (std::size_t g = 0; g < gene_count_; ++g) a.genes.push_back(gene_values(g).front());
  return a;
}

std::vector<ArchDescriptor> SearchSpace::enumerate(std::size_t limit) const {
  if (cardinality() > static_cast<double>(limit)) {
    throw ArgumentError("search space too large to enumerate (" + std::to_string(cardinality()) + " > " +
                        std::to_string(limit) + ")");
  }
  std::vector<ArchDescriptor> out;
  std::vector<std::size_t> idx(gene_count_, 0);
  while (true) {
    ArchDescriptor a;
    for (std::size_t g = 0; g < gene_count_; ++g) a.genes.push_back(gene_values(g)[idx[g]]);
    out.push_back(std::move(a));
    std::size_t g = gene_count_;
    while (g > 0) {
      --g;
      if (++idx[g] < gene_values(g).size()) break;
      idx[g] = 0;
      if (g == 0) return out;
    }
  }
}

ArchShape SearchSpace::shape(const ArchDescriptor& arch) const {
  require_member(arch);
  ArchShape s;
  if (kind_ == SpaceKind::Encoder) {
    s.enc_hidden = value(arch, "hidden");
    int layers = value(arch, "layers");
    LayerShape l;
    l.ffn = value(arch, "ffn_ratio") * s.enc_hidden;
    l.heads = value(arch, "heads");
    s.encoder.assign(static_cast<std::size_t>(layers), l);
    return s;
  }
  s.enc_hidden = value(arch, "enc_embed");
  for (int i = 0; i < value(arch, "enc_layers"); ++i) {
    LayerShape l;
    l.ffn = value(arch, "enc_ffn", i);
    l.heads = value(arch, "enc_heads", i);
    s.encoder.push_back(l);
  }
  s.dec_hidden = value(arch, "dec_embed");
  for (int i = 0; i < value(arch, "dec_layers"); ++i) {
    LayerShape l;
    l.ffn = value(arch, "dec_ffn", i);
    l.heads = value(arch, "dec_self_heads", i);
    l.cross_heads = value(arch, "dec_cross_heads", i);
    l.attend_layers = attended_layers(value(arch, "dec_arbitrary", i));
    s.decoder.push_back(l);
  }
  return s;
}

std::size_t SearchSpace::encoding_size() const { return enc_min_.size(); }

std::vector<double> SearchSpace::raw_encoding(const ArchDescriptor& arch) const {
  if (kind_ == SpaceKind::Encoder) {
    std::vector<double> raw;
    for (int g : arch.genes) raw.push_back(g);
    return raw;
  }
  auto active = [&](const char* name, int layers) {
    std::vector<int> v;
    for (int i = 0; i < layers; ++i) v.push_back(value(arch, name, i));
    return mean_of(v);
  };
  int el = value(arch, "enc_layers");
  int dl = value(arch, "dec_layers");
  return {static_cast<double>(value(arch, "enc_embed")),
          static_cast<double>(el),
          active("enc_ffn", el),
          active("enc_heads", el),
          static_cast<double>(value(arch, "dec_embed")),
          static_cast<double>(dl),
          active("dec_ffn", dl),
          active("dec_self_heads", dl),
          active("dec_cross_heads", dl),
          active("dec_arbitrary", dl)};
}

ArchEncoding SearchSpace::encode(const ArchDescriptor& arch) const {
  require_member(arch);
  ArchEncoding e;
  e.raw = raw_encoding(arch);
  e.normalized.resize(e.raw.size());
  for (std::size_t i = 0; i < e.raw.size(); ++i) {
    double span = enc_max_[i] - enc_min_[i];
    e.normalized[i] = span > 0.0 ? (e.raw[i] - enc_min_[i]) / span : 0.0;
  }
  return e;
}

std::int64_t SearchSpace::parameter_count(const ArchDescriptor& arch) const {
  return mos::parameter_count(shape(arch), fixed_);
}

std::string SearchSpace::format(const ArchDescriptor& arch) const {
  require_member(arch);
  std::ostringstream out;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out << ' ';
    out << dims_[i].name << '=';
    for (std::size_t s = 0; s < dims_[i].slots; ++s) {
      if (s) out << '/';
      out << arch.genes[dims_[i].offset + s];
    }
  }
  return out.str();
}

ArchDescriptor SearchSpace::parse(std::string_view text) const {
  ArchDescriptor a;
  a.genes.assign(gene_count_, 0);
  std::vector<bool> seen(dims_.size(), false);
  std::string normalized(text);
  std::replace(normalized.begin(), normalized.end(), ',', ' ');
  std::istringstream in(normalized);
  std::string field;
  while (in >> field) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw ArgumentError("architecture field '" + field + "' lacks '='");
    std::string name = field.substr(0, eq);
    std::size_t di = std::find_if(dims_.begin(), dims_.end(), [&](const Dim& d) { return d.name == name; }) -
                     dims_.begin();
    if (di == dims_.size()) throw ArgumentError("unknown architecture field '" + name + "'");
    std::vector<int> vals;
    std::istringstream vs(field.substr(eq + 1));
    std::string item;
    while (std::getline(vs, item, '/')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stoi(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ArgumentError("bad value '" + item + "' for field '" + name + "'");
      }
    }
    const Dim& d = dims_[di];
    if (vals.empty() || vals.size() > d.slots) throw ArgumentError("wrong number of values for field '" + name + "'");
    for (std::size_t s = 0; s < d.slots; ++s) a.genes[d.offset + s] = vals[std::min(s, vals.size() - 1)];
    seen[di] = true;
  }
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (!seen[i]) throw ArgumentError("architecture is missing field '" + dims_[i].name + "'");
  }
  require_member(a);
  return a;
}

nlohmann::json SearchSpace::to_json() const {
  nlohmann::json dims = nlohmann::json::object();
  for (const Dim& d : dims_) dims[d.name] = d.values;
  return {{"kind", to_string(kind_)},
          {"dims", dims},
          {"vocab_size", fixed_.vocab_size},
          {"max_seq_len", fixed_.max_seq_len},
          {"head_dim", fixed_.head_dim}};
}

SearchSpace SearchSpace::from_json(const nlohmann::json& j) {
  try {
    FixedDims fixed;
    fixed.vocab_size = j.value("vocab_size", fixed.vocab_size);
    fixed.max_seq_len = j.value("max_seq_len", fixed.max_seq_len);
    fixed.head_dim = j.value("head_dim", fixed.head_dim);
    SpaceKind kind = parse_space_kind(j.at("kind").get<std::string>());
    if (!j.contains("dims")) {
      return kind == SpaceKind::Encoder ? encoder_default(fixed) : encoder_decoder_default(fixed);
    }
    return SearchSpace(kind, j.at("dims").get<std::map<std::string, std::vector<int>>>(), fixed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed search space: ") + e.what());
  }
}

bool SearchSpace::operator==(const SearchSpace& other) const {
  if (kind_ != other.kind_ || !(fixed_ == other.fixed_) || dims_.size() != other.dims_.size()) return false;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i].name != other.dims_[i].name || dims_[i].values != other.dims_[i].values) return false;
  }
  return true;
}

}  // namespace mos
