// SPDX-License-Identifier: Apache-2.0
#include "mos/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include "mos/error.hpp"

namespace mos {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'S', 'C'};

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() {
    auto s = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  std::uint64_t u64() {
    auto s = bytes(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw FormatError("checkpoint truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::size_t element_size(Dtype dtype) { return dtype == Dtype::F64 ? 8 : 4; }

std::size_t checked_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) throw FormatError("tensor shape overflows");
    n *= d;
  }
  return n;
}

void add_parameters(Checkpoint& ckpt, const ParameterSet& params, Dtype dtype) {
  for (const auto& [name, t] : params) ckpt.add(name, t.shape(), t.to_vector(), dtype);
}

ParameterSet read_parameters(const Checkpoint& ckpt, const std::vector<std::string>& names) {
  ParameterSet params;
  for (const std::string& name : names) {
    const TensorRecord& rec = ckpt.at(name);
    params.add(name, Tensor::parameter(rec.shape, rec.values));
  }
  return params;
}

constexpr const char* kCurve = "train.curve";
constexpr const char* kMoment1 = "optimizer.m.";
constexpr const char* kMoment2 = "optimizer.v.";

void add_record(Checkpoint& ckpt, const TrainingRecord& record) {
  nlohmann::json steps = nlohmann::json::object();
  for (const auto& [name, slot] : record.state.optimizer.slots()) {
    steps[name] = slot.t;
    ckpt.add(kMoment1 + name, {slot.m.size()}, slot.m);
    ckpt.add(kMoment2 + name, {slot.v.size()}, slot.v);
  }
  ckpt.metadata["train"] = {{"config", record.config.to_json()},
                            {"task", record.task.to_json()},
                            {"step", record.state.step},
                            {"rng", save_rng(record.state.rng)},
                            {"optimizer", {{"updates", record.state.optimizer.updates()}, {"steps", steps}}}};
  const double blank = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> curve;
  for (const LossRow& row : record.state.curve) {
    curve.push_back(static_cast<double>(row.step));
    curve.push_back(row.loss_rand.value_or(blank));
    curve.push_back(row.loss_big.value_or(blank));
    curve.push_back(row.loss_small.value_or(blank));
  }
  ckpt.add(kCurve, {record.state.curve.size(), 4}, std::move(curve));
}

std::optional<double> present(double v) { return std::isnan(v) ? std::nullopt : std::optional<double>(v); }

}  // namespace

std::string to_string(Dtype dtype) { return dtype == Dtype::F64 ? "f64" : "f32"; }

Dtype parse_dtype(std::string_view text) {
  if (text == "f64") return Dtype::F64;
  if (text == "f32") return Dtype::F32;
  throw ConfigError("unknown dtype '" + std::string(text) + "' (expected f64 or f32)");
}

void Checkpoint::add(std::string name, Shape shape, std::vector<double> values, Dtype dtype) {
  if (find(name)) throw ArgumentError("duplicate checkpoint tensor '" + name + "'");
  if (shape_size(shape) != values.size()) {
    throw ArgumentError("tensor '" + name + "' has " + std::to_string(values.size()) + " values for shape " +
                        shape_string(shape));
  }
  if (dtype == Dtype::F32) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
  tensors.push_back({std::move(name), dtype, std::move(shape), std::move(values)});
}

const TensorRecord* Checkpoint::find(std::string_view name) const {
  for (const TensorRecord& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const TensorRecord& Checkpoint::at(std::string_view name) const {
  const TensorRecord* t = find(name);
  if (!t) throw FormatError("checkpoint has no tensor '" + std::string(name) + "'");
  return *t;
}

std::string Checkpoint::kind() const {
  auto it = metadata.find("kind");
  return it != metadata.end() && it->is_string() ? it->get<std::string>() : "";
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  std::string meta = ckpt.metadata.dump();
  w.u64(meta.size());
  w.bytes(meta);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const TensorRecord& t : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u64(d);
    w.u64(offset);
    offset += t.values.size() * element_size(t.dtype);
  }
  for (const TensorRecord& t : ckpt.tensors) {
    for (double v : t.values) {
      if (t.dtype == Dtype::F64) {
        w.f64(v);
      } else {
        w.f32(static_cast<float>(v));
      }
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || r.bytes(4) != std::string_view(kMagic, 4)) throw FormatError("not a checkpoint (bad magic)");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  std::uint64_t meta_len = r.u64();
  if (meta_len > r.remaining()) throw FormatError("checkpoint truncated");
  try {
    ckpt.metadata = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  if (!ckpt.metadata.is_object()) throw FormatError("checkpoint metadata is not an object");

  struct Entry {
    std::uint64_t offset, bytes;
  };
  std::uint32_t count = r.u32();
  std::vector<Entry> entries;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = std::string(r.bytes(r.u32()));
    if (!names.insert(t.name).second) throw FormatError("duplicate tensor '" + t.name + "'");
    std::uint8_t tag = r.u8();
    if (tag > 1) throw FormatError("unknown dtype tag " + std::to_string(tag) + " for '" + t.name + "'");
    t.dtype = static_cast<Dtype>(tag);
    std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("tensor '" + t.name + "' has rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u64());
    std::size_t n = checked_size(t.shape);
    if (n > bytes.size()) throw FormatError("tensor '" + t.name + "' larger than the file");
    entries.push_back({r.u64(), n * element_size(t.dtype)});
    ckpt.tensors.push_back(std::move(t));
  }

  std::size_t payload = r.position();
  std::size_t payload_size = r.remaining();
  std::uint64_t expected = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    // Payloads are contiguous in table order; anything else is overlap or a gap.
    if (entries[i].offset != expected) {
      throw FormatError("tensor '" + ckpt.tensors[i].name + "' payload overlaps or is misplaced");
    }
    expected += entries[i].bytes;
  }
  if (expected != payload_size) throw FormatError("checkpoint payload size mismatch");

  for (std::size_t i = 0; i < entries.size(); ++i) {
    TensorRecord& t = ckpt.tensors[i];
    Reader p(bytes.substr(payload + entries[i].offset, entries[i].bytes));
    std::size_t n = shape_size(t.shape);
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      t.values[k] = t.dtype == Dtype::F64 ? std::bit_cast<double>(p.u64())
                                          : static_cast<double>(std::bit_cast<float>(p.u32()));
    }
  }
  return ckpt;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::string bytes = encode_checkpoint(checkpoint);
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

Checkpoint to_checkpoint(const SupernetModel& model, const TrainingRecord* record, Dtype dtype) {
  Checkpoint ckpt;
  ckpt.metadata["kind"] = "supernet";
  ckpt.metadata["space"] = model.space().to_json();
  ckpt.metadata["supernet"] = model.config().to_json();
  ckpt.metadata["dtype"] = to_string(dtype);
  add_parameters(ckpt, model.parameters(), dtype);
  if (record) add_record(ckpt, *record);
  return ckpt;
}

Checkpoint to_checkpoint(const StaticModel& model, const TrainingRecord* record, Dtype dtype) {
  Checkpoint ckpt;
  ckpt.metadata["kind"] = "static";
  ckpt.metadata["space"] = model.space().to_json();
  ckpt.metadata["arch"] = model.space().format(model.arch());
  ckpt.metadata["dtype"] = to_string(dtype);
  add_parameters(ckpt, model.parameters(), dtype);
  if (record) add_record(ckpt, *record);
  return ckpt;
}

SupernetModel supernet_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind() != "supernet") throw FormatError("expected a supernet checkpoint, found '" + ckpt.kind() + "'");
  try {
    SupernetModel model(SearchSpace::from_json(ckpt.metadata.at("space")),
                        SupernetConfig::from_json(ckpt.metadata.at("supernet")));
    for (auto& [name, t] : model.parameters()) {
      const TensorRecord& rec = ckpt.at(name);
      if (rec.shape != t.shape()) {
        throw FormatError("tensor '" + name + "' has shape " + shape_string(rec.shape) + ", expected " +
                          shape_string(t.shape()));
      }
      std::copy(rec.values.begin(), rec.values.end(), t.mutable_data().begin());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed supernet metadata: ") + e.what());
  }
}

StaticModel static_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind() != "static") throw FormatError("expected a static checkpoint, found '" + ckpt.kind() + "'");
  try {
    SearchSpace space = SearchSpace::from_json(ckpt.metadata.at("space"));
    ArchDescriptor arch = space.parse(ckpt.metadata.at("arch").get<std::string>());
    std::vector<std::string> names;
    for (const ParamSpec& spec : network_layout(space.shape(arch), space.fixed())) names.push_back(spec.name);
    try {
      return StaticModel(space, arch, read_parameters(ckpt, names));
    } catch (const DimensionError& e) {
      throw FormatError(e.what());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed static metadata: ") + e.what());
  }
}

std::optional<TrainingRecord> training_record(const Checkpoint& ckpt) {
  auto it = ckpt.metadata.find("train");
  if (it == ckpt.metadata.end()) return std::nullopt;
  try {
    const nlohmann::json& j = *it;
    TrainingRecord rec;
    rec.config = TrainConfig::from_json(j.at("config"));
    rec.task = SyntheticTask::from_json(j.at("task"));
    rec.state.step = j.at("step").get<std::int64_t>();
    rec.state.rng = load_rng(j.at("rng").get<std::string>());
    std::map<std::string, Adam::Slot> slots;
    for (const auto& [name, t] : j.at("optimizer").at("steps").items()) {
      Adam::Slot slot;
      slot.t = t.get<std::int64_t>();
      slot.m = ckpt.at(kMoment1 + name).values;
      slot.v = ckpt.at(kMoment2 + name).values;
      slots.emplace(name, std::move(slot));
    }
    rec.state.optimizer.restore(j.at("optimizer").at("updates").get<std::int64_t>(), std::move(slots));
    const TensorRecord& curve = ckpt.at(kCurve);
    if (curve.shape.size() != 2 || curve.shape[1] != 4) throw FormatError("malformed loss curve tensor");
    for (std::size_t i = 0; i < curve.shape[0]; ++i) {
      const double* row = curve.values.data() + 4 * i;
      rec.state.curve.push_back(
          {static_cast<std::int64_t>(row[0]), present(row[1]), present(row[2]), present(row[3])});
    }
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed training metadata: ") + e.what());
  }
}

}  // namespace mos
