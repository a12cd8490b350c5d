// SPDX-License-Identifier: Apache-2.0
//
// Binary named-tensor container.
//
//   "MOSC"            4 bytes
//   version           u32
//   metadata length   u64, followed by compact JSON with sorted keys
//   tensor count      u32
//   per tensor        u32 name length, name, u8 dtype, u32 rank,
//                     u64 dims[rank], u64 payload offset
//   payload           little-endian values, tensors back to back
//
// All integers are little-endian. Encoding is a pure function of the
// container, so decode followed by encode reproduces the input bytes.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mos/supernet.hpp"
#include "mos/tensor.hpp"
#include "mos/training.hpp"

namespace mos {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Dtype : std::uint8_t { F64 = 0, F32 = 1 };
std::string to_string(Dtype dtype);
Dtype parse_dtype(std::string_view text);

struct TensorRecord {
  std::string name;
  Dtype dtype = Dtype::F64;
  Shape shape;
  std::vector<double> values;  // already rounded to dtype
};

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  /// Appends a tensor; values are rounded through float for F32. Throws
  /// ArgumentError on a duplicate name or a size/shape mismatch.
  void add(std::string name, Shape shape, std::vector<double> values, Dtype dtype = Dtype::F64);
  const TensorRecord* find(std::string_view name) const;
  /// Throws FormatError when missing.
  const TensorRecord& at(std::string_view name) const;
  /// metadata["kind"], or "" when absent.
  std::string kind() const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError on bad magic, unknown version or dtype, truncation,
/// duplicate names, or overlapping / out-of-range tensor payloads.
Checkpoint decode_checkpoint(std::string_view bytes);

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);
std::string read_file_bytes(const std::string& path);

/// Optimizer, RNG and curve state stored alongside a model so a run can be
/// continued exactly.
struct TrainingRecord {
  TrainConfig config;
  SyntheticTask task;
  TrainState state;
};

Checkpoint to_checkpoint(const SupernetModel& model, const TrainingRecord* record = nullptr,
                         Dtype dtype = Dtype::F64);
Checkpoint to_checkpoint(const StaticModel& model, const TrainingRecord* record = nullptr, Dtype dtype = Dtype::F64);

/// Throws FormatError if the checkpoint is not of the expected kind or a
/// parameter is missing or misshapen.
SupernetModel supernet_from_checkpoint(const Checkpoint& checkpoint);
StaticModel static_from_checkpoint(const Checkpoint& checkpoint);
std::optional<TrainingRecord> training_record(const Checkpoint& checkpoint);

}  // namespace mos
