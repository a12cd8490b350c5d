// SPDX-License-Identifier: Apache-2.0
//
// Synthetic tasks, the Adam optimizer, and the SPOS / sandwich supernet
// training rules plus standalone training of a single architecture.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mos/params.hpp"
#include "mos/random.hpp"
#include "mos/supernet.hpp"

namespace mos {

enum class TaskKind { MaskedToken, SeqCopyReverse };
std::string to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

/// Token sequences from a fixed random successor chain: each token is
/// followed by its successor with probability `coherence`, otherwise by a
/// uniform token. The chain is derived from `seed`, so masked tokens are
/// predictable from their neighbours.
struct SyntheticTask {
  TaskKind kind = TaskKind::MaskedToken;
  int vocab_size = 32;
  int seq_len = 16;
  double mask_prob = 0.15;
  double coherence = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
  /// Reserved token: the mask symbol (masked-token) or BOS (seq-copy-reverse).
  int special_token() const { return vocab_size - 1; }
  nlohmann::json to_json() const;
  static SyntheticTask from_json(const nlohmann::json& j);
  bool operator==(const SyntheticTask&) const = default;
};

/// Masked-token: src has the mask token where mask is set, labels hold the
/// original tokens. At least one and at most seq_len - 1 positions are masked.
/// Seq-copy-reverse: labels are the reversed source; tgt_in is BOS followed
/// by the labels shifted right; every position is predicted.
Batch make_batch(const SyntheticTask& task, std::size_t batch_size, Rng& rng);
/// `count` batches drawn from a stream keyed by the task seed only, so every
/// model evaluated against the same task sees the same data.
std::vector<Batch> validation_set(const SyntheticTask& task, std::size_t batch_size, std::size_t count = 16);

enum class Schedule { Constant, Cosine };
enum class TrainRule { Spos, Sandwich };
std::string to_string(Schedule s);
std::string to_string(TrainRule r);
Schedule parse_schedule(std::string_view text);
TrainRule parse_train_rule(std::string_view text);

struct TrainConfig {
  std::int64_t steps = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::int64_t warmup_steps = 100;
  Schedule schedule = Schedule::Constant;
  TrainRule rule = TrainRule::Sandwich;
  std::uint64_t seed = 0;
  std::size_t experts = 2;  // m
  std::size_t router_hidden = 128;
  double label_smoothing = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

/// Learning rate for 0-based step: linear warmup to learning_rate over
/// warmup_steps, then constant or cosine decay to zero at `steps`.
double learning_rate_at(const TrainConfig& config, std::int64_t step);

/// Adam with per-parameter step counts. Parameters without a gradient buffer
/// are skipped entirely: their values and moments stay untouched.
class Adam {
 public:
  struct Slot {
    std::int64_t t = 0;
    std::vector<double> m, v;
  };

  explicit Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params, double lr);
  /// Number of step() calls so far.
  std::int64_t updates() const { return updates_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

  void restore(std::int64_t updates, std::map<std::string, Slot> slots) {
    updates_ = updates;
    slots_ = std::move(slots);
  }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t updates_ = 0;
  std::map<std::string, Slot> slots_;
};

struct LossRow {
  std::int64_t step = 0;
  std::optional<double> loss_rand, loss_big, loss_small;
};

/// Everything needed to continue a run bit-for-bit.
struct TrainState {
  std::int64_t step = 0;  // completed steps
  Rng rng;
  Adam optimizer;
  std::vector<LossRow> curve;
};

TrainState initial_train_state(const TrainConfig& config);

/// One SPOS step: sample a_rand, backward, one update. Grads are cleared
/// before returning.
double spos_step(SupernetModel& model, const Batch& batch, Adam& optimizer, Rng& rng, double lr,
                 std::int64_t step = 0, double smoothing = 0.0);

struct SandwichLosses {
  double rand = 0, big = 0, small = 0;
};

/// Backward through a_rand, a_big and a_small on one batch, accumulating
/// gradients, then a single optimizer update.
SandwichLosses sandwich_step(SupernetModel& model, const Batch& batch, Adam& optimizer, Rng& rng, double lr,
                             std::int64_t step = 0, double smoothing = 0.0);

/// Runs steps [state.step, config.steps). Rows are appended to state.curve.
/// When curve_csv is set the curve is written there on success and on error
/// (partial curve) before the error propagates.
void train(SupernetModel& model, const SyntheticTask& task, const TrainConfig& config, TrainState& state,
           const std::string& curve_csv = "");

/// Trains a fresh static model of `arch` with the same optimizer and
/// schedule; losses go to the loss_rand column.
void train_standalone(StaticModel& model, const SyntheticTask& task, const TrainConfig& config, TrainState& state,
                      const std::string& curve_csv = "");

void write_loss_curve(const std::string& path, const std::vector<LossRow>& curve);

/// Mean loss over the batches, without recording a graph.
double validation_loss(const SupernetModel& model, const ArchDescriptor& arch, const std::vector<Batch>& batches);
double validation_loss(const StaticModel& model, const std::vector<Batch>& batches);

}  // namespace mos
