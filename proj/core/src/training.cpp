// SPDX-License-Identifier: Apache-2.0
#include "mos/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mos/csv.hpp"
#include "mos/error.hpp"
#include "mos/ops.hpp"

namespace mos {

std::string to_string(TaskKind kind) { return kind == TaskKind::MaskedToken ? "masked-token" : "seq-copy-reverse"; }

TaskKind parse_task_kind(std::string_view text) {
  if (text == "masked-token") return TaskKind::MaskedToken;
  if (text == "seq-copy-reverse") return TaskKind::SeqCopyReverse;
  throw ConfigError("unknown task kind '" + std::string(text) + "'");
}

void SyntheticTask::validate() const {
  if (vocab_size < 4) throw ConfigError("task vocab_size must be at least 4");
  if (seq_len < 2) throw ConfigError("task seq_len must be at least 2");
  if (kind == TaskKind::MaskedToken && !(mask_prob > 0.0 && mask_prob < 1.0)) {
    throw ConfigError("mask_prob must lie strictly between 0 and 1");
  }
  if (!(coherence >= 0.0 && coherence <= 1.0)) throw ConfigError("coherence must lie in [0, 1]");
}

nlohmann::json SyntheticTask::to_json() const {
  return {{"kind", to_string(kind)}, {"vocab_size", vocab_size}, {"seq_len", seq_len},
          {"mask_prob", mask_prob},  {"coherence", coherence},   {"seed", seed}};
}

SyntheticTask SyntheticTask::from_json(const nlohmann::json& j) {
  SyntheticTask t;
  t.kind = parse_task_kind(j.value("kind", to_string(t.kind)));
  t.vocab_size = j.value("vocab_size", t.vocab_size);
  t.seq_len = j.value("seq_len", t.seq_len);
  t.mask_prob = j.value("mask_prob", t.mask_prob);
  t.coherence = j.value("coherence", t.coherence);
  t.seed = j.value("seed", t.seed);
  t.validate();
  return t;
}

namespace {

std::vector<int> successor_chain(const SyntheticTask& task) {
  const int n = task.vocab_size - 1;
  std::vector<int> succ(n);
  for (int i = 0; i < n; ++i) succ[i] = i;
  Rng rng = derive_rng(task.seed, "successor-chain");
  for (int i = n - 1; i > 0; --i) std::swap(succ[i], succ[uniform_index(rng, static_cast<std::size_t>(i) + 1)]);
  return succ;
}

void fill_sequence(const SyntheticTask& task, const std::vector<int>& succ, Rng& rng, int* out) {
  const std::size_t n = static_cast<std::size_t>(task.vocab_size - 1);
  int prev = static_cast<int>(uniform_index(rng, n));
  out[0] = prev;
  for (int t = 1; t < task.seq_len; ++t) {
    prev = bernoulli(rng, task.coherence) ? succ[prev] : static_cast<int>(uniform_index(rng, n));
    out[t] = prev;
  }
}

}  // namespace

Batch make_batch(const SyntheticTask& task, std::size_t batch_size, Rng& rng) {
  task.validate();
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  static thread_local std::pair<SyntheticTask, std::vector<int>> cache{SyntheticTask{}, {}};
  if (cache.second.empty() || !(cache.first == task)) cache = {task, successor_chain(task)};
  const std::vector<int>& succ = cache.second;

  const std::size_t S = static_cast<std::size_t>(task.seq_len);
  Batch b;
  b.batch = batch_size;
  b.seq_len = S;
  std::vector<int> tokens(batch_size * S);
  for (std::size_t i = 0; i < batch_size; ++i) fill_sequence(task, succ, rng, tokens.data() + i * S);

  if (task.kind == TaskKind::MaskedToken) {
    b.labels = tokens;
    b.src = tokens;
    b.mask.assign(tokens.size(), 0);
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::uint8_t* m = b.mask.data() + i * S;
      std::size_t count = 0;
      for (std::size_t t = 0; t < S; ++t) count += (m[t] = bernoulli(rng, task.mask_prob) ? 1 : 0);
      if (count == 0) m[uniform_index(rng, S)] = 1;
      if (count == S) m[uniform_index(rng, S)] = 0;
      for (std::size_t t = 0; t < S; ++t) {
        if (m[t]) b.src[i * S + t] = task.special_token();
      }
    }
    b.tgt_in = b.src;
  } else {
    b.src = tokens;
    b.labels.resize(tokens.size());
    b.tgt_in.resize(tokens.size());
    for (std::size_t i = 0; i < batch_size; ++i) {
      for (std::size_t t = 0; t < S; ++t) b.labels[i * S + t] = tokens[i * S + (S - 1 - t)];
      b.tgt_in[i * S] = task.special_token();
      for (std::size_t t = 1; t < S; ++t) b.tgt_in[i * S + t] = b.labels[i * S + t - 1];
    }
    b.mask.assign(tokens.size(), 1);
  }
  return b;
}

std::vector<Batch> validation_set(const SyntheticTask& task, std::size_t batch_size, std::size_t count) {
  Rng rng = derive_rng(task.seed, "validation");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_batch(task, batch_size, rng));
  return out;
}

std::string to_string(Schedule s) { return s == Schedule::Constant ? "constant" : "cosine"; }
std::string to_string(TrainRule r) { return r == TrainRule::Spos ? "spos" : "sandwich"; }

Schedule parse_schedule(std::string_view text) {
  if (text == "constant") return Schedule::Constant;
  if (text == "cosine") return Schedule::Cosine;
  throw ConfigError("unknown schedule '" + std::string(text) + "'");
}

TrainRule parse_train_rule(std::string_view text) {
  if (text == "spos") return TrainRule::Spos;
  if (text == "sandwich") return TrainRule::Sandwich;
  throw ConfigError("unknown training rule '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (steps <= 0) throw ConfigError("steps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (experts < 1) throw ConfigError("m must be at least 1");
  if (router_hidden < 1) throw ConfigError("router_hidden must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"warmup_steps", warmup_steps},
          {"schedule", to_string(schedule)},
          {"rule", to_string(rule)},
          {"seed", seed},
          {"experts", experts},
          {"router_hidden", router_hidden},
          {"label_smoothing", label_smoothing}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.schedule = parse_schedule(j.value("schedule", to_string(c.schedule)));
  c.rule = parse_train_rule(j.value("rule", to_string(c.rule)));
  c.seed = j.value("seed", c.seed);
  c.experts = j.value("experts", c.experts);
  c.router_hidden = j.value("router_hidden", c.router_hidden);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.validate();
  return c;
}

double learning_rate_at(const TrainConfig& config, std::int64_t step) {
  if (step < config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
  }
  if (config.schedule == Schedule::Constant) return config.learning_rate;
  const double span = static_cast<double>(std::max<std::int64_t>(1, config.steps - config.warmup_steps));
  const double progress = std::min(1.0, static_cast<double>(step - config.warmup_steps) / span);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Adam::step(ParameterSet& params, double lr) {
  ++updates_;
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    Slot& s = slots_[name];
    if (s.m.empty()) {
      s.m.assign(p.size(), 0.0);
      s.v.assign(p.size(), 0.0);
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
    }
  }
}

TrainState initial_train_state(const TrainConfig& config) {
  TrainState s;
  s.rng = derive_rng(config.seed, "train");
  return s;
}

namespace {

double checked_backward(const Tensor& loss, std::int64_t step) {
  double value = loss.item();
  if (!std::isfinite(value)) throw TrainingError("non-finite loss", step);
  backward(loss);
  return value;
}

}  // namespace

double spos_step(SupernetModel& model, const Batch& batch, Adam& optimizer, Rng& rng, double lr, std::int64_t step,
                 double smoothing) {
  ArchDescriptor a = model.space().sample_random(rng);
  model.parameters().zero_grad();
  double loss = checked_backward(model.loss(a, batch, smoothing), step);
  optimizer.step(model.parameters(), lr);
  model.parameters().zero_grad();
  return loss;
}

SandwichLosses sandwich_step(SupernetModel& model, const Batch& batch, Adam& optimizer, Rng& rng, double lr,
                             std::int64_t step, double smoothing) {
  const SearchSpace& space = model.space();
  ArchDescriptor a_rand = space.sample_random(rng);
  model.parameters().zero_grad();
  SandwichLosses out;
  out.rand = checked_backward(model.loss(a_rand, batch, smoothing), step);
  out.big = checked_backward(model.loss(space.sample_big(), batch, smoothing), step);
  out.small = checked_backward(model.loss(space.sample_small(), batch, smoothing), step);
  optimizer.step(model.parameters(), lr);
  model.parameters().zero_grad();
  return out;
}

void write_loss_curve(const std::string& path, const std::vector<LossRow>& curve) {
  CsvWriter csv(path, {"step", "loss_rand", "loss_big", "loss_small"});
  for (const LossRow& r : curve) {
    csv.row({format_number(r.step), format_number(r.loss_rand), format_number(r.loss_big),
             format_number(r.loss_small)});
  }
}

namespace {

template <typename StepFn>
void run_loop(const SyntheticTask& task, const TrainConfig& config, TrainState& state, const std::string& curve_csv,
              StepFn&& one_step) {
  config.validate();
  task.validate();
  try {
    for (; state.step < config.steps; ++state.step) {
      Batch batch = make_batch(task, config.batch_size, state.rng);
      LossRow row = one_step(batch, learning_rate_at(config, state.step));
      row.step = state.step;
      state.curve.push_back(row);
    }
  } catch (...) {
    if (!curve_csv.empty()) write_loss_curve(curve_csv, state.curve);
    throw;
  }
  if (!curve_csv.empty()) write_loss_curve(curve_csv, state.curve);
}

}  // namespace

void train(SupernetModel& model, const SyntheticTask& task, const TrainConfig& config, TrainState& state,
           const std::string& curve_csv) {
  run_loop(task, config, state, curve_csv, [&](const Batch& batch, double lr) {
    LossRow row;
    if (config.rule == TrainRule::Spos) {
      row.loss_rand = spos_step(model, batch, state.optimizer, state.rng, lr, state.step, config.label_smoothing);
    } else {
      SandwichLosses l =
          sandwich_step(model, batch, state.optimizer, state.rng, lr, state.step, config.label_smoothing);
      row.loss_rand = l.rand;
      row.loss_big = l.big;
      row.loss_small = l.small;
    }
    return row;
  });
}

void train_standalone(StaticModel& model, const SyntheticTask& task, const TrainConfig& config, TrainState& state,
                      const std::string& curve_csv) {
  run_loop(task, config, state, curve_csv, [&](const Batch& batch, double lr) {
    model.parameters().zero_grad();
    LossRow row;
    row.loss_rand = checked_backward(model.loss(batch, config.label_smoothing), state.step);
    state.optimizer.step(model.parameters(), lr);
    model.parameters().zero_grad();
    return row;
  });
}

double validation_loss(const SupernetModel& model, const ArchDescriptor& arch, const std::vector<Batch>& batches) {
  if (batches.empty()) throw ArgumentError("validation set is empty");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const Batch& b : batches) total += model.loss(arch, b).item();
  return total / static_cast<double>(batches.size());
}

double validation_loss(const StaticModel& model, const std::vector<Batch>& batches) {
  if (batches.empty()) throw ArgumentError("validation set is empty");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const Batch& b : batches) total += model.loss(b).item();
  return total / static_cast<double>(batches.size());
}

}  // namespace mos
