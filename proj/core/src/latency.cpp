// SPDX-License-Identifier: Apache-2.0
#include "mos/latency.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mos/analysis.hpp"
#include "mos/csv.hpp"
#include "mos/error.hpp"
#include "mos/ops.hpp"
#include "mos/training.hpp"

namespace mos {

namespace {

constexpr std::size_t kMinSamples = 20;

std::vector<double> split_numbers(const std::string& text, char sep) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string cell;
  while (std::getline(in, cell, sep)) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw FormatError("not a number: '" + cell + "'");
    }
  }
  return out;
}

double get_number(const nlohmann::json& j, const char* key, double fallback) {
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}

}  // namespace

double trimmed_mean(std::vector<double> samples, double fraction) {
  if (samples.size() < 10) {
    throw ProtocolError("latency protocol needs at least 10 measurements, got " + std::to_string(samples.size()));
  }
  std::sort(samples.begin(), samples.end());
  auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(samples.size())));
  double total = std::accumulate(samples.begin() + static_cast<std::ptrdiff_t>(k),
                                 samples.end() - static_cast<std::ptrdiff_t>(k), 0.0);
  return total / static_cast<double>(samples.size() - 2 * k);
}

nlohmann::json LatencyProtocol::to_json() const {
  return {{"repeats", repeats}, {"warmup", warmup}, {"batch_size", batch_size}, {"seq_len", seq_len}};
}

LatencyProtocol LatencyProtocol::from_json(const nlohmann::json& j) {
  LatencyProtocol p;
  p.repeats = j.value("repeats", p.repeats);
  p.warmup = j.value("warmup", p.warmup);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.seq_len = j.value("seq_len", p.seq_len);
  return p;
}

double measure_latency(const StaticModel& model, const LatencyProtocol& protocol) {
  if (protocol.repeats < 10) {
    throw ProtocolError("latency protocol needs at least 10 measurements, got " + std::to_string(protocol.repeats));
  }
  const FixedDims& fixed = model.space().fixed();
  std::size_t seq = protocol.seq_len ? protocol.seq_len : static_cast<std::size_t>(fixed.max_seq_len);
  Batch batch;
  batch.batch = std::max<std::size_t>(1, protocol.batch_size);
  batch.seq_len = seq;
  std::size_t n = batch.batch * seq;
  batch.src.resize(n);
  for (std::size_t i = 0; i < n; ++i) batch.src[i] = static_cast<int>(i % static_cast<std::size_t>(fixed.vocab_size));
  batch.tgt_in = batch.src;
  batch.labels = batch.src;
  batch.mask.assign(n, 1);

  NoGradGuard guard;
  for (std::size_t i = 0; i < protocol.warmup; ++i) model.forward(batch);
  std::vector<double> times;
  times.reserve(protocol.repeats);
  for (std::size_t i = 0; i < protocol.repeats; ++i) {
    auto start = std::chrono::steady_clock::now();
    Tensor out = model.forward(batch);
    auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  return trimmed_mean(std::move(times));
}

nlohmann::json SyntheticLatency::to_json() const { return {{"base_ms", base_ms}, {"per_param_ms", per_param_ms}}; }

SyntheticLatency SyntheticLatency::from_json(const nlohmann::json& j) {
  SyntheticLatency s;
  s.base_ms = get_number(j, "base_ms", s.base_ms);
  s.per_param_ms = get_number(j, "per_param_ms", s.per_param_ms);
  return s;
}

LatencyOracle synthetic_latency_oracle(const SearchSpace& space, SyntheticLatency latency) {
  return [space, latency](const ArchDescriptor& arch) {
    return latency.base_ms + latency.per_param_ms * static_cast<double>(space.parameter_count(arch));
  };
}

LatencyOracle measured_latency_oracle(const SupernetModel& model, LatencyProtocol protocol) {
  return [&model, protocol](const ArchDescriptor& arch) { return measure_latency(model.collapse(arch), protocol); };
}

std::vector<LatencySample> build_latency_dataset(const SearchSpace& space, const LatencyOracle& oracle,
                                                 std::size_t count, Rng& rng, std::ostream* log) {
  std::vector<LatencySample> out;
  for (std::size_t i = 0; i < count; ++i) {
    ArchDescriptor arch = space.sample_random(rng);
    std::string id = space.format(arch);
    try {
      double ms = oracle(arch);
      if (!(ms > 0) || !std::isfinite(ms)) throw ProtocolError("latency " + format_number(ms) + " is not positive");
      out.push_back({id, space.encode(arch).normalized, ms});
    } catch (const Error& e) {
      if (log) *log << "skipping " << id << ": " << e.what() << '\n';
    }
  }
  return out;
}

void write_latency_dataset(const std::string& path, const std::vector<LatencySample>& samples) {
  CsvWriter csv(path, {"arch", "encoding", "latency_ms"});
  for (const LatencySample& s : samples) csv.row({s.arch, join_numbers(s.encoding, ';'), format_number(s.latency_ms)});
}

std::vector<LatencySample> read_latency_dataset(const std::string& path) {
  CsvTable table = read_csv(path);
  if (table.header != std::vector<std::string>{"arch", "encoding", "latency_ms"}) {
    throw FormatError("'" + path + "' is not a latency dataset");
  }
  std::vector<LatencySample> out;
  for (const auto& row : table.rows) {
    if (row.size() != 3) throw FormatError("'" + path + "': malformed row");
    out.push_back({row[0], split_numbers(row[1], ';'), split_numbers(row[2], ',').at(0)});
  }
  return out;
}

void PredictorConfig::validate() const {
  if (hidden == 0) throw ConfigError("predictor hidden size must be positive");
  if (epochs == 0) throw ConfigError("predictor epochs must be positive");
  if (!(learning_rate > 0)) throw ConfigError("predictor learning_rate must be positive");
  if (!(split > 0 && split < 1)) throw ConfigError("predictor split must lie in (0, 1)");
}

nlohmann::json PredictorConfig::to_json() const {
  return {{"hidden", hidden}, {"epochs", epochs}, {"learning_rate", learning_rate}, {"split", split}, {"seed", seed}};
}

PredictorConfig PredictorConfig::from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = get_number(j, "learning_rate", c.learning_rate);
  c.split = get_number(j, "split", c.split);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Tensor LatencyPredictor::forward(const Tensor& x) const {
  auto layer = [&](const Tensor& in, const std::string& name) {
    return linear(in, {params_.at(name + ".weight"), params_.at(name + ".bias")});
  };
  return layer(relu(layer(relu(layer(x, "fc1")), "fc2")), "fc3");
}

PredictorFit LatencyPredictor::fit(const std::vector<LatencySample>& samples, const PredictorConfig& config) {
  config.validate();
  if (samples.size() < kMinSamples) {
    throw FitError("latency predictor needs at least " + std::to_string(kMinSamples) + " samples, got " +
                   std::to_string(samples.size()));
  }
  const std::size_t d = samples.front().encoding.size();
  for (const LatencySample& s : samples) {
    if (s.encoding.size() != d) throw FitError("latency samples have encodings of different sizes");
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle = derive_rng(config.seed, "latency-split");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle, i)]);
  auto n_train = static_cast<std::size_t>(std::floor(config.split * static_cast<double>(samples.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, samples.size() - 1);

  LatencyPredictor p;
  p.mean_.assign(d, 0.0);
  p.scale_.assign(d, 0.0);
  double t_mean = 0, t_var = 0;
  for (std::size_t i = 0; i < n_train; ++i) {
    const LatencySample& s = samples[order[i]];
    for (std::size_t k = 0; k < d; ++k) p.mean_[k] += s.encoding[k];
    t_mean += s.latency_ms;
  }
  for (double& m : p.mean_) m /= static_cast<double>(n_train);
  t_mean /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    const LatencySample& s = samples[order[i]];
    for (std::size_t k = 0; k < d; ++k) p.scale_[k] += (s.encoding[k] - p.mean_[k]) * (s.encoding[k] - p.mean_[k]);
    t_var += (s.latency_ms - t_mean) * (s.latency_ms - t_mean);
  }
  if (t_var <= 1e-24 * std::max(1.0, t_mean * t_mean)) throw FitError("latency targets have zero variance");
  for (double& s : p.scale_) {
    s = std::sqrt(s / static_cast<double>(n_train));
    if (s < 1e-12) s = 1.0;  // constant feature
  }
  p.target_mean_ = t_mean;
  p.target_scale_ = std::sqrt(t_var / static_cast<double>(n_train));

  const std::size_t h = config.hidden;
  auto add_linear = [&](const std::string& name, std::size_t out, std::size_t in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    p.params_.add(name + ".weight",
                  Tensor::parameter({out, in}, uniform_init(out * in, bound, config.seed, "latency." + name + ".weight")));
    p.params_.add(name + ".bias",
                  Tensor::parameter({out}, uniform_init(out, bound, config.seed, "latency." + name + ".bias")));
  };
  add_linear("fc1", h, d);
  add_linear("fc2", h, h);
  add_linear("fc3", 1, h);

  std::vector<double> x(n_train * d), y(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    const LatencySample& s = samples[order[i]];
    for (std::size_t k = 0; k < d; ++k) x[i * d + k] = (s.encoding[k] - p.mean_[k]) / p.scale_[k];
    y[i] = (s.latency_ms - t_mean) / p.target_scale_;
  }
  Tensor inputs = Tensor::from({n_train, d}, x);

  Adam adam(0.9, 0.999, 1e-8);
  double train_mse = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Tensor loss = mse(reshape(p.forward(inputs), {n_train}), y);
    train_mse = loss.item();
    backward(loss);
    adam.step(p.params_, config.learning_rate);
    p.params_.zero_grad();
  }

  std::vector<double> predicted, actual;
  double abs_err = 0;
  for (std::size_t i = n_train; i < samples.size(); ++i) {
    const LatencySample& s = samples[order[i]];
    predicted.push_back(p.predict(s.encoding));
    actual.push_back(s.latency_ms);
    abs_err += std::abs(predicted.back() - actual.back());
  }
  PredictorFit fit{std::move(p)};
  fit.train_mse = train_mse;
  fit.train_size = n_train;
  fit.test_size = actual.size();
  fit.heldout_mae = abs_err / static_cast<double>(actual.size());
  if (actual.size() >= 2) {
    try {
      fit.heldout_kendall = kendall_tau(predicted, actual);
    } catch (const UndefinedMetric&) {
    }
  }
  return fit;
}

double LatencyPredictor::predict(std::span<const double> encoding) const {
  if (encoding.size() != mean_.size()) {
    throw ArgumentError("predictor expects " + std::to_string(mean_.size()) + " features, got " +
                        std::to_string(encoding.size()));
  }
  std::vector<double> x(encoding.size());
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = (encoding[k] - mean_[k]) / scale_[k];
  NoGradGuard guard;
  const std::size_t n = x.size();
  return target_mean_ + target_scale_ * forward(Tensor::from({1, n}, std::move(x))).item();
}

double LatencyPredictor::predict(const SearchSpace& space, const ArchDescriptor& arch) const {
  return predict(space.encode(arch).normalized);
}

Checkpoint LatencyPredictor::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.metadata["kind"] = "latency-predictor";
  ckpt.metadata["input_size"] = input_size();
  ckpt.metadata["hidden"] = params_.at("fc1.weight").rows();
  for (const auto& [name, t] : params_) ckpt.add(name, t.shape(), t.to_vector());
  ckpt.add("norm.feature_mean", {mean_.size()}, mean_);
  ckpt.add("norm.feature_scale", {scale_.size()}, scale_);
  ckpt.add("norm.target", {2}, {target_mean_, target_scale_});
  return ckpt;
}

LatencyPredictor LatencyPredictor::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind() != "latency-predictor") {
    throw FormatError("expected a latency-predictor checkpoint, found '" + ckpt.kind() + "'");
  }
  LatencyPredictor p;
  try {
    auto d = ckpt.metadata.at("input_size").get<std::size_t>();
    auto h = ckpt.metadata.at("hidden").get<std::size_t>();
    const std::pair<const char*, Shape> layout[] = {{"fc1.weight", {h, d}}, {"fc1.bias", {h}},
                                                    {"fc2.weight", {h, h}}, {"fc2.bias", {h}},
                                                    {"fc3.weight", {1, h}}, {"fc3.bias", {1}}};
    for (const auto& [name, shape] : layout) {
      const TensorRecord& rec = ckpt.at(name);
      if (rec.shape != shape) throw FormatError(std::string("tensor '") + name + "' has shape " + shape_string(rec.shape));
      p.params_.add(name, Tensor::parameter(rec.shape, rec.values));
    }
    p.mean_ = ckpt.at("norm.feature_mean").values;
    p.scale_ = ckpt.at("norm.feature_scale").values;
    const auto& target = ckpt.at("norm.target").values;
    if (p.mean_.size() != d || p.scale_.size() != d || target.size() != 2) {
      throw FormatError("malformed predictor normalization");
    }
    p.target_mean_ = target[0];
    p.target_scale_ = target[1];
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed predictor metadata: ") + e.what());
  }
  return p;
}

}  // namespace mos
