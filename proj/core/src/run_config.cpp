// SPDX-License-Identifier: Apache-2.0
#include "mos/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mos/error.hpp"

namespace mos {

namespace {

std::set<std::string> keys_of(const nlohmann::json& j) {
  std::set<std::string> out;
  for (const auto& [k, v] : j.items()) out.insert(k);
  return out;
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in section '" + section + "'");
  }
}

// Sub-sections inherit the top-level seed; a local seed would be ambiguous.
nlohmann::json without_seed(nlohmann::json j) {
  j.erase("seed");
  return j;
}

void reject_seed(const nlohmann::json& j, const std::string& section) {
  if (j.contains("seed")) throw ConfigError("'seed' belongs at top level, not in section '" + section + "'");
}

nlohmann::json section(const nlohmann::json& j, const char* name) {
  return j.contains(name) ? j.at(name) : nlohmann::json::object();
}

}  // namespace

std::string to_string(LatencyMode mode) { return mode == LatencyMode::Synthetic ? "synthetic" : "measured"; }

LatencyMode parse_latency_mode(std::string_view text) {
  if (text == "synthetic") return LatencyMode::Synthetic;
  if (text == "measured") return LatencyMode::Measured;
  throw ConfigError("unknown latency mode '" + std::string(text) + "' (expected synthetic or measured)");
}

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  task.seed = value;
  train.seed = value;
  search.seed = value;
  latency.predictor.seed = value;
}

SupernetConfig RunConfig::supernet_config() const {
  SupernetConfig c;
  c.scheme = scheme;
  c.experts = train.experts;
  c.router_hidden = train.router_hidden;
  c.router_sharing = router_sharing;
  c.init_std = init_std;
  c.seed = seed;
  return c;
}

void RunConfig::validate() const {
  task.validate();
  train.validate();
  search.validate();
  latency.predictor.validate();
  supernet_config().validate();
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (task.vocab_size != space.fixed().vocab_size) {
    throw ConfigError("task vocab_size " + std::to_string(task.vocab_size) + " differs from space vocab_size " +
                      std::to_string(space.fixed().vocab_size));
  }
  if (task.seq_len > space.fixed().max_seq_len) {
    throw ConfigError("task seq_len " + std::to_string(task.seq_len) + " exceeds space max_seq_len " +
                      std::to_string(space.fixed().max_seq_len));
  }
  if (task.kind == TaskKind::SeqCopyReverse && space.kind() != SpaceKind::EncoderDecoder) {
    throw ConfigError("seq-copy-reverse needs an encoder-decoder space");
  }
  if (eval.batch_size == 0 || eval.batches == 0) throw ConfigError("eval batch_size and batches must be positive");
  for (double c : latency.constraints) {
    if (!(c > 0)) throw ConfigError("latency constraints must be positive");
  }
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    reject_unknown(j,
                   {"seed", "output_dir", "scheme", "checkpoint_dtype", "space", "model", "task", "train", "search",
                    "latency", "eval"},
                   "top level");
    if (!j.contains("seed")) throw ConfigError("config must set 'seed'");
    c.output_dir = j.value("output_dir", c.output_dir);
    c.scheme = parse_scheme(j.value("scheme", to_string(c.scheme)));
    c.checkpoint_dtype = parse_dtype(j.value("checkpoint_dtype", to_string(c.checkpoint_dtype)));

    if (j.contains("space")) {
      reject_unknown(j.at("space"), keys_of(c.space.to_json()), "space");
      c.space = SearchSpace::from_json(j.at("space"));
    }

    nlohmann::json model = section(j, "model");
    reject_unknown(model, {"router_sharing", "init_std"}, "model");
    c.router_sharing = parse_router_sharing(model.value("router_sharing", to_string(c.router_sharing)));
    c.init_std = model.value("init_std", c.init_std);

    nlohmann::json task = section(j, "task");
    reject_unknown(task, keys_of(c.task.to_json()), "task");
    reject_seed(task, "task");
    c.task = SyntheticTask::from_json(task);

    nlohmann::json train = section(j, "train");
    reject_unknown(train, keys_of(c.train.to_json()), "train");
    reject_seed(train, "train");
    c.train = TrainConfig::from_json(train);

    nlohmann::json search = section(j, "search");
    reject_unknown(search, keys_of(c.search.to_json()), "search");
    reject_seed(search, "search");
    c.search = SearchConfig::from_json(search);

    nlohmann::json lat = section(j, "latency");
    reject_unknown(lat, {"mode", "synthetic", "protocol", "dataset_size", "predictor", "constraints"}, "latency");
    c.latency.mode = parse_latency_mode(lat.value("mode", to_string(c.latency.mode)));
    nlohmann::json synth = section(lat, "synthetic");
    reject_unknown(synth, keys_of(c.latency.synthetic.to_json()), "latency.synthetic");
    c.latency.synthetic = SyntheticLatency::from_json(synth);
    nlohmann::json protocol = section(lat, "protocol");
    reject_unknown(protocol, keys_of(c.latency.protocol.to_json()), "latency.protocol");
    c.latency.protocol = LatencyProtocol::from_json(protocol);
    c.latency.dataset_size = lat.value("dataset_size", c.latency.dataset_size);
    nlohmann::json predictor = section(lat, "predictor");
    reject_unknown(predictor, keys_of(c.latency.predictor.to_json()), "latency.predictor");
    reject_seed(predictor, "latency.predictor");
    c.latency.predictor = PredictorConfig::from_json(predictor);
    c.latency.constraints = lat.value("constraints", c.latency.constraints);

    nlohmann::json eval = section(j, "eval");
    reject_unknown(eval, {"batch_size", "batches"}, "eval");
    c.eval.batch_size = eval.value("batch_size", c.eval.batch_size);
    c.eval.batches = eval.value("batches", c.eval.batches);

    c.set_seed(j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json RunConfig::to_json() const {
  return {{"seed", seed},
          {"output_dir", output_dir},
          {"scheme", to_string(scheme)},
          {"checkpoint_dtype", to_string(checkpoint_dtype)},
          {"space", space.to_json()},
          {"model", {{"router_sharing", to_string(router_sharing)}, {"init_std", init_std}}},
          {"task", without_seed(task.to_json())},
          {"train", without_seed(train.to_json())},
          {"search", without_seed(search.to_json())},
          {"latency",
           {{"mode", to_string(latency.mode)},
            {"synthetic", latency.synthetic.to_json()},
            {"protocol", latency.protocol.to_json()},
            {"dataset_size", latency.dataset_size},
            {"predictor", without_seed(latency.predictor.to_json())},
            {"constraints", latency.constraints}}},
          {"eval", {{"batch_size", eval.batch_size}, {"batches", eval.batches}}}};
}

std::string RunConfig::emit() const { return to_json().dump(2) + "\n"; }

RunConfig RunConfig::parse(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

}  // namespace mos
