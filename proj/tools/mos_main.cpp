// SPDX-License-Identifier: Apache-2.0
//
// mos: train, search, collapse and evaluate mixture-of-supernets models.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "mos/analysis.hpp"
#include "mos/checkpoint.hpp"
#include "mos/csv.hpp"
#include "mos/error.hpp"
#include "mos/latency.hpp"
#include "mos/run_config.hpp"
#include "mos/search.hpp"

namespace fs = std::filesystem;
using namespace mos;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  bool serial = false;
  std::string out;
};

Globals g;

std::string output_dir(const std::string& configured) {
  std::string dir = configured;
  if (const char* env = std::getenv("MOS_OUT_DIR"); env && *env) dir = env;
  if (!g.out.empty()) dir = g.out;
  fs::create_directories(dir);
  return dir;
}

RunConfig load_config(const std::string& path) {
  RunConfig c = RunConfig::load(path);
  if (g.seed) {
    c.set_seed(*g.seed);
    c.validate();
  }
  return c;
}

SearchOptions search_options() {
  SearchOptions o;
  o.threads = g.serial ? 1 : std::max(1u, std::thread::hardware_concurrency());
  return o;
}

// Artifacts are written through a rename, which would replace an input file.
void refuse_overwrite(const std::string& input, const std::string& output) {
  std::error_code ec;
  if (fs::exists(output) && fs::equivalent(input, output, ec)) {
    throw UsageError("output '" + output + "' would overwrite input checkpoint '" + input + "'");
  }
}

void print_kv(const std::string& key, const std::string& value) { std::cout << key << " " << value << "\n"; }

void cmd_train_supernet(const std::string& config_path, const std::string& resume, std::optional<std::int64_t> steps) {
  RunConfig c = load_config(config_path);
  if (steps) c.train.steps = *steps;
  c.train.validate();
  std::string dir = output_dir(c.output_dir);
  std::string ckpt_path = dir + "/supernet.mosc";

  std::optional<SupernetModel> model;
  TrainState state;
  if (!resume.empty()) {
    refuse_overwrite(resume, ckpt_path);
    Checkpoint in = load_checkpoint(resume);
    model.emplace(supernet_from_checkpoint(in));
    if (model->scheme() != c.scheme) {
      throw UsageError("checkpoint scheme '" + to_string(model->scheme()) + "' differs from config scheme '" +
                       to_string(c.scheme) + "'");
    }
    auto record = training_record(in);
    if (!record) throw UsageError("checkpoint '" + resume + "' carries no training state to resume");
    state = std::move(record->state);
  } else {
    model.emplace(c.space, c.supernet_config());
    state = initial_train_state(c.train);
  }
  std::ofstream(dir + "/config.json", std::ios::binary) << c.emit();
  train(*model, c.task, c.train, state, dir + "/supernet_curve.csv");
  TrainingRecord record{c.train, c.task, std::move(state)};
  save_checkpoint(ckpt_path, to_checkpoint(*model, &record, c.checkpoint_dtype));
  print_kv("checkpoint", ckpt_path);
  const LossRow& last = record.state.curve.back();
  if (last.loss_big) print_kv("loss_big", format_number(*last.loss_big));
  if (last.loss_small) print_kv("loss_small", format_number(*last.loss_small));
  if (last.loss_rand) print_kv("loss_rand", format_number(*last.loss_rand));
}

void cmd_train_standalone(const std::string& config_path, const std::string& arch_text,
                          std::optional<std::int64_t> steps) {
  RunConfig c = load_config(config_path);
  if (steps) c.train.steps = *steps;
  c.train.validate();
  ArchDescriptor arch = c.space.parse(arch_text);
  std::string dir = output_dir(c.output_dir);
  StaticModel model = StaticModel::fresh(c.space, arch, c.seed, c.init_std);
  TrainState state = initial_train_state(c.train);
  train_standalone(model, c.task, c.train, state, dir + "/standalone_curve.csv");
  TrainingRecord record{c.train, c.task, std::move(state)};
  std::string path = dir + "/standalone.mosc";
  save_checkpoint(path, to_checkpoint(model, &record, c.checkpoint_dtype));
  print_kv("checkpoint", path);
  print_kv("loss", format_number(*record.state.curve.back().loss_rand));
}

LatencyOracle latency_oracle(const RunConfig& c, const SupernetModel* model) {
  if (c.latency.mode == LatencyMode::Synthetic) return synthetic_latency_oracle(c.space, c.latency.synthetic);
  if (!model) throw UsageError("measured latency mode needs --checkpoint");
  return measured_latency_oracle(*model, c.latency.protocol);
}

LatencyPredictor fit_predictor(const RunConfig& c, const SupernetModel* model, const std::string& dir) {
  Rng rng = derive_rng(c.seed, "latency-dataset");
  auto samples = build_latency_dataset(c.space, latency_oracle(c, model), c.latency.dataset_size, rng, &std::cerr);
  write_latency_dataset(dir + "/latency_dataset.csv", samples);
  PredictorFit fit = LatencyPredictor::fit(samples, c.latency.predictor);
  save_checkpoint(dir + "/latency_predictor.mosc", fit.predictor.to_checkpoint());
  print_kv("samples", std::to_string(samples.size()));
  print_kv("train_size", std::to_string(fit.train_size));
  print_kv("test_size", std::to_string(fit.test_size));
  print_kv("heldout_mae_ms", format_number(fit.heldout_mae));
  print_kv("heldout_kendall", format_number(fit.heldout_kendall));
  return std::move(fit.predictor);
}

SupernetModel load_matching_supernet(const std::string& path, const RunConfig& c) {
  SupernetModel model = supernet_from_checkpoint(load_checkpoint(path));
  if (model.scheme() != c.scheme) {
    throw UsageError("checkpoint scheme '" + to_string(model.scheme()) + "' differs from config scheme '" +
                     to_string(c.scheme) + "'");
  }
  if (!(model.space() == c.space)) throw UsageError("checkpoint search space differs from the config's");
  return model;
}

void cmd_search(const std::string& config_path, const std::string& ckpt_path, const std::string& predictor_path) {
  RunConfig c = load_config(config_path);
  SupernetModel model = load_matching_supernet(ckpt_path, c);
  std::string dir = output_dir(c.output_dir);

  std::optional<LatencyPredictor> predictor;
  if (!predictor_path.empty()) {
    predictor.emplace(LatencyPredictor::from_checkpoint(load_checkpoint(predictor_path)));
  } else {
    predictor.emplace(fit_predictor(c, &model, dir));
  }
  ArchScore predicted = [&](const ArchDescriptor& a) { return predictor->predict(c.space, a); };
  ArchScore measured = latency_oracle(c, &model);
  ArchScore fitness = supernet_fitness(model, validation_set(c.task, c.eval.batch_size, c.eval.batches));

  std::vector<double> constraints = c.latency.constraints;
  if (constraints.empty()) constraints.push_back(c.search.latency_constraint_ms);
  auto entries = compute_pareto(c.space, fitness, predicted, measured, constraints, c.search, search_options());
  write_pareto_csv(dir + "/pareto.csv", c.space, entries);
  std::ofstream trace(dir + "/search_trace.jsonl", std::ios::binary);
  for (const ParetoEntry& e : entries) {
    write_trace_jsonl(trace, e.constraint_ms, e.trace);
    std::cout << "constraint " << format_number(e.constraint_ms) << ": ";
    if (e.arch) {
      std::cout << c.space.format(*e.arch) << " val_loss=" << format_number(e.val_loss)
                << " predicted_ms=" << format_number(e.predicted_latency_ms) << "\n";
    } else {
      std::cout << "infeasible (" << e.error << ")\n";
    }
  }
  print_kv("pareto", dir + "/pareto.csv");
}

void cmd_collapse(const std::string& ckpt_path, const std::string& arch_text, std::string out_path) {
  Checkpoint in = load_checkpoint(ckpt_path);
  SupernetModel model = supernet_from_checkpoint(in);
  ArchDescriptor arch = model.space().parse(arch_text);
  if (out_path.empty()) out_path = output_dir(".") + "/collapsed.mosc";
  refuse_overwrite(ckpt_path, out_path);
  StaticModel s = model.collapse(arch);
  Checkpoint out = to_checkpoint(s, nullptr, parse_dtype(in.metadata.value("dtype", "f64")));
  // Keep the task so eval of the collapsed model sees the same data.
  if (auto record = training_record(in)) out.metadata["task"] = record->task.to_json();
  save_checkpoint(out_path, out);
  print_kv("parameters", std::to_string(s.parameter_count()));
  print_kv("checkpoint", out_path);
}

void cmd_eval(const std::string& ckpt_path, const std::string& arch_text, const std::string& config_path) {
  Checkpoint in = load_checkpoint(ckpt_path);
  const bool supernet = in.kind() == "supernet";
  if (supernet && arch_text.empty()) throw UsageError("eval of a supernet checkpoint needs --arch");
  if (!supernet && !arch_text.empty()) throw UsageError("--arch is not accepted for a " + in.kind() + " checkpoint");

  SyntheticTask task;
  EvalSettings eval;
  if (!config_path.empty()) {
    RunConfig c = load_config(config_path);
    task = c.task;
    eval = c.eval;
  } else if (auto record = training_record(in)) {
    task = record->task;
  } else if (in.metadata.contains("task")) {
    task = SyntheticTask::from_json(in.metadata.at("task"));
  }
  if (g.seed) task.seed = *g.seed;
  auto batches = validation_set(task, eval.batch_size, eval.batches);

  double loss;
  if (supernet) {
    SupernetModel model = supernet_from_checkpoint(in);
    loss = validation_loss(model, model.space().parse(arch_text), batches);
  } else {
    loss = validation_loss(static_from_checkpoint(in), batches);
  }
  print_kv("val_loss", format_number(loss));
}

void cmd_latency_fit(const std::string& config_path, const std::string& ckpt_path) {
  RunConfig c = load_config(config_path);
  std::optional<SupernetModel> model;
  if (!ckpt_path.empty()) model.emplace(load_matching_supernet(ckpt_path, c));
  std::string dir = output_dir(c.output_dir);
  fit_predictor(c, model ? &*model : nullptr, dir);
  print_kv("predictor", dir + "/latency_predictor.mosc");
}

std::vector<Scheme> parse_schemes(const std::vector<std::string>& names, Scheme fallback) {
  std::vector<Scheme> out;
  for (const auto& n : names) out.push_back(parse_scheme(n));
  if (out.empty()) out.push_back(fallback);
  return out;
}

void cmd_metrics_js(const std::vector<double>& p, const std::vector<double>& q) {
  print_kv("js_distance", format_number(js_distance(p, q)));
}

void cmd_metrics_sharing(const std::string& ckpt_path, std::size_t per_kind) {
  SupernetModel model = supernet_from_checkpoint(load_checkpoint(ckpt_path));
  if (!model.router()) {
    throw UnsupportedScheme("sharing report needs a learned router; scheme '" + to_string(model.scheme()) +
                            "' has none");
  }
  Rng rng = derive_rng(g.seed.value_or(0), "sharing-pairs");
  auto rows = sharing_report(model, default_sharing_pairs(model.space(), per_kind, rng));
  std::string path = output_dir(".") + "/sharing.csv";
  write_sharing_csv(path, rows);
  for (const auto& [label, mean] : mean_by_label(rows)) print_kv(label, format_number(mean));
  print_kv("csv", path);
}

void cmd_metrics_conflict(const std::string& config_path, const std::vector<std::string>& scheme_names,
                          const std::string& restriction) {
  RunConfig c = load_config(config_path);
  std::vector<ConflictRow> all;
  for (Scheme s : parse_schemes(scheme_names, c.scheme)) {
    RunConfig sc = c;
    sc.scheme = s;
    SupernetModel model(sc.space, sc.supernet_config());
    auto rows = conflict_trace(model, sc.task, sc.train, parse_conflict_restriction(restriction));
    double sum = 0;
    for (const auto& r : rows) sum += r.cosine;
    print_kv(to_string(s), format_number(sum / static_cast<double>(rows.size())));
    all.insert(all.end(), rows.begin(), rows.end());
  }
  std::string path = output_dir(c.output_dir) + "/conflict.csv";
  write_conflict_csv(path, all);
  print_kv("csv", path);
}

void cmd_metrics_rank_fidelity(const std::string& config_path, const std::vector<std::string>& scheme_names,
                               std::size_t n_archs) {
  RunConfig c = load_config(config_path);
  FidelityConfig f;
  f.supernet = c.train;
  f.standalone = c.train;
  f.n_archs = n_archs;
  f.validation_batches = c.eval.batches;
  f.seed = c.seed;
  f.output_dir = output_dir(c.output_dir);
  auto names = scheme_names.empty() ? std::vector<std::string>{"standard", "layer-mos", "neuron-mos"} : scheme_names;
  auto rows = rank_fidelity_experiment(c.space, c.task, parse_schemes(names, c.scheme), f);
  write_metrics_csv(f.output_dir + "/metrics.csv", rows);
  for (const FidelityRow& r : rows) {
    if (!r.error.empty()) {
      std::cout << r.scheme << " failed: " << r.error << "\n";
      continue;
    }
    std::cout << r.scheme << " mae=" << format_number(r.mae) << " kendall_tau=" << format_number(r.kendall_tau)
              << "\n";
  }
  print_kv("csv", f.output_dir + "/metrics.csv");
}

int run(int argc, char** argv) {
  CLI::App app{"Mixture-of-supernets training, search and analysis"};
  app.require_subcommand(1);
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_flag("--serial", g.serial, "Single-threaded execution");
  app.add_option("--out", g.out, "Output directory (overrides MOS_OUT_DIR and the config)");

  std::string config, checkpoint, arch, output, predictor, restriction = "shared";
  std::optional<std::int64_t> steps;
  std::vector<std::string> schemes;
  std::vector<double> p, q;
  std::size_t per_kind = 5, n_archs = 8;

  auto* ts = app.add_subcommand("train-supernet", "Train a supernet from a config");
  ts->add_option("-c,--config", config)->required();
  ts->add_option("--resume", checkpoint, "Continue from a supernet checkpoint");
  ts->add_option("--steps", steps, "Override train.steps");

  auto* tsa = app.add_subcommand("train-standalone", "Train one architecture from scratch");
  tsa->add_option("-c,--config", config)->required();
  tsa->add_option("-a,--arch", arch)->required();
  tsa->add_option("--steps", steps, "Override train.steps");

  auto* se = app.add_subcommand("search", "Latency-constrained evolutionary search");
  se->add_option("-c,--config", config)->required();
  se->add_option("-k,--checkpoint", checkpoint)->required();
  se->add_option("--predictor", predictor, "Use a fitted latency predictor instead of fitting one");

  auto* co = app.add_subcommand("collapse", "Extract one architecture as a static model");
  co->add_option("-k,--checkpoint", checkpoint)->required();
  co->add_option("-a,--arch", arch)->required();
  co->add_option("-o,--output", output);

  auto* ev = app.add_subcommand("eval", "Mean validation loss of a checkpoint");
  ev->add_option("-k,--checkpoint", checkpoint)->required();
  ev->add_option("-a,--arch", arch);
  ev->add_option("-c,--config", config, "Task and eval settings (default: the checkpoint's)");

  auto* lf = app.add_subcommand("latency-fit", "Build a latency dataset and fit the predictor");
  lf->add_option("-c,--config", config)->required();
  lf->add_option("-k,--checkpoint", checkpoint, "Supernet for measured latency");

  auto* me = app.add_subcommand("metrics", "Analysis reports");
  me->require_subcommand(1);
  auto* js = me->add_subcommand("js", "Jensen-Shannon distance of two distributions");
  js->add_option("--p", p)->required()->delimiter(',');
  js->add_option("--q", q)->required()->delimiter(',');
  auto* sh = me->add_subcommand("sharing", "Router alignment distances between architecture pairs");
  sh->add_option("-k,--checkpoint", checkpoint)->required();
  sh->add_option("--pairs", per_kind, "Pairs per kind");
  auto* cf = me->add_subcommand("conflict", "Gradient conflict between a_big and a_small during training");
  cf->add_option("-c,--config", config)->required();
  cf->add_option("--schemes", schemes)->delimiter(',');
  cf->add_option("--restriction", restriction)->check(CLI::IsMember({"shared", "full"}));
  auto* rf = me->add_subcommand("rank-fidelity", "Supernet vs standalone loss agreement");
  rf->add_option("-c,--config", config)->required();
  rf->add_option("--schemes", schemes)->delimiter(',');
  rf->add_option("--archs", n_archs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ts) cmd_train_supernet(config, checkpoint, steps);
    else if (*tsa) cmd_train_standalone(config, arch, steps);
    else if (*se) cmd_search(config, checkpoint, predictor);
    else if (*co) cmd_collapse(checkpoint, arch, output);
    else if (*ev) cmd_eval(checkpoint, arch, config);
    else if (*lf) cmd_latency_fit(config, checkpoint);
    else if (*js) cmd_metrics_js(p, q);
    else if (*sh) cmd_metrics_sharing(checkpoint, per_kind);
    else if (*cf) cmd_metrics_conflict(config, schemes, restriction);
    else if (*rf) cmd_metrics_rank_fidelity(config, schemes, n_archs);
  } catch (const UsageError& e) {
    std::cerr << "mos: usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mos: error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
