// SPDX-License-Identifier: Apache-2.0
#include "mos/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "mos/checkpoint.hpp"
#include "mos/csv.hpp"
#include "mos/error.hpp"

namespace mos {

namespace {

void require_distribution(std::span<const double> p) {
  double total = 0;
  for (double v : p) {
    if (!std::isfinite(v) || v < -1e-12) throw ContractError("alignment entry " + format_number(v) + " is not a probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("alignment sums to " + format_number(total) + ", not 1");
}

// p log2(p / m), with 0 log 0 = 0.
double kl_term(double p, double m) { return p > 0 ? p * std::log2(p / m) : 0.0; }

std::vector<ArchDescriptor> candidate_archs(const SearchSpace& space, Rng& rng) {
  if (space.cardinality() <= 20000) return space.enumerate(20000);
  std::vector<ArchDescriptor> out;
  for (int i = 0; i < 2000; ++i) out.push_back(space.sample_random(rng));
  return out;
}

std::vector<double> collect_gradient(const ParameterSet& params, const UsageMap* usage) {
  std::vector<double> out;
  for (const auto& [name, t] : params) {
    const std::vector<std::uint8_t>* mask = nullptr;
    if (usage) {
      auto it = usage->find(t.node().get());
      if (it == usage->end()) continue;
      mask = &it->second;
    }
    auto g = t.grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (mask && !(*mask)[i]) continue;
      out.push_back(g.empty() ? 0.0 : g[i]);
    }
  }
  return out;
}

std::uint64_t arch_seed(std::uint64_t seed, const std::string& arch) { return derive_rng(seed, "standalone " + arch)(); }

}  // namespace

double mae(const std::vector<PairedEval>& pairs) {
  if (pairs.empty()) throw ArgumentError("mae of an empty list");
  double total = 0;
  for (const PairedEval& p : pairs) {
    if (!std::isfinite(p.supernet) || !std::isfinite(p.standalone)) {
      throw ArgumentError("non-finite metric for '" + p.arch + "'");
    }
    total += std::abs(p.supernet - p.standalone);
  }
  return total / static_cast<double>(pairs.size());
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("kendall_tau: lists differ in length");
  if (x.size() < 2) throw ArgumentError("kendall_tau needs at least two points");
  double concordant = 0, discordant = 0, tied_x = 0, tied_y = 0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++tied_x;
      } else if (dy == 0) {
        ++tied_y;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  double denom = std::sqrt((concordant + discordant + tied_x) * (concordant + discordant + tied_y));
  if (denom == 0) throw UndefinedMetric("kendall_tau undefined: one side is entirely tied");
  return (concordant - discordant) / denom;
}

double kendall_tau(const std::vector<PairedEval>& pairs) {
  std::vector<double> a, b;
  for (const PairedEval& p : pairs) {
    a.push_back(p.supernet);
    b.push_back(p.standalone);
  }
  return kendall_tau(a, b);
}

double js_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw ContractError("js_distance: lengths " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
  require_distribution(p);
  require_distribution(q);
  double div = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pi = std::max(p[i], 0.0), qi = std::max(q[i], 0.0);
    double m = 0.5 * (pi + qi);
    div += 0.5 * kl_term(pi, m) + 0.5 * kl_term(qi, m);
  }
  return std::sqrt(std::clamp(div, 0.0, 1.0));
}

double js_distance(const AlignmentVector& p, const AlignmentVector& q) {
  if (p.mode != q.mode || p.weights.shape() != q.weights.shape()) {
    throw ContractError("js_distance: alignments of different kind or shape");
  }
  std::vector<double> a = p.values(), b = q.values();
  std::size_t m = p.experts();
  std::size_t rows = a.size() / m;
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    total += js_distance(std::span<const double>(a).subspan(r * m, m), std::span<const double>(b).subspan(r * m, m));
  }
  return total / static_cast<double>(rows);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("cosine_similarity: lengths differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw UndefinedMetric("cosine similarity of a zero-norm gradient");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<ArchPair> default_sharing_pairs(const SearchSpace& space, std::size_t per_kind, Rng& rng) {
  std::vector<std::pair<std::int64_t, ArchDescriptor>> ranked;
  for (ArchDescriptor& a : candidate_archs(space, rng)) ranked.emplace_back(space.parameter_count(a), std::move(a));
  std::sort(ranked.begin(), ranked.end());
  std::size_t q = std::max<std::size_t>(1, ranked.size() / 4);
  auto pick_small = [&] { return ranked[uniform_index(rng, q)].second; };
  auto pick_large = [&] { return ranked[ranked.size() - 1 - uniform_index(rng, q)].second; };
  auto distinct = [&](auto pick) {
    ArchDescriptor a = pick(), b = pick();
    for (int tries = 0; q > 1 && a == b && tries < 100; ++tries) b = pick();
    return std::make_pair(a, b);
  };
  std::vector<ArchPair> out;
  for (std::size_t i = 0; i < per_kind; ++i) out.push_back({"small-large", pick_small(), pick_large()});
  for (std::size_t i = 0; i < per_kind; ++i) {
    auto [a, b] = distinct(pick_small);
    out.push_back({"small-small", a, b});
  }
  for (std::size_t i = 0; i < per_kind; ++i) {
    auto [a, b] = distinct(pick_large);
    out.push_back({"large-large", a, b});
  }
  return out;
}

std::vector<SharingRow> sharing_report(const SupernetModel& model, const std::vector<ArchPair>& pairs) {
  if (!model.router()) {
    throw UnsupportedScheme("sharing report needs a learned router; scheme '" + to_string(model.scheme()) +
                            "' has none");
  }
  NoGradGuard guard;
  const SearchSpace& space = model.space();
  std::vector<SharingRow> rows;
  for (const ArchPair& pair : pairs) {
    auto la = model.alignments(pair.a);
    auto lb = model.alignments(pair.b);
    std::map<std::string, const AlignmentVector*> by_name;
    for (const auto& [name, align] : lb) by_name.emplace(name, &align);
    double total = 0;
    std::size_t n = 0;
    for (const auto& [name, align] : la) {
      auto it = by_name.find(name);
      if (it == by_name.end()) continue;
      total += js_distance(align, *it->second);
      ++n;
    }
    if (n == 0) throw ArgumentError("archs share no routed layer");
    rows.push_back({pair.label, space.format(pair.a), space.format(pair.b), total / static_cast<double>(n)});
  }
  return rows;
}

std::vector<std::pair<std::string, double>> mean_by_label(const std::vector<SharingRow>& rows) {
  std::vector<std::pair<std::string, double>> out;
  std::vector<std::size_t> counts;
  for (const SharingRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == r.label; });
    if (it == out.end()) {
      out.emplace_back(r.label, 0.0);
      counts.push_back(0);
      it = out.end() - 1;
    }
    it->second += r.js;
    ++counts[static_cast<std::size_t>(it - out.begin())];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].second /= static_cast<double>(counts[i]);
  return out;
}

std::string to_string(ConflictRestriction r) { return r == ConflictRestriction::Shared ? "shared" : "full"; }

ConflictRestriction parse_conflict_restriction(std::string_view text) {
  if (text == "shared") return ConflictRestriction::Shared;
  if (text == "full") return ConflictRestriction::Full;
  throw ConfigError("unknown gradient restriction '" + std::string(text) + "' (expected shared or full)");
}

double gradient_conflict(SupernetModel& model, const Batch& batch, ConflictRestriction restriction) {
  const SearchSpace& space = model.space();
  ParameterSet& params = model.parameters();
  UsageMap usage;
  params.zero_grad();
  backward(model.loss(space.sample_small(), batch, 0.0, &usage));
  const UsageMap* mask = restriction == ConflictRestriction::Shared ? &usage : nullptr;
  std::vector<double> g_small = collect_gradient(params, mask);
  params.zero_grad();
  backward(model.loss(space.sample_big(), batch));
  std::vector<double> g_big = collect_gradient(params, mask);
  params.zero_grad();
  return cosine_similarity(g_big, g_small);
}

std::vector<ConflictRow> conflict_trace(SupernetModel& model, const SyntheticTask& task, const TrainConfig& config,
                                        ConflictRestriction restriction) {
  config.validate();
  TrainState state = initial_train_state(config);
  std::vector<ConflictRow> rows;
  for (; state.step < config.steps; ++state.step) {
    Batch batch = make_batch(task, config.batch_size, state.rng);
    rows.push_back({state.step, to_string(model.scheme()), gradient_conflict(model, batch, restriction)});
    sandwich_step(model, batch, state.optimizer, state.rng, learning_rate_at(config, state.step), state.step,
                  config.label_smoothing);
  }
  return rows;
}

std::vector<FidelityRow> rank_fidelity_experiment(const SearchSpace& space, const SyntheticTask& task,
                                                  const std::vector<Scheme>& schemes, const FidelityConfig& config) {
  config.supernet.validate();
  config.standalone.validate();
  if (config.n_archs < 2) throw ArgumentError("rank fidelity needs at least two archs");

  Rng pick = derive_rng(config.seed, "fidelity-archs");
  std::vector<ArchDescriptor> archs;
  if (space.cardinality() <= 20000) {
    std::vector<ArchDescriptor> all = space.enumerate(20000);
    if (all.size() < config.n_archs) throw ArgumentError("space has fewer archs than requested");
    for (std::size_t i = 0; i < config.n_archs; ++i) {
      std::swap(all[i], all[i + uniform_index(pick, all.size() - i)]);
      archs.push_back(all[i]);
    }
  } else {
    while (archs.size() < config.n_archs) {
      ArchDescriptor a = space.sample_random(pick);
      if (std::find(archs.begin(), archs.end(), a) == archs.end()) archs.push_back(a);
    }
  }

  const bool persist = !config.output_dir.empty();
  if (persist) std::filesystem::create_directories(config.output_dir);
  auto out_path = [&](const std::string& file) { return (std::filesystem::path(config.output_dir) / file).string(); };

  std::vector<Batch> val = validation_set(task, config.supernet.batch_size, config.validation_batches);
  std::vector<double> standalone;
  for (std::size_t i = 0; i < archs.size(); ++i) {
    std::string id = space.format(archs[i]);
    StaticModel model = StaticModel::fresh(space, archs[i], arch_seed(config.seed, id));
    TrainingRecord rec{config.standalone, task, initial_train_state(config.standalone)};
    train_standalone(model, task, config.standalone, rec.state,
                     persist ? out_path("standalone_" + std::to_string(i) + "_curve.csv") : "");
    standalone.push_back(validation_loss(model, val));
    if (persist) save_checkpoint(out_path("standalone_" + std::to_string(i) + ".mosc"), to_checkpoint(model, &rec));
  }

  std::vector<FidelityRow> rows;
  for (Scheme scheme : schemes) {
    FidelityRow row;
    row.scheme = to_string(scheme);
    try {
      SupernetConfig sc;
      sc.scheme = scheme;
      sc.experts = config.supernet.experts;
      sc.router_hidden = config.supernet.router_hidden;
      sc.seed = config.seed;
      SupernetModel model(space, sc);
      TrainingRecord rec{config.supernet, task, initial_train_state(config.supernet)};
      train(model, task, config.supernet, rec.state, persist ? out_path("supernet_" + row.scheme + "_curve.csv") : "");
      for (std::size_t i = 0; i < archs.size(); ++i) {
        row.pairs.push_back({space.format(archs[i]), validation_loss(model, archs[i], val), standalone[i]});
      }
      if (persist) save_checkpoint(out_path("supernet_" + row.scheme + ".mosc"), to_checkpoint(model, &rec));
      row.mae = mae(row.pairs);
      try {
        row.kendall_tau = kendall_tau(row.pairs);
      } catch (const UndefinedMetric&) {
      }
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  if (persist) {
    CsvWriter csv(out_path("fidelity_pairs.csv"), {"scheme", "arch", "supernet_loss", "standalone_loss"});
    for (const FidelityRow& row : rows) {
      for (const PairedEval& p : row.pairs) {
        csv.row({row.scheme, p.arch, format_number(p.supernet), format_number(p.standalone)});
      }
    }
  }
  return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<FidelityRow>& rows) {
  CsvWriter csv(path, {"scheme", "mae", "kendall_tau"});
  for (const FidelityRow& r : rows) csv.row({r.scheme, format_number(r.mae), format_number(r.kendall_tau)});
}

void write_sharing_csv(const std::string& path, const std::vector<SharingRow>& rows) {
  CsvWriter csv(path, {"arch_a", "arch_b", "js_distance"});
  for (const SharingRow& r : rows) csv.row({r.arch_a, r.arch_b, format_number(r.js)});
}

void write_conflict_csv(const std::string& path, const std::vector<ConflictRow>& rows) {
  CsvWriter csv(path, {"step", "scheme", "cosine"});
  for (const ConflictRow& r : rows) csv.row({format_number(r.step), r.scheme, format_number(r.cosine)});
}

}  // namespace mos
