// SPDX-License-Identifier: Apache-2.0
//
// Latency-constrained evolutionary search and per-constraint pareto fronts.
#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mos/space.hpp"
#include "mos/supernet.hpp"

namespace mos {

struct SearchConfig {
  std::size_t iterations = 30;
  std::size_t population = 125;
  std::size_t parents = 25;
  std::size_t crossovers = 50;
  std::size_t mutations = 50;
  double mutate_prob = 0.3;
  double latency_constraint_ms = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;

  void validate() const;
  /// An infinite constraint is written as null.
  nlohmann::json to_json() const;
  static SearchConfig from_json(const nlohmann::json& j);
  bool operator==(const SearchConfig&) const = default;
};

using ArchScore = std::function<double(const ArchDescriptor&)>;

/// Mean validation loss of `arch` under the frozen model. Safe to call from
/// several threads at once.
ArchScore supernet_fitness(const SupernetModel& model, std::vector<Batch> validation);

struct SearchOptions {
  /// Fitness evaluations run on this many threads; 1 is fully serial.
  /// Results do not depend on the value.
  std::size_t threads = 1;
  /// Sampling attempts allowed per admitted candidate before giving up on it.
  std::size_t max_attempts = 200;
};

struct IterationSummary {
  std::size_t iteration = 0;
  double best_fitness = 0;
  double mean_parent_fitness = 0;
  std::string best_arch;
  double best_latency_ms = 0;
  std::size_t population = 0;
  std::size_t evaluations = 0;  // distinct archs scored so far
  std::size_t rejected = 0;     // candidates refused by the constraint so far
};

struct SearchResult {
  ArchDescriptor best;
  double fitness = 0;
  double latency_ms = 0;  // as reported by the latency function
  std::vector<IterationSummary> trace;
};

/// Random initial population; each iteration keeps the `parents` fittest,
/// then adds mutations and crossovers of randomly drawn parents (with
/// replacement). Only candidates with latency <= constraint are admitted.
/// Lower fitness is better; ties break on the gene vector. Throws
/// InfeasibleError when no initial candidate satisfies the constraint.
SearchResult evolutionary_search(const SearchSpace& space, const ArchScore& fitness, const ArchScore& latency,
                                 const SearchConfig& config, const SearchOptions& options = {});

/// One JSON object per line, tagged with the constraint.
void write_trace_jsonl(std::ostream& out, double constraint_ms, const std::vector<IterationSummary>& trace);

struct ParetoEntry {
  double constraint_ms = 0;
  std::optional<ArchDescriptor> arch;  // empty when infeasible
  double predicted_latency_ms = 0;
  std::optional<double> measured_latency_ms;
  double val_loss = 0;
  std::vector<IterationSummary> trace;
  std::string error;
};

/// One search per constraint, ascending. `measured` may be empty. An
/// infeasible constraint yields an entry with `error` set.
std::vector<ParetoEntry> compute_pareto(const SearchSpace& space, const ArchScore& fitness,
                                        const ArchScore& predicted_latency, const ArchScore& measured_latency,
                                        std::vector<double> constraints, const SearchConfig& config,
                                        const SearchOptions& options = {});

/// Columns: constraint_ms, arch_id, raw_encoding, predicted_latency_ms,
/// measured_latency_ms, val_loss. Infeasible rows leave the arch columns blank.
void write_pareto_csv(const std::string& path, const SearchSpace& space, const std::vector<ParetoEntry>& entries);

}  // namespace mos
