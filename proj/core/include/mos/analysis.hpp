// SPDX-License-Identifier: Apache-2.0
//
// Diagnostics: supernet-vs-standalone agreement (MAE, Kendall tau-b),
// Jensen-Shannon distance between alignment vectors, and gradient conflict
// between the largest and smallest architectures.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mos/supernet.hpp"
#include "mos/training.hpp"

namespace mos {

struct PairedEval {
  std::string arch;
  double supernet = 0;
  double standalone = 0;
};

/// Mean |supernet - standalone|. Throws ArgumentError when empty or when a
/// value is not finite.
double mae(const std::vector<PairedEval>& pairs);

/// Kendall tau-b. Throws ArgumentError for fewer than two points or unequal
/// lengths, UndefinedMetric when either side is entirely tied.
double kendall_tau(std::span<const double> x, std::span<const double> y);
double kendall_tau(const std::vector<PairedEval>& pairs);

/// sqrt of the base-2 Jensen-Shannon divergence, in [0, 1]. Throws
/// ContractError unless both inputs are distributions of equal length.
double js_distance(std::span<const double> p, std::span<const double> q);
/// Layer alignments compare directly; neuron alignments (n_out_big x m) are
/// compared row by row and the row distances averaged.
double js_distance(const AlignmentVector& p, const AlignmentVector& q);

/// Cosine similarity. Throws UndefinedMetric if either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct ArchPair {
  std::string label;  // "small-large", "small-small", "large-large" or free text
  ArchDescriptor a, b;
};

/// `per_kind` pairs of each kind. Small and large archs are the bottom and
/// top quartiles of the space by parameter count; same-kind pairs use two
/// distinct archs when the quartile has more than one.
std::vector<ArchPair> default_sharing_pairs(const SearchSpace& space, std::size_t per_kind, Rng& rng);

struct SharingRow {
  std::string label;
  std::string arch_a, arch_b;
  double js = 0;  // mean over routed layers active in both archs
};

/// Throws UnsupportedScheme unless the model has a learned router.
std::vector<SharingRow> sharing_report(const SupernetModel& model, const std::vector<ArchPair>& pairs);
/// Mean js per label, in first-appearance order.
std::vector<std::pair<std::string, double>> mean_by_label(const std::vector<SharingRow>& rows);

enum class ConflictRestriction { Shared, Full };
std::string to_string(ConflictRestriction r);
ConflictRestriction parse_conflict_restriction(std::string_view text);

/// Cosine between the gradients of loss(a_big) and loss(a_small) on `batch`.
/// Shared: only coordinates read by a_small's forward. Full: every parameter.
/// Leaves the model's gradient buffers cleared.
double gradient_conflict(SupernetModel& model, const Batch& batch,
                         ConflictRestriction restriction = ConflictRestriction::Shared);

struct ConflictRow {
  std::int64_t step = 0;
  std::string scheme;
  double cosine = 0;
};

/// Sandwich-trains `model` for config.steps steps, recording the conflict on
/// each step's batch before the update.
std::vector<ConflictRow> conflict_trace(SupernetModel& model, const SyntheticTask& task, const TrainConfig& config,
                                        ConflictRestriction restriction = ConflictRestriction::Shared);

struct FidelityConfig {
  TrainConfig supernet;
  TrainConfig standalone;
  std::size_t n_archs = 8;
  std::size_t validation_batches = 16;
  std::uint64_t seed = 0;
  std::string output_dir;  // when set: checkpoints and fidelity_pairs.csv
};

struct FidelityRow {
  std::string scheme;
  std::optional<double> mae, kendall_tau;
  std::vector<PairedEval> pairs;
  std::string error;  // set when this scheme failed
};

/// Trains one supernet per scheme and one standalone model per sampled arch,
/// then compares validation losses. A failing scheme yields a row with
/// `error` set; the others still run.
std::vector<FidelityRow> rank_fidelity_experiment(const SearchSpace& space, const SyntheticTask& task,
                                                  const std::vector<Scheme>& schemes, const FidelityConfig& config);

void write_metrics_csv(const std::string& path, const std::vector<FidelityRow>& rows);
void write_sharing_csv(const std::string& path, const std::vector<SharingRow>& rows);
void write_conflict_csv(const std::string& path, const std::vector<ConflictRow>& rows);

}  // namespace mos
