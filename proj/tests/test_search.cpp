// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <filesystem>

#include "mos/csv.hpp"
#include "mos/error.hpp"
#include "mos/latency.hpp"
#include "mos/search.hpp"
#include "support/fixtures.hpp"

using namespace mos;
using mos::testing::toy_encoder_space;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Deterministic pseudo-loss per arch, unrelated to any model.
double hashed_fitness(const ArchDescriptor& a) {
  std::uint64_t h = 1469598103934665603ull;
  for (int g : a.genes) h = (h ^ static_cast<std::uint64_t>(g + 1000)) * 1099511628211ull;
  return static_cast<double>(h % 100003) / 100003.0;
}

struct Exhaustive {
  ArchDescriptor arch;
  double fitness = kInf;
};

Exhaustive exhaustive_argmin(const SearchSpace& space, const ArchScore& fitness, const ArchScore& latency,
                             double constraint) {
  Exhaustive best;
  for (const ArchDescriptor& a : space.enumerate()) {
    if (latency(a) > constraint) continue;
    double f = fitness(a);
    if (f < best.fitness || (f == best.fitness && a < best.arch)) best = {a, f};
  }
  return best;
}

SearchConfig small_search(std::uint64_t seed, double constraint = kInf) {
  SearchConfig c;
  c.iterations = 10;
  c.population = 30;
  c.parents = 8;
  c.mutations = 12;
  c.crossovers = 12;
  c.seed = seed;
  c.latency_constraint_ms = constraint;
  return c;
}

SearchSpace three_arch_space() {
  return SearchSpace(SpaceKind::Encoder, {{"layers", {1}}, {"hidden", {8}}, {"ffn_ratio", {1, 2, 3}}, {"heads", {1}}},
                     FixedDims{8, 4, 4});
}

}  // namespace

TEST(TrimmedMean, DropsTenPercentFromEachEnd) {
  std::vector<double> t(10);
  std::iota(t.begin(), t.end(), 1.0);
  EXPECT_DOUBLE_EQ(trimmed_mean(t), 5.5);
  std::vector<double> skewed = {100, 1, 2, 3, 4, 5, 6, 7, 8, -50};
  EXPECT_DOUBLE_EQ(trimmed_mean(skewed), 4.5);
  EXPECT_EQ(trimmed_mean(std::vector<double>(30, 2.25)), 2.25);
  // 19 samples: floor(1.9) = 1 dropped per side.
  std::vector<double> n19(19);
  std::iota(n19.begin(), n19.end(), 0.0);
  n19[18] = 1e9;
  EXPECT_DOUBLE_EQ(trimmed_mean(n19), 9.0);
  EXPECT_THROW(trimmed_mean(std::vector<double>(9, 1.0)), ProtocolError);
}

TEST(MeasureLatency, ProtocolAndOrdering) {
  SearchSpace space = SearchSpace::encoder_default();
  LatencyProtocol p;
  p.repeats = 9;
  StaticModel small = StaticModel::fresh(space, space.sample_small(), 1);
  EXPECT_THROW(measure_latency(small, p), ProtocolError);
  p.repeats = 30;
  StaticModel big = StaticModel::fresh(space, space.sample_big(), 1);
  std::vector<double> big_ms, small_ms;
  for (int run = 0; run < 3; ++run) {
    big_ms.push_back(measure_latency(big, p));
    small_ms.push_back(measure_latency(small, p));
  }
  std::sort(big_ms.begin(), big_ms.end());
  std::sort(small_ms.begin(), small_ms.end());
  EXPECT_GT(small_ms[1], 0.0);
  EXPECT_GE(big_ms[1], small_ms[1]);
}

TEST(LatencyDataset, EmptyBoundedAndReproducible) {
  SearchSpace space = SearchSpace::encoder_default();
  LatencyOracle oracle = synthetic_latency_oracle(space, {0.5, 1e-4});
  Rng r0(1);
  EXPECT_TRUE(build_latency_dataset(space, oracle, 0, r0).empty());
  Rng r1(4), r2(4);
  auto a = build_latency_dataset(space, oracle, 50, r1);
  auto b = build_latency_dataset(space, oracle, 50, r2);
  ASSERT_EQ(a.size(), 50u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].arch, b[i].arch);
    EXPECT_EQ(a[i].latency_ms, b[i].latency_ms);
    for (double e : a[i].encoding) {
      EXPECT_GE(e, 0.0);
      EXPECT_LE(e, 1.0);
    }
    ArchDescriptor arch = space.parse(a[i].arch);
    EXPECT_DOUBLE_EQ(a[i].latency_ms, 0.5 + 1e-4 * static_cast<double>(space.parameter_count(arch)));
  }
}

TEST(LatencyDataset, FailedMeasurementsAreSkippedAndLogged) {
  SearchSpace space = SearchSpace::encoder_default();
  int calls = 0;
  LatencyOracle flaky = [&](const ArchDescriptor&) -> double {
    ++calls;
    if (calls % 3 == 0) throw ProtocolError("timer failed");
    if (calls % 5 == 0) return -1.0;
    return 2.0;
  };
  std::ostringstream log;
  Rng rng(1);
  auto data = build_latency_dataset(space, flaky, 15, rng, &log);
  EXPECT_EQ(calls, 15);
  EXPECT_EQ(data.size(), 15u - 5u - 2u);
  EXPECT_NE(log.str().find("timer failed"), std::string::npos);
}

TEST(LatencyDataset, CsvRoundTrip) {
  SearchSpace space = SearchSpace::encoder_default();
  Rng rng(2);
  auto data = build_latency_dataset(space, synthetic_latency_oracle(space, {}), 10, rng);
  std::string path = (std::filesystem::temp_directory_path() / "mos_latency.csv").string();
  write_latency_dataset(path, data);
  auto back = read_latency_dataset(path);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].arch, data[i].arch);
    EXPECT_EQ(back[i].encoding, data[i].encoding);
    EXPECT_EQ(back[i].latency_ms, data[i].latency_ms);
  }
}

TEST(LatencyPredictor, LearnsLinearFunctionOfEncoding) {
  SearchSpace space = SearchSpace::encoder_default();
  std::vector<LatencySample> data;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    ArchDescriptor a = space.sample_random(rng);
    auto enc = space.encode(a).normalized;
    data.push_back({space.format(a), enc, 1.0 + std::accumulate(enc.begin(), enc.end(), 0.0)});
  }
  PredictorConfig c;
  c.seed = 9;
  PredictorFit fit = LatencyPredictor::fit(data, c);
  EXPECT_EQ(fit.train_size, 160u);
  EXPECT_EQ(fit.test_size, 40u);
  ASSERT_TRUE(fit.heldout_kendall.has_value());
  EXPECT_GE(*fit.heldout_kendall, 0.9);
  for (const ArchDescriptor& a : space.enumerate()) EXPECT_TRUE(std::isfinite(fit.predictor.predict(space, a)));

  PredictorFit again = LatencyPredictor::fit(data, c);
  EXPECT_EQ(encode_checkpoint(again.predictor.to_checkpoint()), encode_checkpoint(fit.predictor.to_checkpoint()));
  LatencyPredictor loaded =
      LatencyPredictor::from_checkpoint(decode_checkpoint(encode_checkpoint(fit.predictor.to_checkpoint())));
  ArchDescriptor big = space.sample_big();
  EXPECT_EQ(loaded.predict(space, big), fit.predictor.predict(space, big));
}

TEST(LatencyPredictor, RejectsDegenerateData) {
  std::vector<LatencySample> flat;
  for (int i = 0; i < 30; ++i) flat.push_back({"", {double(i), 1.0}, 4.0});
  EXPECT_THROW(LatencyPredictor::fit(flat, {}), FitError);
  std::vector<LatencySample> few(flat.begin(), flat.begin() + 19);
  few[0].latency_ms = 5;
  EXPECT_THROW(LatencyPredictor::fit(few, {}), FitError);
  flat[3].encoding.push_back(0);
  flat[0].latency_ms = 1;
  EXPECT_THROW(LatencyPredictor::fit(flat, {}), FitError);
}

TEST(SearchConfig, ValidationAndJson) {
  SearchConfig c;
  c.parents = 200;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SearchConfig();
  c.mutate_prob = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  SearchConfig d;
  EXPECT_TRUE(d.to_json().at("latency_constraint_ms").is_null());
  EXPECT_TRUE(SearchConfig::from_json(d.to_json()) == d);
  d.latency_constraint_ms = 3.5;
  EXPECT_TRUE(SearchConfig::from_json(d.to_json()) == d);
}

TEST(EvolutionarySearch, ThreeArchEnumerationOracle) {
  SearchSpace space = three_arch_space();
  auto ratio = [&](const ArchDescriptor& a) { return space.value(a, "ffn_ratio"); };
  ArchScore fitness = [&](const ArchDescriptor& a) { return static_cast<double>(ratio(a)); };  // A=1, B=2, C=3
  ArchScore latency = [&](const ArchDescriptor& a) { return ratio(a) == 1 ? 10.0 : 1.0; };    // A infeasible
  SearchConfig c = small_search(1, 5.0);
  SearchResult r = evolutionary_search(space, fitness, latency, c);
  EXPECT_EQ(ratio(r.best), 2);
  EXPECT_EQ(r.fitness, 2.0);
  EXPECT_LE(r.latency_ms, 5.0);
}

TEST(EvolutionarySearch, MatchesExhaustiveSearch) {
  SearchSpace space = SearchSpace::encoder_default();
  ArchScore latency = synthetic_latency_oracle(space, {1.0, 1e-4});
  std::vector<double> lats;
  for (const ArchDescriptor& a : space.enumerate()) lats.push_back(latency(a));
  std::sort(lats.begin(), lats.end());
  for (double constraint : {kInf, lats[lats.size() / 2], lats[5]}) {
    Exhaustive oracle = exhaustive_argmin(space, hashed_fitness, latency, constraint);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      SearchConfig c;
      c.seed = seed;
      c.latency_constraint_ms = constraint;
      SearchResult r = evolutionary_search(space, hashed_fitness, latency, c);
      EXPECT_EQ(r.best, oracle.arch) << "constraint " << constraint << " seed " << seed;
    }
  }
}

TEST(EvolutionarySearch, AdmissionInvariantAndMembership) {
  SearchSpace space = SearchSpace::encoder_default();
  ArchScore latency = synthetic_latency_oracle(space, {1.0, 1e-4});
  std::vector<double> lats;
  for (const ArchDescriptor& a : space.enumerate()) lats.push_back(latency(a));
  std::sort(lats.begin(), lats.end());
  const double constraint = lats[lats.size() / 3];
  std::size_t scored = 0;
  ArchScore guarded = [&](const ArchDescriptor& a) {
    ++scored;
    EXPECT_TRUE(space.contains(a));
    EXPECT_LE(latency(a), constraint);
    return hashed_fitness(a);
  };
  SearchResult r = evolutionary_search(space, guarded, latency, small_search(4, constraint));
  EXPECT_GT(scored, 0u);
  EXPECT_LE(latency(r.best), constraint);
  for (const IterationSummary& s : r.trace) EXPECT_LE(s.best_latency_ms, constraint);
}

TEST(EvolutionarySearch, DeterministicAndIndependentOfThreads) {
  SearchSpace space = SearchSpace::encoder_default();
  ArchScore latency = synthetic_latency_oracle(space, {});
  SearchResult a = evolutionary_search(space, hashed_fitness, latency, small_search(7));
  SearchResult b = evolutionary_search(space, hashed_fitness, latency, small_search(7));
  SearchOptions parallel;
  parallel.threads = 4;
  SearchResult c = evolutionary_search(space, hashed_fitness, latency, small_search(7), parallel);
  std::ostringstream ta, tb, tc;
  write_trace_jsonl(ta, kInf, a.trace);
  write_trace_jsonl(tb, kInf, b.trace);
  write_trace_jsonl(tc, kInf, c.trace);
  EXPECT_EQ(ta.str(), tb.str());
  EXPECT_EQ(ta.str(), tc.str());
  EXPECT_EQ(a.trace.size(), 10u);
  EXPECT_NE(ta.str().find("\"constraint_ms\":null"), std::string::npos);
}

TEST(EvolutionarySearch, InfeasibleConstraintNamesTightestLatency) {
  SearchSpace space = SearchSpace::encoder_default();
  ArchScore latency = synthetic_latency_oracle(space, {1.0, 1e-4});
  double tightest = kInf;
  for (const ArchDescriptor& a : space.enumerate()) tightest = std::min(tightest, latency(a));
  SearchConfig c = small_search(1, tightest * 0.5);
  c.population = 500;  // enough draws to hit the smallest arch
  try {
    evolutionary_search(space, hashed_fitness, latency, c);
    FAIL();
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.tightest_ms(), tightest);
    EXPECT_EQ(e.constraint_ms(), tightest * 0.5);
  }
}

TEST(EvolutionarySearch, FitnessErrorsPropagate) {
  SearchSpace space = toy_encoder_space();
  ArchScore bad = [](const ArchDescriptor&) -> double { throw Error("boom"); };
  EXPECT_THROW(evolutionary_search(space, bad, [](const ArchDescriptor&) { return 1.0; }, small_search(1)), Error);
  SearchOptions parallel;
  parallel.threads = 3;
  EXPECT_THROW(evolutionary_search(space, bad, [](const ArchDescriptor&) { return 1.0; }, small_search(1), parallel),
               Error);
}

TEST(Pareto, SortedFeasibleAndMonotone) {
  SearchSpace space = SearchSpace::encoder_default();
  ArchScore latency = synthetic_latency_oracle(space, {1.0, 1e-4});
  std::vector<double> lats;
  for (const ArchDescriptor& a : space.enumerate()) lats.push_back(latency(a));
  std::sort(lats.begin(), lats.end());
  std::vector<double> constraints = {lats[60], lats[0] * 0.5, lats[10], lats[30]};
  SearchConfig cfg;
  cfg.seed = 2;
  auto front = compute_pareto(space, hashed_fitness, latency, latency, constraints, cfg);
  ASSERT_EQ(front.size(), 4u);
  EXPECT_FALSE(front[0].arch.has_value());
  EXPECT_FALSE(front[0].error.empty());
  for (std::size_t i = 1; i < front.size(); ++i) {
    EXPECT_LT(front[i - 1].constraint_ms, front[i].constraint_ms);
    ASSERT_TRUE(front[i].arch.has_value());
    EXPECT_LE(front[i].predicted_latency_ms, front[i].constraint_ms);
    EXPECT_EQ(front[i].measured_latency_ms, front[i].predicted_latency_ms);
    if (i > 1) EXPECT_LE(front[i].val_loss, front[i - 1].val_loss);
  }
  SearchConfig single = cfg;
  single.latency_constraint_ms = lats[30];
  EXPECT_EQ(*front[3].arch, evolutionary_search(space, hashed_fitness, latency, single).best);

  std::string path = (std::filesystem::temp_directory_path() / "mos_pareto.csv").string();
  write_pareto_csv(path, space, front);
  CsvTable csv = read_csv(path);
  EXPECT_EQ(csv.header, (std::vector<std::string>{"constraint_ms", "arch_id", "raw_encoding", "predicted_latency_ms",
                                                  "measured_latency_ms", "val_loss"}));
  ASSERT_EQ(csv.rows.size(), 4u);
  EXPECT_EQ(csv.rows[0][1], "");
  EXPECT_EQ(csv.rows[1][1], space.format(*front[1].arch));
  EXPECT_EQ(csv.rows[1][2].find(','), std::string::npos);
}

TEST(SupernetFitness, FrozenAndThreadSafe) {
  SearchSpace space = toy_encoder_space();
  SupernetConfig sc;
  sc.scheme = Scheme::NeuronMoS;
  sc.router_hidden = 8;
  SupernetModel model(space, sc);
  SyntheticTask task;
  task.vocab_size = 8;
  task.seq_len = 4;
  ArchScore f = supernet_fitness(model, validation_set(task, 4, 2));
  ArchScore lat = synthetic_latency_oracle(space, {});
  SearchOptions parallel;
  parallel.threads = 4;
  SearchResult serial = evolutionary_search(space, f, lat, small_search(3));
  SearchResult threaded = evolutionary_search(space, f, lat, small_search(3), parallel);
  EXPECT_EQ(serial.best, threaded.best);
  EXPECT_EQ(serial.fitness, threaded.fitness);
  Exhaustive oracle = exhaustive_argmin(space, f, lat, kInf);
  EXPECT_EQ(serial.best, oracle.arch);
}
