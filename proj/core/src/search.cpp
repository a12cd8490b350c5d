// SPDX-License-Identifier: Apache-2.0
#include "mos/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <ostream>
#include <thread>

#include "mos/csv.hpp"
#include "mos/error.hpp"
#include "mos/training.hpp"

namespace mos {

namespace {

class Evaluator {
 public:
  Evaluator(const ArchScore& fitness, std::size_t threads) : fitness_(fitness), threads_(std::max<std::size_t>(1, threads)) {}

  void evaluate(const std::vector<ArchDescriptor>& archs) {
    std::vector<ArchDescriptor> todo;
    for (const ArchDescriptor& a : archs) {
      if (!cache_.count(a) && std::find(todo.begin(), todo.end(), a) == todo.end()) todo.push_back(a);
    }
    std::vector<double> scores(todo.size());
    std::vector<std::exception_ptr> errors(todo.size());
    auto work = [&](std::size_t i) {
      try {
        scores[i] = fitness_(todo[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    };
    std::size_t workers = std::min(threads_, todo.size());
    if (workers <= 1) {
      for (std::size_t i = 0; i < todo.size(); ++i) work(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
          for (std::size_t i; (i = next.fetch_add(1)) < todo.size();) work(i);
        });
      }
      for (std::thread& t : pool) t.join();
    }
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      if (!std::isfinite(scores[i])) throw Error("fitness is not finite");
      cache_.emplace(todo[i], scores[i]);
    }
  }

  double operator()(const ArchDescriptor& a) const { return cache_.at(a); }
  std::size_t size() const { return cache_.size(); }

 private:
  const ArchScore& fitness_;
  std::size_t threads_;
  std::map<ArchDescriptor, double> cache_;
};

class Admission {
 public:
  Admission(const ArchScore& latency, double constraint) : latency_(latency), constraint_(constraint) {}

  bool admit(const ArchDescriptor& a) {
    double ms = latency(a);
    tightest_ = std::min(tightest_, ms);
    if (ms <= constraint_) return true;
    ++rejected_;
    return false;
  }
  double latency(const ArchDescriptor& a) {
    auto it = cache_.find(a);
    if (it == cache_.end()) it = cache_.emplace(a, latency_(a)).first;
    return it->second;
  }
  double tightest() const { return tightest_; }
  std::size_t rejected() const { return rejected_; }

 private:
  const ArchScore& latency_;
  double constraint_;
  double tightest_ = std::numeric_limits<double>::infinity();
  std::size_t rejected_ = 0;
  std::map<ArchDescriptor, double> cache_;
};

ArchDescriptor mutate(const SearchSpace& space, const ArchDescriptor& parent, double prob, Rng& rng) {
  ArchDescriptor child = parent;
  for (std::size_t g = 0; g < child.genes.size(); ++g) {
    if (uniform01(rng) < prob) {
      const auto& values = space.gene_values(g);
      child.genes[g] = values[uniform_index(rng, values.size())];
    }
  }
  return child;
}

ArchDescriptor crossover(const ArchDescriptor& a, const ArchDescriptor& b, Rng& rng) {
  ArchDescriptor child = a;
  for (std::size_t g = 0; g < child.genes.size(); ++g) {
    if (uniform01(rng) < 0.5) child.genes[g] = b.genes[g];
  }
  return child;
}

}  // namespace

void SearchConfig::validate() const {
  if (iterations == 0) throw ConfigError("search iterations must be positive");
  if (population == 0) throw ConfigError("search population must be positive");
  if (parents == 0 || parents > population) throw ConfigError("search parents must lie in [1, population]");
  if (!(mutate_prob > 0 && mutate_prob < 1)) throw ConfigError("mutate_prob must lie in (0, 1)");
  if (!(latency_constraint_ms > 0)) throw ConfigError("latency constraint must be positive");
}

nlohmann::json SearchConfig::to_json() const {
  nlohmann::json j = {{"iterations", iterations}, {"population", population}, {"parents", parents},
                      {"crossovers", crossovers}, {"mutations", mutations},   {"mutate_prob", mutate_prob},
                      {"seed", seed}};
  j["latency_constraint_ms"] = std::isinf(latency_constraint_ms) ? nlohmann::json(nullptr)
                                                                 : nlohmann::json(latency_constraint_ms);
  return j;
}

SearchConfig SearchConfig::from_json(const nlohmann::json& j) {
  SearchConfig c;
  try {
    c.iterations = j.value("iterations", c.iterations);
    c.population = j.value("population", c.population);
    c.parents = j.value("parents", c.parents);
    c.crossovers = j.value("crossovers", c.crossovers);
    c.mutations = j.value("mutations", c.mutations);
    c.mutate_prob = j.value("mutate_prob", c.mutate_prob);
    c.seed = j.value("seed", c.seed);
    if (j.contains("latency_constraint_ms") && !j.at("latency_constraint_ms").is_null()) {
      c.latency_constraint_ms = j.at("latency_constraint_ms").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed search config: ") + e.what());
  }
  c.validate();
  return c;
}

ArchScore supernet_fitness(const SupernetModel& model, std::vector<Batch> validation) {
  return [&model, val = std::move(validation)](const ArchDescriptor& arch) {
    return validation_loss(model, arch, val);
  };
}

SearchResult evolutionary_search(const SearchSpace& space, const ArchScore& fitness, const ArchScore& latency,
                                 const SearchConfig& config, const SearchOptions& options) {
  config.validate();
  Rng rng = derive_rng(config.seed, "evolution");
  Evaluator score(fitness, options.threads);
  Admission gate(latency, config.latency_constraint_ms);

  std::vector<ArchDescriptor> population;
  for (std::size_t tries = 0; population.size() < config.population && tries < config.population * options.max_attempts;
       ++tries) {
    ArchDescriptor a = space.sample_random(rng);
    if (gate.admit(a)) population.push_back(std::move(a));
  }
  if (population.empty()) throw InfeasibleError(config.latency_constraint_ms, gate.tightest());

  auto rank = [&](std::vector<ArchDescriptor>& pop) {
    score.evaluate(pop);
    std::stable_sort(pop.begin(), pop.end(), [&](const ArchDescriptor& a, const ArchDescriptor& b) {
      double fa = score(a), fb = score(b);
      return fa != fb ? fa < fb : a < b;
    });
  };

  SearchResult result;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    rank(population);
    std::vector<ArchDescriptor> parents(population.begin(),
                                        population.begin() + static_cast<std::ptrdiff_t>(
                                                                 std::min(config.parents, population.size())));
    IterationSummary s;
    s.iteration = it;
    s.best_fitness = score(parents.front());
    for (const ArchDescriptor& p : parents) s.mean_parent_fitness += score(p);
    s.mean_parent_fitness /= static_cast<double>(parents.size());
    s.best_arch = space.format(parents.front());
    s.best_latency_ms = gate.latency(parents.front());
    s.population = population.size();
    s.evaluations = score.size();
    s.rejected = gate.rejected();
    result.trace.push_back(std::move(s));

    std::vector<ArchDescriptor> next = parents;
    for (std::size_t i = 0; i < config.mutations; ++i) {
      for (std::size_t t = 0; t < options.max_attempts; ++t) {
        ArchDescriptor child = mutate(space, parents[uniform_index(rng, parents.size())], config.mutate_prob, rng);
        if (gate.admit(child)) {
          next.push_back(std::move(child));
          break;
        }
      }
    }
    for (std::size_t i = 0; i < config.crossovers; ++i) {
      for (std::size_t t = 0; t < options.max_attempts; ++t) {
        const ArchDescriptor& a = parents[uniform_index(rng, parents.size())];
        const ArchDescriptor& b = parents[uniform_index(rng, parents.size())];
        ArchDescriptor child = crossover(a, b, rng);
        if (gate.admit(child)) {
          next.push_back(std::move(child));
          break;
        }
      }
    }
    population = std::move(next);
  }
  rank(population);
  result.best = population.front();
  result.fitness = score(result.best);
  result.latency_ms = gate.latency(result.best);
  return result;
}

void write_trace_jsonl(std::ostream& out, double constraint_ms, const std::vector<IterationSummary>& trace) {
  for (const IterationSummary& s : trace) {
    nlohmann::json j = {{"constraint_ms", std::isinf(constraint_ms) ? nlohmann::json(nullptr) : nlohmann::json(constraint_ms)},
                        {"iteration", s.iteration},
                        {"best_fitness", s.best_fitness},
                        {"mean_parent_fitness", s.mean_parent_fitness},
                        {"best_arch", s.best_arch},
                        {"best_latency_ms", s.best_latency_ms},
                        {"population", s.population},
                        {"evaluations", s.evaluations},
                        {"rejected", s.rejected}};
    out << j.dump() << '\n';
  }
}

std::vector<ParetoEntry> compute_pareto(const SearchSpace& space, const ArchScore& fitness,
                                        const ArchScore& predicted_latency, const ArchScore& measured_latency,
                                        std::vector<double> constraints, const SearchConfig& config,
                                        const SearchOptions& options) {
  std::sort(constraints.begin(), constraints.end());
  std::vector<ParetoEntry> out;
  for (double c : constraints) {
    ParetoEntry e;
    e.constraint_ms = c;
    SearchConfig sc = config;
    sc.latency_constraint_ms = c;
    try {
      SearchResult r = evolutionary_search(space, fitness, predicted_latency, sc, options);
      e.arch = r.best;
      e.predicted_latency_ms = r.latency_ms;
      e.val_loss = r.fitness;
      e.trace = std::move(r.trace);
      if (measured_latency) e.measured_latency_ms = measured_latency(r.best);
    } catch (const InfeasibleError& err) {
      e.error = err.what();
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_pareto_csv(const std::string& path, const SearchSpace& space, const std::vector<ParetoEntry>& entries) {
  CsvWriter csv(path, {"constraint_ms", "arch_id", "raw_encoding", "predicted_latency_ms", "measured_latency_ms",
                       "val_loss"});
  for (const ParetoEntry& e : entries) {
    if (!e.arch) {
      csv.row({format_number(e.constraint_ms), "", "", "", "", ""});
      continue;
    }
    csv.row({format_number(e.constraint_ms), space.format(*e.arch), join_numbers(space.encode(*e.arch).raw, ';'),
             format_number(e.predicted_latency_ms), format_number(e.measured_latency_ms), format_number(e.val_loss)});
  }
}

}  // namespace mos
