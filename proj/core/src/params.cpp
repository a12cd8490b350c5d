// SPDX-License-Identifier: Apache-2.0
#include "mos/params.hpp"

#include "mos/error.hpp"
#include "mos/random.hpp"

namespace mos {

const Tensor& ParameterSet::add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
  return entries_.back().second;
}

bool ParameterSet::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

const Tensor& ParameterSet::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].second;
}

Tensor& ParameterSet::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].second;
}

std::size_t ParameterSet::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

std::vector<double> normal_init(std::size_t n, double stddev, std::uint64_t seed, std::string_view key) {
  Rng rng = derive_rng(seed, key);
  std::vector<double> v(n);
  for (double& x : v) x = stddev * normal(rng);
  return v;
}

std::vector<double> uniform_init(std::size_t n, double bound, std::uint64_t seed, std::string_view key) {
  Rng rng = derive_rng(seed, key);
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, -bound, bound);
  return v;
}

}  // namespace mos
