// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mos/tensor.hpp"

namespace mos {

/// Named trainable tensors in registration order.
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  const Tensor& add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  /// Total number of scalar values across all tensors.
  std::size_t numel() const;
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// N(0, std^2) values drawn from a stream keyed by (seed, key).
std::vector<double> normal_init(std::size_t n, double stddev, std::uint64_t seed, std::string_view key);
/// U(-bound, bound) values drawn from a stream keyed by (seed, key).
std::vector<double> uniform_init(std::size_t n, double bound, std::uint64_t seed, std::string_view key);

}  // namespace mos
