// SPDX-License-Identifier: Apache-2.0
//
// Portable sampling helpers. std::*_distribution output is implementation
// defined, so everything that must reproduce bit-for-bit goes through these.
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace mos {

using Rng = std::mt19937_64;

/// Uniform integer in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);
/// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
/// Standard normal via Box-Muller (one draw per call, two uniforms consumed).
double normal(Rng& rng);
bool bernoulli(Rng& rng, double p);

/// Independent stream for a named purpose, e.g. per-parameter initialization.
Rng derive_rng(std::uint64_t seed, std::string_view key);

std::string save_rng(const Rng& rng);
Rng load_rng(const std::string& state);

}  // namespace mos
