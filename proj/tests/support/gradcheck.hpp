// SPDX-License-Identifier: Apache-2.0
// Central-difference gradient oracle shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mos/tensor.hpp"

namespace mos::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t reprobed = 0;  // coordinates re-measured with step h / 10
  std::string worst;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

/// Compares backward() gradients of `loss` against central differences for
/// every coordinate of `leaves` (at most `max_coords` per leaf, evenly spaced).
/// A coordinate whose difference window straddles a ReLU kink disagrees at
/// step h but not at h / 10; such coordinates are re-probed once with h / 10.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, double h = 1e-5,
                                 std::size_t max_coords = 1u << 30) {
  for (Tensor& leaf : leaves) leaf.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const Tensor& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(leaf.size(), 0.0);
  }
  GradCheck out;
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    auto values = leaves[p].mutable_data();
    std::size_t stride = std::max<std::size_t>(1, values.size() / std::min(values.size(), max_coords));
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      auto central = [&](double step) {
        values[i] = saved + step;
        double up = loss().item();
        values[i] = saved - step;
        double down = loss().item();
        values[i] = saved;
        return (up - down) / (2.0 * step);
      };
      double numeric = central(h);
      double err = relative_error(analytic[p][i], numeric);
      if (err > 1e-6) {
        double fine = central(h / 10.0);
        double fine_err = relative_error(analytic[p][i], fine);
        ++out.reprobed;
        if (fine_err < err) {
          numeric = fine;
          err = fine_err;
        }
      }
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = "leaf " + std::to_string(p) + " coord " + std::to_string(i) + ": analytic " +
                    std::to_string(analytic[p][i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  for (Tensor& leaf : leaves) leaf.zero_grad();
  return out;
}

}  // namespace mos::testing
