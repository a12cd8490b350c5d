// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over mos::Tensor. Matrix ops work on the 2-D view
// of a tensor: a rank-1 tensor of length C behaves as a 1xC row.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mos/tensor.hpp"

namespace mos {

/// a[p x q] * b[q x r].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[p x q] * b[r x q]^T, the shape used by linear layers storing W as out x in.
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

/// x + y. y must match x, or be a row (1 x C or length C), a column (R x 1)
/// or a single element, in which case it is broadcast over x.
Tensor add(const Tensor& x, const Tensor& y);
/// x * y with the same broadcasting rules as add().
Tensor mul(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
/// Softmax along the last axis (each row of the 2-D view).
Tensor softmax_rows(const Tensor& x);
/// Layer normalization along the last axis followed by the affine map.
/// Rows with variance below 1e-12 normalize to zero.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Rows of table[V x C] selected by ids; result is ids.size() x C.
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Mean token cross-entropy of logits[N x V] against targets; targets < 0 are
/// ignored. Returns a scalar in nats. With smoothing eps the target
/// distribution is (1 - eps) one-hot plus eps uniform.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing = 0.0);
/// Mean squared error against constant targets.
Tensor mse(const Tensor& prediction, std::span<const double> targets);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

/// 2-D block [row0, row0+nrows) x [col0, col0+ncols). A rank-1 input keeps
/// rank 1 (rows must then be 0..1).
Tensor slice(const Tensor& x, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Each part is [batch*S_i x C] laid out batch-major; the result concatenates
/// the sequences of every batch element: [batch*sum(S_i) x C].
Tensor concat_seq(const std::vector<Tensor>& parts, std::size_t batch);

/// Multi-head scaled dot-product attention. q is [batch*Sq x heads*d], k and v
/// are [batch*Sk x heads*d]; head h uses columns [h*d, (h+1)*d). With causal
/// set, query i attends keys 0..i only (requires Sq == Sk).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 std::size_t heads, bool causal);

}  // namespace mos
