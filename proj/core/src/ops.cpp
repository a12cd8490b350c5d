// SPDX-License-Identifier: Apache-2.0
#include "mos/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mos/error.hpp"

namespace mos {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

std::size_t view_rows(const Node& n) { return n.shape.size() == 1 ? 1 : n.value.size() / n.shape.back(); }
std::size_t view_cols(const Node& n) { return n.shape.back(); }

ConstMatMap as_matrix(const Node& n) { return ConstMatMap(n.value.data(), view_rows(n), view_cols(n)); }
MatMap grad_matrix(Node& n) { return MatMap(n.grad_buffer().data(), view_rows(n), view_cols(n)); }
ConstMatMap out_grad(const Node& n) { return ConstMatMap(n.grad.data(), view_rows(n), view_cols(n)); }

const Node& node_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
  return *t.node();
}

// Builds the result node. Graph edges and the backward closure are recorded
// only when recording is enabled and some input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->seq = detail::next_sequence();
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.node()->requires_grad;
    if (any) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_many(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                        BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->seq = detail::next_sequence();
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.node()->requires_grad;
    if (any) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

void require_nonempty(const Tensor& t, const char* op) {
  if (!t.defined() || t.size() == 0) throw ArgumentError(std::string(op) + ": empty tensor");
}

struct Broadcast {
  std::size_t rows, cols, yrows, ycols;
  std::size_t index(std::size_t r, std::size_t c) const {
    return (yrows == 1 ? 0 : r) * ycols + (ycols == 1 ? 0 : c);
  }
};

Broadcast broadcast_plan(const Node& x, const Node& y, const char* op) {
  Broadcast b{view_rows(x), view_cols(x), view_rows(y), view_cols(y)};
  bool rows_ok = b.yrows == b.rows || b.yrows == 1;
  bool cols_ok = b.ycols == b.cols || b.ycols == 1;
  if (!rows_ok || !cols_ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(y.shape) + " onto " +
                         shape_string(x.shape));
  }
  return b;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Node& an = node_of(a);
  const Node& bn = node_of(b);
  std::size_t p = view_rows(an), q = view_cols(an), r = view_cols(bn);
  if (view_rows(bn) != q) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(an.shape) + " x " +
                         shape_string(bn.shape));
  }
  std::vector<double> out(p * r);
  MatMap(out.data(), p, r).noalias() = as_matrix(an) * as_matrix(bn);
  return make_result({p, r}, std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    auto g = out_grad(self);
    if (a.requires_grad) grad_matrix(a).noalias() += g * as_matrix(b).transpose();
    if (b.requires_grad) grad_matrix(b).noalias() += as_matrix(a).transpose() * g;
  });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  const Node& an = node_of(a);
  const Node& bn = node_of(b);
  std::size_t p = view_rows(an), q = view_cols(an), r = view_rows(bn);
  if (view_cols(bn) != q) {
    throw DimensionError("matmul_bt: inner dimensions differ: " + shape_string(an.shape) + " x " +
                         shape_string(bn.shape) + "^T");
  }
  std::vector<double> out(p * r);
  MatMap(out.data(), p, r).noalias() = as_matrix(an) * as_matrix(bn).transpose();
  return make_result({p, r}, std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    auto g = out_grad(self);
    if (a.requires_grad) grad_matrix(a).noalias() += g * as_matrix(b);
    if (b.requires_grad) grad_matrix(b).noalias() += g.transpose() * as_matrix(a);
  });
}

Tensor transpose(const Tensor& x) {
  const Node& xn = node_of(x);
  std::size_t r = view_rows(xn), c = view_cols(xn);
  std::vector<double> out(r * c);
  MatMap(out.data(), c, r) = as_matrix(xn).transpose();
  return make_result({c, r}, std::move(out), {x}, [](Node& self) {
    Node& x = *self.inputs[0];
    grad_matrix(x) += out_grad(self).transpose();
  });
}

Tensor add(const Tensor& x, const Tensor& y) {
  const Node& xn = node_of(x);
  const Node& yn = node_of(y);
  Broadcast plan = broadcast_plan(xn, yn, "add");
  std::vector<double> out(xn.value.size());
  for (std::size_t r = 0; r < plan.rows; ++r) {
    for (std::size_t c = 0; c < plan.cols; ++c) {
      out[r * plan.cols + c] = xn.value[r * plan.cols + c] + yn.value[plan.index(r, c)];
    }
  }
  return make_result(xn.shape, std::move(out), {x, y}, [plan](Node& self) {
    if (wants(self, 0)) {
      auto gx = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto gy = self.inputs[1]->grad_buffer();
      for (std::size_t r = 0; r < plan.rows; ++r) {
        for (std::size_t c = 0; c < plan.cols; ++c) gy[plan.index(r, c)] += self.grad[r * plan.cols + c];
      }
    }
  });
}

Tensor mul(const Tensor& x, const Tensor& y) {
  const Node& xn = node_of(x);
  const Node& yn = node_of(y);
  Broadcast plan = broadcast_plan(xn, yn, "mul");
  std::vector<double> out(xn.value.size());
  for (std::size_t r = 0; r < plan.rows; ++r) {
    for (std::size_t c = 0; c < plan.cols; ++c) {
      out[r * plan.cols + c] = xn.value[r * plan.cols + c] * yn.value[plan.index(r, c)];
    }
  }
  return make_result(xn.shape, std::move(out), {x, y}, [plan](Node& self) {
    const Node& x = *self.inputs[0];
    const Node& y = *self.inputs[1];
    if (x.requires_grad) {
      auto gx = self.inputs[0]->grad_buffer();
      for (std::size_t r = 0; r < plan.rows; ++r) {
        for (std::size_t c = 0; c < plan.cols; ++c) {
          gx[r * plan.cols + c] += self.grad[r * plan.cols + c] * y.value[plan.index(r, c)];
        }
      }
    }
    if (y.requires_grad) {
      auto gy = self.inputs[1]->grad_buffer();
      for (std::size_t r = 0; r < plan.rows; ++r) {
        for (std::size_t c = 0; c < plan.cols; ++c) {
          gy[plan.index(r, c)] += self.grad[r * plan.cols + c] * x.value[r * plan.cols + c];
        }
      }
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  const Node& xn = node_of(x);
  std::vector<double> out(xn.value);
  for (double& v : out) v *= factor;
  return make_result(xn.shape, std::move(out), {x}, [factor](Node& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  const Node& xn = node_of(x);
  std::vector<double> out(xn.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xn.value[i] > 0.0 ? xn.value[i] : 0.0;
  return make_result(xn.shape, std::move(out), {x}, [](Node& self) {
    const Node& x = *self.inputs[0];
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (x.value[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_nonempty(x, "softmax_rows");
  const Node& xn = node_of(x);
  std::size_t rows = view_rows(xn), cols = view_cols(xn);
  std::vector<double> out(xn.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xn.value.data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return make_result(xn.shape, std::move(out), {x}, [rows, cols](Node& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_nonempty(x, "layer_norm");
  const Node& xn = node_of(x);
  const Node& gn = node_of(gamma);
  const Node& bn = node_of(beta);
  std::size_t rows = view_rows(xn), cols = view_cols(xn);
  if (gn.value.size() != cols || bn.value.size() != cols) {
    throw DimensionError("layer_norm: affine parameters " + shape_string(gn.shape) + "/" + shape_string(bn.shape) +
                         " do not match feature size " + std::to_string(cols));
  }
  std::vector<double> xhat(xn.value.size());
  std::vector<double> inv_std(rows, 0.0);
  std::vector<double> out(xn.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xn.value.data() + r * cols;
    double mu = std::accumulate(in, in + cols, 0.0) / static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    if (var >= 1e-12) {
      inv_std[r] = 1.0 / std::sqrt(var + eps);
      for (std::size_t c = 0; c < cols; ++c) xhat[r * cols + c] = (in[c] - mu) * inv_std[r];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = xhat[r * cols + c] * gn.value[c] + bn.value[c];
    }
  }
  return make_result(xn.shape, std::move(out), {x, gamma, beta},
                     [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Node& gamma = *self.inputs[1];
                       const double* g = self.grad.data();
                       if (self.inputs[1]->requires_grad) {
                         auto gg = self.inputs[1]->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xhat[r * cols + c];
                       }
                       if (self.inputs[2]->requires_grad) {
                         auto gb = self.inputs[2]->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                       }
                       if (self.inputs[0]->requires_grad) {
                         auto gx = self.inputs[0]->grad_buffer();
                         const double n = static_cast<double>(cols);
                         for (std::size_t r = 0; r < rows; ++r) {
                           if (inv_std[r] == 0.0) continue;
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) {
                             double d = g[r * cols + c] * gamma.value[c];
                             mean_d += d;
                             mean_dx += d * xhat[r * cols + c];
                           }
                           mean_d /= n;
                           mean_dx /= n;
                           for (std::size_t c = 0; c < cols; ++c) {
                             double d = g[r * cols + c] * gamma.value[c];
                             gx[r * cols + c] += inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dx);
                           }
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const Node& tn = node_of(table);
  std::size_t vocab = view_rows(tn), cols = view_cols(tn);
  if (ids.empty()) throw ArgumentError("embedding: empty id list");
  std::vector<int> saved(ids.begin(), ids.end());
  std::vector<double> out(ids.size() * cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ArgumentError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab) +
                          " rows");
    }
    std::copy_n(tn.value.data() + ids[i] * cols, cols, out.data() + i * cols);
  }
  return make_result({ids.size(), cols}, std::move(out), {table}, [cols, saved = std::move(saved)](Node& self) {
    auto gt = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) gt[saved[i] * cols + c] += self.grad[i * cols + c];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing) {
  require_nonempty(logits, "cross_entropy");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ArgumentError("cross_entropy: smoothing must lie in [0, 1)");
  const Node& ln = node_of(logits);
  std::size_t rows = view_rows(ln), classes = view_cols(ln);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                         " rows");
  }
  std::size_t count = 0;
  double total = 0.0;
  std::vector<double> probs(ln.value.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= classes) {
      throw ArgumentError("cross_entropy: target " + std::to_string(targets[r]) + " outside " +
                          std::to_string(classes) + " classes");
    }
    const double* in = ln.value.data() + r * classes;
    double mx = *std::max_element(in, in + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(in[c] - mx);
    double lse = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(in[c] - lse);
    double nll = lse - in[targets[r]];
    if (smoothing > 0.0) {
      double avg = std::accumulate(in, in + classes, 0.0) / static_cast<double>(classes);
      nll = (1.0 - smoothing) * nll + smoothing * (lse - avg);
    }
    total += nll;
    ++count;
  }
  if (count == 0) throw ArgumentError("cross_entropy: no target positions");
  std::vector<int> saved(targets.begin(), targets.end());
  double inv = 1.0 / static_cast<double>(count);
  return make_result({1}, {total * inv}, {logits},
                     [classes, inv, smoothing, probs = std::move(probs), saved = std::move(saved)](Node& self) {
                       auto gl = self.inputs[0]->grad_buffer();
                       double g = self.grad[0] * inv;
                       double spread = g * smoothing / static_cast<double>(classes);
                       for (std::size_t r = 0; r < saved.size(); ++r) {
                         if (saved[r] < 0) continue;
                         for (std::size_t c = 0; c < classes; ++c) {
                           gl[r * classes + c] += g * probs[r * classes + c];
                           if (smoothing > 0.0) gl[r * classes + c] -= spread;
                         }
                         gl[r * classes + saved[r]] -= g * (1.0 - smoothing);
                       }
                     });
}

Tensor mse(const Tensor& prediction, std::span<const double> targets) {
  require_nonempty(prediction, "mse");
  const Node& pn = node_of(prediction);
  if (pn.value.size() != targets.size()) throw DimensionError("mse: prediction and target sizes differ");
  std::vector<double> diff(targets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = pn.value[i] - targets[i];
    total += diff[i] * diff[i];
  }
  double n = static_cast<double>(diff.size());
  return make_result({1}, {total / n}, {prediction}, [n, diff = std::move(diff)](Node& self) {
    auto gp = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < diff.size(); ++i) gp[i] += self.grad[0] * 2.0 * diff[i] / n;
  });
}

Tensor sum(const Tensor& x) {
  require_nonempty(x, "sum");
  const Node& xn = node_of(x);
  double total = std::accumulate(xn.value.begin(), xn.value.end(), 0.0);
  return make_result({1}, {total}, {x}, [](Node& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (double& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_nonempty(x, "mean");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor slice(const Tensor& x, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols) {
  const Node& xn = node_of(x);
  std::size_t rows = view_rows(xn), cols = view_cols(xn);
  if (nrows == 0 || ncols == 0 || row0 + nrows > rows || col0 + ncols > cols) {
    throw DimensionError("slice: block rows [" + std::to_string(row0) + "," + std::to_string(row0 + nrows) +
                         ") cols [" + std::to_string(col0) + "," + std::to_string(col0 + ncols) + ") outside " +
                         shape_string(xn.shape));
  }
  std::vector<double> out(nrows * ncols);
  for (std::size_t r = 0; r < nrows; ++r) {
    std::copy_n(xn.value.data() + (row0 + r) * cols + col0, ncols, out.data() + r * ncols);
  }
  Shape shape = xn.shape.size() == 1 ? Shape{ncols} : Shape{nrows, ncols};
  return make_result(std::move(shape), std::move(out), {x}, [row0, col0, nrows, ncols, cols](Node& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < nrows; ++r) {
      for (std::size_t c = 0; c < ncols; ++c) gx[(row0 + r) * cols + col0 + c] += self.grad[r * ncols + c];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const Node& xn = node_of(x);
  if (shape_size(shape) != xn.value.size()) {
    throw DimensionError("reshape: " + shape_string(xn.shape) + " to " + shape_string(shape));
  }
  return make_result(std::move(shape), xn.value, {x}, [](Node& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no parts");
  std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result_many({rows, cols}, std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) {
        auto g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += in->value.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no parts");
  std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  std::vector<double> out(rows * cols);
  std::size_t c0 = 0;
  for (const Tensor& p : parts) {
    std::size_t pc = p.cols();
    auto src = p.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(src.data() + r * pc, pc, out.data() + r * cols + c0);
    c0 += pc;
  }
  return make_result_many({rows, cols}, std::move(out), parts, [rows, cols](Node& self) {
    std::size_t c0 = 0;
    for (auto& in : self.inputs) {
      std::size_t pc = view_cols(*in);
      if (in->requires_grad) {
        auto g = in->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += self.grad[r * cols + c0 + c];
      }
      c0 += pc;
    }
  });
}

Tensor concat_seq(const std::vector<Tensor>& parts, std::size_t batch) {
  if (parts.empty()) throw ArgumentError("concat_seq: no parts");
  if (batch == 0) throw ArgumentError("concat_seq: batch must be positive");
  std::size_t cols = parts.front().cols();
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_seq: feature sizes differ");
    if (p.rows() % batch != 0) throw DimensionError("concat_seq: rows not divisible by batch");
    lens.push_back(p.rows() / batch);
    total += lens.back();
  }
  std::vector<double> out(batch * total * cols);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t row = b * total;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      auto src = parts[i].data();
      std::copy_n(src.data() + b * lens[i] * cols, lens[i] * cols, out.data() + row * cols);
      row += lens[i];
    }
  }
  return make_result_many({batch * total, cols}, std::move(out), parts, [batch, total, cols, lens](Node& self) {
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t row = b * total;
      for (std::size_t i = 0; i < lens.size(); ++i) {
        auto& in = self.inputs[i];
        if (in->requires_grad) {
          auto g = in->grad_buffer();
          for (std::size_t k = 0; k < lens[i] * cols; ++k) g[b * lens[i] * cols + k] += self.grad[row * cols + k];
        }
        row += lens[i];
      }
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t heads,
                 bool causal) {
  const Node& qn = node_of(q);
  const Node& kn = node_of(k);
  const Node& vn = node_of(v);
  if (batch == 0 || heads == 0) throw ArgumentError("attention: batch and heads must be positive");
  std::size_t width = view_cols(qn);
  if (view_cols(kn) != width || view_cols(vn) != width || view_rows(kn) != view_rows(vn)) {
    throw DimensionError("attention: q/k/v shapes " + shape_string(qn.shape) + ", " + shape_string(kn.shape) + ", " +
                         shape_string(vn.shape) + " are incompatible");
  }
  if (width % heads != 0) throw DimensionError("attention: width not divisible by head count");
  if (view_rows(qn) % batch != 0 || view_rows(kn) % batch != 0) {
    throw DimensionError("attention: rows not divisible by batch");
  }
  std::size_t d = width / heads;
  std::size_t sq = view_rows(qn) / batch, sk = view_rows(kn) / batch;
  if (causal && sq != sk) throw DimensionError("attention: causal mask needs equal query/key lengths");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  std::vector<double> out(batch * sq * width);
  std::vector<double> probs(batch * heads * sq * sk);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStridedMap qb(qn.value.data() + b * sq * width + h * d, sq, d, Eigen::OuterStride<>(width));
      ConstStridedMap kb(kn.value.data() + b * sk * width + h * d, sk, d, Eigen::OuterStride<>(width));
      ConstStridedMap vb(vn.value.data() + b * sk * width + h * d, sk, d, Eigen::OuterStride<>(width));
      MatMap p(probs.data() + (b * heads + h) * sq * sk, sq, sk);
      p.noalias() = (qb * kb.transpose()) * inv_sqrt_d;
      for (std::size_t i = 0; i < sq; ++i) {
        if (causal) {
          for (std::size_t j = i + 1; j < sk; ++j) p(i, j) = neg_inf;
        }
        double mx = p.row(i).maxCoeff();
        double total = 0.0;
        for (std::size_t j = 0; j < sk; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          total += p(i, j);
        }
        p.row(i) /= total;
      }
      StridedMap ob(out.data() + b * sq * width + h * d, sq, d, Eigen::OuterStride<>(width));
      ob.noalias() = p * vb;
    }
  }
  return make_result(
      {batch * sq, width}, std::move(out), {q, k, v},
      [batch, heads, d, sq, sk, width, inv_sqrt_d, probs = std::move(probs)](Node& self) {
        Node& qn = *self.inputs[0];
        Node& kn = *self.inputs[1];
        Node& vn = *self.inputs[2];
        double* gq = qn.requires_grad ? qn.grad_buffer().data() : nullptr;
        double* gk = kn.requires_grad ? kn.grad_buffer().data() : nullptr;
        double* gv = vn.requires_grad ? vn.grad_buffer().data() : nullptr;
        RowMat dp(sq, sk);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            std::size_t qoff = b * sq * width + h * d;
            std::size_t koff = b * sk * width + h * d;
            ConstStridedMap go(self.grad.data() + qoff, sq, d, Eigen::OuterStride<>(width));
            ConstStridedMap qb(qn.value.data() + qoff, sq, d, Eigen::OuterStride<>(width));
            ConstStridedMap kb(kn.value.data() + koff, sk, d, Eigen::OuterStride<>(width));
            ConstStridedMap vb(vn.value.data() + koff, sk, d, Eigen::OuterStride<>(width));
            ConstMatMap p(probs.data() + (b * heads + h) * sq * sk, sq, sk);
            if (gv) StridedMap(gv + koff, sk, d, Eigen::OuterStride<>(width)).noalias() += p.transpose() * go;
            if (!gq && !gk) continue;
            dp.noalias() = go * vb.transpose();
            for (std::size_t i = 0; i < sq; ++i) {
              double dot = p.row(i).dot(dp.row(i));
              dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * inv_sqrt_d;
            }
            if (gq) StridedMap(gq + qoff, sq, d, Eigen::OuterStride<>(width)).noalias() += dp * kb;
            if (gk) StridedMap(gk + koff, sk, d, Eigen::OuterStride<>(width)).noalias() += dp.transpose() * qb;
          }
        }
      });
}

}  // namespace mos
