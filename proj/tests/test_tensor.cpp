// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mos/error.hpp"
#include "mos/ops.hpp"
#include "mos/random.hpp"
#include "mos/tensor.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace mos;
using mos::testing::check_gradients;
using mos::testing::op_cases;
using mos::testing::OpCase;
using mos::testing::random_param;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  std::vector<double> c(a.rows() * b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) c[i * b.cols() + j] += a.at(i, k) * b.at(k, j);
  return c;
}

}  // namespace

TEST(Tensor, FactoriesKeepShapeAndData) {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::zeros({0, 2}), ArgumentError);
}

TEST(Matmul, IdentityAndColumn) {
  Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_EQ(matmul(a, eye).to_vector(), (std::vector<double>{1, 2, 3, 4}));
  Tensor m = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  Tensor col = Tensor::matrix({{1}, {1}});
  EXPECT_EQ(matmul(m, col).to_vector(), (std::vector<double>{1, 1, 2}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, MatchesNaiveProduct) {
  Rng rng(3);
  Tensor a = random_param({4, 7}, rng), b = random_param({7, 5}, rng);
  std::vector<double> want = naive_matmul(a, b);
  std::vector<double> got = matmul(a, b).to_vector();
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  Tensor bt = random_param({5, 7}, rng);
  std::vector<double> via_t = matmul(a, transpose(bt)).to_vector();
  std::vector<double> fused = matmul_bt(a, bt).to_vector();
  for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_NEAR(fused[i], via_t[i], 1e-12);
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor a = random_param({3, 3}, rng), b = random_param({3, 3}, rng);
  auto r = check_gradients([&] { return sum(matmul(a, b)); }, {a, b});
  EXPECT_LE(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Backward, SumGivesOnes) {
  Tensor w = Tensor::parameter({5}, {1, 2, 3, 4, 5});
  backward(sum(w));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), std::vector<double>(5, 1.0));
}

TEST(Backward, RepeatedCallsAccumulate) {
  Rng rng(2);
  Tensor w = random_param({3, 2}, rng);
  Tensor x = Tensor::from({2, 3}, {1, -2, 0.5, 3, 0, -1});
  Tensor loss = sum(relu(matmul(x, w)));
  backward(loss);
  std::vector<double> once(w.grad().begin(), w.grad().end());
  backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 2.0 * once[i]);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor w = Tensor::parameter({2}, {1, 2});
  EXPECT_THROW(backward(scale(w, 2.0)), ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor w = Tensor::parameter({2}, {1, 2});
  Tensor y;
  {
    NoGradGuard guard;
    y = sum(w);
  }
  EXPECT_FALSE(y.requires_grad());
  backward(y);
  EXPECT_FALSE(w.has_grad());
}

TEST(Softmax, ZerosGiveHalfAndRowsSumToOne) {
  EXPECT_EQ(softmax_rows(Tensor::vector({0, 0})).to_vector(), (std::vector<double>{0.5, 0.5}));
  Rng rng(5);
  Tensor x = random_param({6, 9}, rng, -30, 30);
  Tensor p = softmax_rows(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 9; ++c) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantRowIsZeroBeforeAffine) {
  Tensor x = Tensor::from({1, 4}, {3, 3, 3, 3});
  Tensor gamma = Tensor::vector({2, 2, 2, 2}), beta = Tensor::vector({0, 0, 0, 0});
  EXPECT_EQ(layer_norm(x, gamma, beta).to_vector(), std::vector<double>(4, 0.0));
  Tensor shifted = layer_norm(x, gamma, Tensor::vector({1, -1, 0, 0.5}));
  EXPECT_EQ(shifted.to_vector(), (std::vector<double>{1, -1, 0, 0.5}));
}

TEST(LayerNorm, MatchesDirectFormula) {
  Rng rng(8);
  Tensor x = random_param({3, 5}, rng);
  Tensor g = random_param({5}, rng), b = random_param({5}, rng);
  Tensor y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 5; ++c) mu += x.at(r, c) / 5;
    for (std::size_t c = 0; c < 5; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu) / 5;
    for (std::size_t c = 0; c < 5; ++c) {
      double want = (x.at(r, c) - mu) / std::sqrt(var + 1e-5) * g.data()[c] + b.data()[c];
      EXPECT_NEAR(y.at(r, c), want, 1e-12);
    }
  }
}

TEST(CrossEntropy, NonNegativeAndUniformBaseline) {
  Tensor logits = Tensor::zeros({3, 32});
  std::vector<int> t{0, 5, 31};
  EXPECT_NEAR(cross_entropy(logits, t).item(), std::log(32.0), 1e-12);
  std::vector<int> ignored{-1, -1, 4};
  EXPECT_NEAR(cross_entropy(logits, ignored).item(), std::log(32.0), 1e-12);
  std::vector<int> none{-1, -1, -1};
  EXPECT_THROW(cross_entropy(logits, none), ArgumentError);
  std::vector<int> bad{0, 0, 32};
  EXPECT_THROW(cross_entropy(logits, bad), ArgumentError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  Tensor logits = random_param({5, 4}, rng, -2, 2);
  std::vector<int> t{0, 3, -1, 2, 1};
  auto r = check_gradients([&] { return cross_entropy(logits, t); }, {logits});
  EXPECT_LE(r.max_rel_error, 1e-5) << r.worst;
  auto smooth = check_gradients([&] { return cross_entropy(logits, t, 0.1); }, {logits});
  EXPECT_LE(smooth.max_rel_error, 1e-5) << smooth.worst;
}

TEST(Ops, EmptyInputsAreArgumentErrors) {
  EXPECT_THROW(sum(Tensor()), Error);
  EXPECT_THROW(softmax_rows(Tensor()), Error);
}

TEST(Ops, BroadcastAddAndMul) {
  Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(add(x, Tensor::vector({10, 20})).to_vector(), (std::vector<double>{11, 22, 13, 24}));
  EXPECT_EQ(mul(x, Tensor::matrix({{2}, {3}})).to_vector(), (std::vector<double>{2, 4, 9, 12}));
  EXPECT_EQ(mul(x, Tensor::vector({-1})).to_vector(), (std::vector<double>{-1, -2, -3, -4}));
  EXPECT_THROW(add(x, Tensor::vector({1, 2, 3})), DimensionError);
}

TEST(Ops, SliceConcatReshape) {
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(slice(x, 1, 2, 1, 1).to_vector(), (std::vector<double>{4, 6}));
  EXPECT_EQ(concat_rows({x, x}).rows(), 6u);
  EXPECT_EQ(concat_cols({x, x}).cols(), 4u);
  EXPECT_EQ(reshape(x, {2, 3}).shape(), (Shape{2, 3}));
  EXPECT_THROW(reshape(x, {4, 2}), DimensionError);
  Tensor a = Tensor::from({4, 1}, {1, 2, 3, 4});  // batch 2, seq 2
  Tensor b = Tensor::from({2, 1}, {9, 8});        // batch 2, seq 1
  EXPECT_EQ(concat_seq({a, b}, 2).to_vector(), (std::vector<double>{1, 2, 9, 3, 4, 8}));
}

TEST(Attention, MatchesNaiveEvaluation) {
  Rng rng(21);
  const std::size_t B = 2, S = 3, H = 2, d = 2;
  Tensor q = random_param({B * S, H * d}, rng), k = random_param({B * S, H * d}, rng),
         v = random_param({B * S, H * d}, rng);
  for (bool causal : {false, true}) {
    Tensor out = attention(q, k, v, B, H, causal);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < S; ++i) {
          std::vector<double> s(S, -INFINITY);
          double mx = -INFINITY;
          for (std::size_t j = 0; j < S; ++j) {
            if (causal && j > i) continue;
            double dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += q.at(b * S + i, h * d + c) * k.at(b * S + j, h * d + c);
            s[j] = dot / std::sqrt(double(d));
            mx = std::max(mx, s[j]);
          }
          double z = 0;
          for (double& e : s) z += (e = std::exp(e - mx));
          for (std::size_t c = 0; c < d; ++c) {
            double want = 0;
            for (std::size_t j = 0; j < S; ++j) want += s[j] / z * v.at(b * S + j, h * d + c);
            EXPECT_NEAR(out.at(b * S + i, h * d + c), want, 1e-12);
          }
        }
  }
}

// Every differentiable op against central differences on inputs in [-1, 1].
TEST(GradientProperty, EveryOpOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (OpCase& cs : op_cases(seed)) {
      auto r = check_gradients(cs.loss, cs.leaves);
      EXPECT_LE(r.max_rel_error, 1e-4) << cs.name << " seed " << seed << ": " << r.worst;
    }
  }
}

TEST(GradientProperty, ToyFfnBlock) {
  Rng rng(99);
  Tensor x = random_param({4, 6}, rng);
  Tensor w1 = random_param({8, 6}, rng), b1 = random_param({8}, rng);
  Tensor w2 = random_param({6, 8}, rng), b2 = random_param({6}, rng);
  Tensor g = random_param({6}, rng), be = random_param({6}, rng);
  auto loss = [&] {
    Tensor h = relu(add(matmul_bt(layer_norm(x, g, be), w1), b1));
    Tensor y = add(x, add(matmul_bt(h, w2), b2));
    return mean(mul(y, y));
  };
  auto r = check_gradients(loss, {x, w1, b1, w2, b2, g, be});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  Rng rng(4);
  Tensor a = random_param({16, 16}, rng), b = random_param({16, 16}, rng);
  std::vector<double> first = softmax_rows(matmul(a, b)).to_vector();
  for (int i = 0; i < 5; ++i) EXPECT_EQ(softmax_rows(matmul(a, b)).to_vector(), first);
}
