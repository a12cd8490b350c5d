// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "mos/elastic.hpp"
#include "mos/error.hpp"
#include "mos/ops.hpp"
#include "mos/router.hpp"
#include "mos/supernet.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace mos;
using mos::testing::check_gradients;
using mos::testing::max_scaled_diff;
using mos::testing::random_batch;
using mos::testing::toy_encoder_decoder_space;
using mos::testing::toy_encoder_space;

namespace {

ExpertBank example_bank() {
  ExpertBank bank;
  bank.experts = {Tensor::matrix({{1, 0}, {0, 1}, {1, 1}}), Tensor::matrix({{2, 2}, {2, 0}, {0, 2}})};
  bank.biases = {Tensor::vector({0, 0, 0}), Tensor::vector({0, 0, 0})};
  return bank;
}

SupernetConfig config_for(Scheme scheme, std::size_t m = 2, std::uint64_t seed = 1) {
  SupernetConfig c;
  c.scheme = scheme;
  c.experts = m;
  c.seed = seed;
  c.router_hidden = 16;
  return c;
}

// Moves weights off the tiny N(0, 0.02) init so outputs and gradients are not
// dominated by the embedding scale.
void perturb(ParameterSet& params, std::uint64_t seed, double amplitude = 0.3) {
  Rng rng(seed);
  for (auto& [name, t] : params) {
    for (double& v : t.mutable_data()) v += uniform(rng, -amplitude, amplitude);
  }
}

}  // namespace

TEST(ExtractTop, LeadingBlock) {
  Tensor w = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(extract_top(w, 2, 2).to_vector(), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_TRUE(extract_top(w, 3, 2).same_node(w));
  EXPECT_EQ(extract_top(w, 2, 1).to_vector(), (std::vector<double>{1, 3}));
  EXPECT_EQ(extract_top_bias(Tensor::vector({7, 8, 9}), 2).to_vector(), (std::vector<double>{7, 8}));
  EXPECT_THROW(extract_top(w, 4, 2), DimensionError);
  EXPECT_THROW(extract_top(w, 0, 2), DimensionError);
  EXPECT_THROW(extract_top_bias(Tensor::vector({1}), 2), DimensionError);
}

TEST(ExtractTop, NestedArchsShareLeadingRows) {
  Rng rng(1);
  std::vector<double> v(6 * 5);
  for (double& x : v) x = uniform(rng, -1, 1);
  Tensor w = Tensor::from({6, 5}, v);
  Tensor small = extract_top(w, 3, 2), big = extract_top(w, 5, 4);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(small.at(r, c), big.at(r, c));
}

TEST(LayerwiseMix, HandEvaluatedExample) {
  ExpertBank bank = example_bank();
  Tensor alpha = Tensor::vector({0.25, 0.75});
  LinearWeights w = mix_layerwise(bank, alpha, 2, 2);
  EXPECT_EQ(w.weight.to_vector(), (std::vector<double>{1.75, 1.5, 1.5, 0.25}));
  Tensor out = layerwise_forward(Tensor::from({1, 2}, {1, 1}), bank, alpha, 2, 2);
  EXPECT_EQ(out.to_vector(), (std::vector<double>{3.25, 1.75}));
}

TEST(LayerwiseMix, OneHotEqualsStandard) {
  ExpertBank bank = example_bank();
  Tensor x = Tensor::from({2, 2}, {1, -2, 0.5, 3});
  Tensor routed = layerwise_forward(x, bank, Tensor::vector({1, 0}), 3, 2);
  Tensor plain = standard_forward(x, {bank.experts[0], bank.biases[0]}, 3, 2);
  EXPECT_EQ(routed.to_vector(), plain.to_vector());
}

TEST(LayerwiseMix, BiasMixesWithAlpha) {
  ExpertBank bank = example_bank();
  bank.biases = {Tensor::vector({1, 2, 3}), Tensor::vector({-1, 0, 1})};
  LinearWeights w = mix_layerwise(bank, Tensor::vector({0.25, 0.75}), 2, 2);
  EXPECT_EQ(w.bias.to_vector(), (std::vector<double>{-0.5, 0.5}));
}

TEST(NeuronwiseMix, HandEvaluatedExample) {
  ExpertBank bank = example_bank();
  Tensor beta = Tensor::matrix({{1, 0}, {0, 1}, {0.5, 0.5}});
  LinearWeights w = mix_neuronwise(bank, beta, 2, 2);
  EXPECT_EQ(w.weight.to_vector(), (std::vector<double>{1, 0, 2, 0}));
  EXPECT_EQ(neuronwise_forward(Tensor::from({1, 2}, {1, 1}), bank, beta, 2, 2).to_vector(),
            (std::vector<double>{1, 2}));
}

TEST(NeuronwiseMix, EqualRowsReduceToLayerwise) {
  ExpertBank bank = example_bank();
  bank.biases = {Tensor::vector({1, 2, 3}), Tensor::vector({-1, 0, 1})};
  Tensor x = Tensor::from({2, 2}, {0.3, -1, 2, 0.5});
  Tensor alpha = Tensor::vector({0.3, 0.7});
  Tensor beta = Tensor::matrix({{0.3, 0.7}, {0.3, 0.7}, {0.3, 0.7}});
  std::vector<double> a = layerwise_forward(x, bank, alpha, 3, 2).to_vector();
  std::vector<double> b = neuronwise_forward(x, bank, beta, 3, 2).to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Mix, DimensionErrors) {
  ExpertBank bank = example_bank();
  EXPECT_THROW(mix_layerwise(bank, Tensor::vector({1, 0, 0}), 2, 2), DimensionError);
  EXPECT_THROW(mix_layerwise(bank, Tensor::vector({0.5, 0.5}), 4, 2), DimensionError);
  EXPECT_THROW(mix_neuronwise(bank, Tensor::matrix({{1, 0}, {0, 1}}), 2, 2), DimensionError);
  EXPECT_THROW(layerwise_forward(Tensor::zeros({1, 3}), bank, Tensor::vector({0.5, 0.5}), 2, 2), DimensionError);
  ExpertBank ragged = example_bank();
  ragged.experts[1] = Tensor::zeros({2, 2});
  EXPECT_THROW(ragged.validate(), DimensionError);
}

TEST(Mix, MixtureGradientsMatchFiniteDifferences) {
  Rng rng(17);
  auto rnd = [&](Shape s) {
    std::vector<double> v(shape_size(s));
    for (double& x : v) x = uniform(rng, -1, 1);
    return Tensor::parameter(s, v);
  };
  ExpertBank bank;
  bank.experts = {rnd({4, 3}), rnd({4, 3})};
  bank.biases = {rnd({4}), rnd({4})};
  Tensor logits_a = rnd({2}), logits_b = rnd({4, 2});
  Tensor x = rnd({5, 2});
  auto layer = [&] { return mean(relu(layerwise_forward(x, bank, softmax_rows(logits_a), 3, 2))); };
  auto neuron = [&] { return mean(relu(neuronwise_forward(x, bank, softmax_rows(logits_b), 3, 2))); };
  std::vector<Tensor> leaves{bank.experts[0], bank.experts[1], bank.biases[0], bank.biases[1], x};
  auto r1 = check_gradients(layer, [&] { auto l = leaves; l.push_back(logits_a); return l; }());
  auto r2 = check_gradients(neuron, [&] { auto l = leaves; l.push_back(logits_b); return l; }());
  EXPECT_LE(r1.max_rel_error, 1e-6) << r1.worst;
  EXPECT_LE(r2.max_rel_error, 1e-6) << r2.worst;
}

TEST(Router, ZeroParametersGiveUniformAlignments) {
  for (AlignMode mode : {AlignMode::Layer, AlignMode::Neuron}) {
    ParameterSet params;
    Router router(mode, 4, 8, 2, {{"l", 3}}, RouterSharing::SharedTrunk, params, 0);
    for (auto& [name, t] : params)
      for (double& v : t.mutable_data()) v = 0.0;
    std::vector<double> enc{0.1, 0.5, 1.0, 0.0};
    AlignmentVector a = router.route(enc, 0);
    std::vector<double> want(mode == AlignMode::Layer ? 2 : 6, 0.5);
    EXPECT_EQ(a.values(), want);
  }
}

TEST(Router, OneByOneMlpMatchesDirectFormula) {
  ParameterSet params;
  Router router(AlignMode::Layer, 1, 1, 2, {{"l", 1}}, RouterSharing::SharedTrunk, params, 0);
  params.at("router.trunk.weight").mutable_data()[0] = 2.0;
  params.at("router.trunk.bias").mutable_data()[0] = -0.5;
  auto w = params.at("router.out.l.weight").mutable_data();
  w[0] = 1.0;
  w[1] = -1.0;
  auto b = params.at("router.out.l.bias").mutable_data();
  b[0] = 0.3;
  b[1] = 0.0;
  std::vector<double> enc{0.7};
  double h = std::max(0.0, 2.0 * 0.7 - 0.5);
  double z0 = h + 0.3, z1 = -h;
  double a0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
  std::vector<double> got = router.route(enc, 0).values();
  EXPECT_NEAR(got[0], a0, 1e-15);
  EXPECT_NEAR(got[1], 1.0 - a0, 1e-15);
}

TEST(Router, WrongEncodingSizeIsArgumentError) {
  ParameterSet params;
  Router router(AlignMode::Layer, 4, 8, 2, {{"l", 3}}, RouterSharing::PerLayer, params, 0);
  std::vector<double> enc{0.1, 0.2};
  EXPECT_THROW(router.route(enc, 0), ArgumentError);
  EXPECT_THROW(router.head_index("missing"), ArgumentError);
}

TEST(Router, ArityAndSimplexOverSpace) {
  SearchSpace space = SearchSpace::encoder_default();
  for (Scheme scheme : {Scheme::LayerMoS, Scheme::NeuronMoS}) {
    for (RouterSharing sharing : {RouterSharing::SharedTrunk, RouterSharing::PerLayer}) {
      SupernetConfig c = config_for(scheme, 3);
      c.router_sharing = sharing;
      c.router_hidden = 128;
      SupernetModel model(space, c);
      const Router& r = *model.router();
      for (std::size_t h = 0; h < r.heads().size(); ++h) {
        std::size_t want = scheme == Scheme::LayerMoS ? 3 : r.heads()[h].n_out_big * 3;
        EXPECT_EQ(r.output_arity(h), want);
      }
      Rng rng(4);
      for (int i = 0; i < 30; ++i) {
        ArchDescriptor a = space.sample_random(rng);
        for (const auto& [layer, align] : model.alignments(a)) {
          const Tensor& w = align.weights;
          std::size_t rows = scheme == Scheme::LayerMoS ? 1 : w.rows();
          for (std::size_t row = 0; row < rows; ++row) {
            double s = 0;
            for (std::size_t col = 0; col < w.cols(); ++col) {
              EXPECT_GE(w.at(row, col), 0.0);
              s += w.at(row, col);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
          }
        }
      }
    }
  }
}

TEST(PartitionRule, MedianRuleSendsExtremesToDifferentExperts) {
  SearchSpace space = SearchSpace::encoder_default();
  PartitionRule rule = PartitionRule::quantiles(space, 2);
  EXPECT_EQ(rule.route(space, space.sample_small()).values(), (std::vector<double>{1, 0}));
  EXPECT_EQ(rule.route(space, space.sample_big()).values(), (std::vector<double>{0, 1}));
  std::size_t low = 0;
  for (const ArchDescriptor& a : space.enumerate()) low += rule.expert_for(space, a) == 0;
  EXPECT_EQ(low, 36u);
}

TEST(Supernet, ForwardShapePerScheme) {
  for (const SearchSpace& space : {SearchSpace::encoder_default(), SearchSpace::encoder_decoder_default()}) {
    for (Scheme scheme : {Scheme::Standard, Scheme::LayerMoS, Scheme::NeuronMoS, Scheme::FewShot}) {
      SupernetModel model(space, config_for(scheme));
      Rng rng(2);
      Batch batch = random_batch(space, 3, 5, rng);
      Tensor logits = model.forward(space.sample_big(), batch);
      EXPECT_EQ(logits.shape(), (Shape{3, 5, 32}));
      double loss = model.loss(space.sample_small(), batch).item();
      EXPECT_TRUE(std::isfinite(loss));
      EXPECT_GE(loss, 0.0);
    }
  }
}

TEST(Supernet, InvalidConfigAndMembership) {
  SearchSpace space = SearchSpace::encoder_default();
  SupernetConfig bad = config_for(Scheme::LayerMoS, 0);
  EXPECT_THROW(SupernetModel(space, bad), ConfigError);
  SupernetModel model(space, config_for(Scheme::Standard));
  ArchDescriptor a = space.sample_big();
  a.genes[0] = 9;
  EXPECT_THROW(model.collapse(a), MembershipError);
  EXPECT_THROW(model.alignments(space.sample_big()), UnsupportedScheme);
}

TEST(Supernet, ExpertsAreDrawnIndependently) {
  SupernetModel model(SearchSpace::encoder_default(), config_for(Scheme::LayerMoS, 2));
  ExpertBank bank = model.expert_bank("enc.0.fc1");
  ASSERT_EQ(bank.size(), 2u);
  EXPECT_NE(bank.experts[0].to_vector(), bank.experts[1].to_vector());
  double sq = 0;
  for (double v : bank.experts[1].data()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq / bank.experts[1].size()), 0.02, 0.002);
}

TEST(Supernet, FullModelGradientsMatchFiniteDifferences) {
  for (const SearchSpace& space : {toy_encoder_space(), toy_encoder_decoder_space()}) {
    for (Scheme scheme : {Scheme::Standard, Scheme::LayerMoS, Scheme::NeuronMoS, Scheme::FewShot}) {
      SupernetModel model(space, config_for(scheme, 2, 3));
      perturb(model.parameters(), 5);
      Rng rng(6);
      Batch batch = random_batch(space, 2, 3, rng);
      ArchDescriptor a = space.sample_random(rng);
      std::vector<Tensor> leaves;
      for (auto& [name, t] : model.parameters()) leaves.push_back(t);
      auto r = check_gradients([&] { return model.loss(a, batch); }, leaves, 1e-5, 4);
      EXPECT_LE(r.max_rel_error, 1e-4) << to_string(scheme) << " " << space.format(a) << ": " << r.worst;
    }
  }
}

TEST(Collapse, StaticForwardMatchesSupernet) {
  for (const SearchSpace& space : {SearchSpace::encoder_default(), SearchSpace::encoder_decoder_default()}) {
    for (Scheme scheme : {Scheme::Standard, Scheme::LayerMoS, Scheme::NeuronMoS, Scheme::FewShot}) {
      SupernetModel model(space, config_for(scheme));
      perturb(model.parameters(), 8, 0.1);
      Rng rng(12);
      for (int i = 0; i < 5; ++i) {
        ArchDescriptor a = space.sample_random(rng);
        StaticModel s = model.collapse(a);
        EXPECT_EQ(s.parameter_count(), space.parameter_count(a));
        Batch batch = random_batch(space, 2, 6, rng);
        NoGradGuard no_grad;
        std::vector<double> want = model.forward(a, batch).to_vector();
        std::vector<double> got = s.forward(batch).to_vector();
        EXPECT_LE(max_scaled_diff(got, want), 1e-9) << to_string(scheme);
        if (scheme == Scheme::Standard) EXPECT_EQ(got, want);
      }
    }
  }
}

TEST(Collapse, FfnTensorsHaveArchitectureShapeAndNoExperts) {
  SearchSpace space = SearchSpace::encoder_default();
  SupernetModel model(space, config_for(Scheme::NeuronMoS));
  ArchDescriptor a = space.parse("layers=3 hidden=32 ffn_ratio=3 heads=2");
  StaticModel s = model.collapse(a);
  EXPECT_EQ(s.parameters().at("enc.1.fc1.weight").shape(), (Shape{96, 32}));
  EXPECT_EQ(s.parameters().at("enc.1.fc2.weight").shape(), (Shape{32, 96}));
  EXPECT_EQ(s.parameters().at("enc.1.fc1.bias").shape(), (Shape{96}));
  for (const auto& [name, t] : s.parameters()) {
    EXPECT_EQ(name.find("router"), std::string::npos);
    EXPECT_EQ(name.find("expert"), std::string::npos);
    EXPECT_TRUE(t.is_leaf());
  }
}

TEST(Degeneracy, SingleExpertMatchesStandardBitForBit) {
  for (const SearchSpace& space : {SearchSpace::encoder_default(), SearchSpace::encoder_decoder_default()}) {
    SupernetModel standard(space, config_for(Scheme::Standard, 1, 4));
    SupernetModel layer(space, config_for(Scheme::LayerMoS, 1, 4));
    SupernetModel neuron(space, config_for(Scheme::NeuronMoS, 1, 4));
    Rng rng(30);
    for (int i = 0; i < 5; ++i) {
      ArchDescriptor a = space.sample_random(rng);
      Batch batch = random_batch(space, 2, 4, rng);
      std::vector<double> want = standard.forward(a, batch).to_vector();
      EXPECT_EQ(layer.forward(a, batch).to_vector(), want);
      EXPECT_EQ(neuron.forward(a, batch).to_vector(), want);
    }
  }
}

TEST(FewShot, GradientReachesOnlySelectedExpert) {
  SearchSpace space = SearchSpace::encoder_default();
  SupernetModel model(space, config_for(Scheme::FewShot));
  Rng rng(1);
  Batch batch = random_batch(space, 2, 4, rng);
  ArchDescriptor small = space.sample_small();
  backward(model.loss(small, batch));
  for (const std::string& layer : model.routed_layers()) {
    ExpertBank bank = model.expert_bank(layer);
    if (layer.rfind("enc.0.", 0) == 0 || layer.rfind("enc.1.", 0) == 0) {
      EXPECT_TRUE(bank.experts[0].has_grad()) << layer;
    }
    EXPECT_FALSE(bank.experts[1].has_grad()) << layer;
    EXPECT_FALSE(bank.biases[1].has_grad()) << layer;
  }
}

TEST(Nesting, StandardSubnetIgnoresTrailingRows) {
  SearchSpace space = SearchSpace::encoder_default();
  SupernetModel model(space, config_for(Scheme::Standard));
  ArchDescriptor a = space.parse("layers=2 hidden=32 ffn_ratio=2 heads=2");
  Rng rng(3);
  Batch batch = random_batch(space, 2, 5, rng);
  std::vector<double> before = model.forward(a, batch).to_vector();
  auto w = model.parameters().at("enc.0.fc1.weight").mutable_data();
  const std::size_t cols = 64;
  for (std::size_t r = 64; r < 256; ++r)
    for (std::size_t c = 0; c < cols; ++c) w[r * cols + c] += 1.0;
  auto q = model.parameters().at("enc.1.self_attn.q.weight").mutable_data();
  for (std::size_t i = 16 * 64; i < q.size(); ++i) q[i] -= 3.0;
  model.parameters().at("enc.3.fc2.bias").mutable_data()[0] = 5.0;
  EXPECT_EQ(model.forward(a, batch).to_vector(), before);
}
