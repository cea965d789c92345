#include <gtest/gtest.h>

#include "common/error.hpp"
#include "diffusion/denoiser.hpp"
#include "flow_oracle.hpp"
#include "gradcheck.hpp"
#include "tensor/optim.hpp"

#include <set>

namespace ds {
namespace {

std::vector<double> values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

nn::Linear fixed_linear(std::vector<double> w, std::size_t in, std::size_t out) {
  return {Tensor({in, out}, std::move(w)), Tensor::full({out}, 0.0)};
}

TEST(FlowFunction, SingleTokenIdentityExample) {
  FlowAttention f;
  f.q = f.k = f.v = f.o = nn::Mlp::make_identity();
  f.norm_identity = true;
  const Tensor out = flow_function(f, Tensor(Shape{1, 1, 1}, std::vector<double>{3.0}), Tensor(Shape{1, 1, 1}, std::vector<double>{2.0}));
  EXPECT_EQ(out.item(), 8.0);
}

TEST(FlowFunction, UniformAttentionExample) {
  FlowAttention f;
  // Zero queries give equal logits over both keys.
  f.q = {fixed_linear({0, 0, 0, 0}, 2, 2), fixed_linear({0, 0, 0, 0}, 2, 2), false};
  f.k = f.v = f.o = nn::Mlp::make_identity();
  f.norm_gamma = Tensor::full({2}, 0.0);
  f.norm_beta = Tensor::full({2}, 0.0);
  const Tensor f_out({1, 2, 2}, {0, 2, 2, 0});
  std::vector<Tensor> w;
  const Tensor out = flow_function(f, Tensor::full({1, 2, 2}, 0.3), f_out, &w);
  ASSERT_EQ(w.size(), 1u);
  for (double x : w[0].values()) EXPECT_EQ(x, 0.5);
  // O = [1, 1] per query, BN term vanishes, Out = O + F_out.
  EXPECT_EQ(values(out), (std::vector<double>{1, 3, 3, 1}));
}

class FlowOracle : public ::testing::TestWithParam<std::size_t> {};

TEST_P(FlowOracle, MatchesLoopReimplementation) {
  const std::size_t heads = GetParam();
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(13 + seed);
    ParameterStore store(rng());
    auto flow = FlowAttention::create(store, "f", 8, heads, 1.0);
    flow.queries_from_out = seed % 2 == 1;
    testing::randomize_parameters(store, rng, 0.5);
    const Tensor fi = Tensor::randn({2, 4, 8}, rng), fo = Tensor::randn({2, 4, 8}, rng);
    const Tensor out = flow_function(flow, fi, fo);
    const auto got = out.values();
    const auto want = testing::flow_function_loops(flow, values(fi), values(fo), 2, 4, 8);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-9) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Heads, FlowOracle, ::testing::Values(1, 2, 4, 8));

TEST(FlowFunction, JointTokenPermutationIsEquivariant) {
  std::mt19937_64 rng(8);
  ParameterStore store(1);
  const auto flow = FlowAttention::create(store, "f", 4, 2, 1.0);
  testing::randomize_parameters(store, rng);
  const Tensor fi = Tensor::randn({1, 5, 4}, rng), fo = Tensor::randn({1, 5, 4}, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  auto permute = [&](const Tensor& t) {
    std::vector<double> v;
    for (std::size_t p : perm) v.insert(v.end(), t.values().begin() + p * 4, t.values().begin() + p * 4 + 4);
    return Tensor({1, 5, 4}, v);
  };
  const Tensor a = permute(flow_function(flow, fi, fo));
  const Tensor b = flow_function(flow, permute(fi), permute(fo));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(FlowFunction, ShapeMismatchThrows) {
  ParameterStore store;
  const auto flow = FlowAttention::create(store, "f", 4, 2, 1.0);
  EXPECT_THROW(flow_function(flow, Tensor::full({1, 3, 4}, 0.1), Tensor::full({1, 4, 4}, 0.1)), ShapeError);
  EXPECT_THROW(FlowAttention::create(store, "g", 6, 4, 1.0), ConfigError);
}

struct BlockFixture {
  ParameterStore store{5};
  BimotBlock block;
  std::mt19937_64 rng{6};

  explicit BlockFixture(bool temporal = true, bool randomize = true) {
    block = BimotBlock::create(store, "b", {4, 2, temporal, false}, 1.0);
    if (randomize) testing::randomize_parameters(store, rng);
  }
  std::vector<ConditionFeature> conditions(std::size_t frames) {
    std::vector<ConditionFeature> c;
    for (Modality m : kFusionOrder) c.push_back({m, Tensor::randn({1, frames, 3, 4}, rng)});
    return c;
  }
};

TEST(Bimot, FreshBlockResidualIsExactlyZero) {
  BlockFixture fx(true, false);
  const Tensor r = bimot_forward(fx.block, Tensor::randn({2, 3, 3, 4}, fx.rng), [&] {
    std::vector<ConditionFeature> c;
    for (Modality m : kFusionOrder) c.push_back({m, Tensor::randn({2, 3, 3, 4}, fx.rng)});
    return c;
  }());
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(Bimot, AttentionRowsSumToOneInAllStages) {
  BlockFixture fx;
  BimotTrace trace;
  bimot_forward(fx.block, Tensor::randn({1, 3, 3, 4}, fx.rng), fx.conditions(3), &trace);
  EXPECT_EQ(trace.l2c_weights.size(), kModalityCount);
  EXPECT_EQ(trace.temporal_weights.size(), 1u);
  EXPECT_EQ(trace.c2l_weights.size(), 1u);
  for (const auto* group : {&trace.l2c_weights, &trace.temporal_weights, &trace.c2l_weights}) {
    for (const Tensor& w : *group) {
      const std::size_t cols = w.shape().back();
      for (std::size_t r = 0; r < w.numel() / cols; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += w[r * cols + c];
        EXPECT_NEAR(acc, 1.0, 1e-9);
      }
    }
  }
}

TEST(Bimot, SingleFrameTemporalAttentionIsTrivial) {
  BlockFixture fx;
  BimotTrace trace;
  bimot_forward(fx.block, Tensor::randn({1, 1, 3, 4}, fx.rng), fx.conditions(1), &trace);
  for (double w : trace.temporal_weights[0].values()) EXPECT_EQ(w, 1.0);
}

TEST(Bimot, WithoutTemporalStageFramesStayIndependent) {
  BlockFixture fx(false);
  const Tensor latent = Tensor::randn({1, 4, 3, 4}, fx.rng);
  auto conds = fx.conditions(4);
  const Tensor base = bimot_forward(fx.block, latent, conds);
  const std::size_t j = 2, per_frame = 12;
  auto perturbed = conds;
  auto v = values(conds[1].features);
  for (std::size_t i = j * per_frame; i < (j + 1) * per_frame; ++i) v[i] += 0.7;
  perturbed[1].features = Tensor(conds[1].features.shape(), v);
  const Tensor moved = bimot_forward(fx.block, latent, perturbed);
  for (std::size_t f = 0; f < 4; ++f) {
    double diff = 0.0;
    for (std::size_t i = f * per_frame; i < (f + 1) * per_frame; ++i) diff += std::abs(moved[i] - base[i]);
    if (f == j) {
      EXPECT_GT(diff, 0.0);
    } else {
      EXPECT_EQ(diff, 0.0) << "frame " << f;
    }
  }
}

TEST(Bimot, TemporalStageMixesFrames) {
  BlockFixture fx(true);
  const Tensor latent = Tensor::randn({1, 4, 3, 4}, fx.rng);
  auto conds = fx.conditions(4);
  const Tensor base = bimot_forward(fx.block, latent, conds);
  auto v = values(conds[0].features);
  for (std::size_t i = 0; i < 12; ++i) v[i] += 0.7;
  conds[0].features = Tensor(conds[0].features.shape(), v);
  const Tensor moved = bimot_forward(fx.block, latent, conds);
  double far = 0.0;
  for (std::size_t i = 36; i < 48; ++i) far += std::abs(moved[i] - base[i]);
  EXPECT_GT(far, 0.0);
}

TEST(Bimot, ShapeMismatchesThrow) {
  BlockFixture fx;
  auto conds = fx.conditions(3);
  EXPECT_THROW(bimot_forward(fx.block, Tensor::randn({1, 2, 3, 4}, fx.rng), conds), ShapeError);
  EXPECT_THROW(bimot_forward(fx.block, Tensor::randn({1, 3, 4, 4}, fx.rng), conds), ShapeError);
  EXPECT_THROW(bimot_forward(fx.block, Tensor::randn({3, 3, 4}, fx.rng), conds), ShapeError);
}

TEST(Bimot, EveryFlowParameterReceivesGradientAfterOneStep) {
  BlockFixture fx(true, false);
  AdamW opt(fx.store, {});
  const Tensor latent = Tensor::randn({1, 3, 3, 4}, fx.rng);
  const auto conds = fx.conditions(3);
  const Tensor target = Tensor::randn({1, 3, 3, 4}, fx.rng);
  for (int step = 0; step < 2; ++step) {
    fx.store.zero_grad();
    backward(ops::mse(bimot_forward(fx.block, latent, conds), target));
    if (step == 0) opt.step();
  }
  for (const auto& p : fx.store.params()) {
    if (p.name.find(".l2c.") == std::string::npos && p.name.find(".c2l.") == std::string::npos) continue;
    double norm = 0.0;
    for (double g : p.tensor.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(MixConditions, FollowsFusionOrderAndPresence) {
  std::array<Tensor, kModalityCount> feats, nulls;
  for (std::size_t i = 0; i < kModalityCount; ++i) {
    feats[i] = Tensor::full({1}, 1.0 + i);
    nulls[i] = Tensor::full({1}, -1.0 - i);
  }
  const auto mixed = mix_conditions(feats, {true, false, true, false}, nulls);
  ASSERT_EQ(mixed.size(), kModalityCount);
  for (std::size_t i = 0; i < kModalityCount; ++i) EXPECT_EQ(mixed[i].modality, kFusionOrder[i]);
  EXPECT_EQ(mixed[0].features.item(), 1.0);
  EXPECT_EQ(mixed[1].features.item(), -2.0);
  EXPECT_EQ(mixed[3].features.item(), -4.0);
  EXPECT_THROW(mix_conditions(feats, {true, false, true, true}, {}), ShapeError);
}

TEST(MixConditions, OrderMattersAndNullsArePure) {
  BlockFixture fx;
  const Tensor latent = Tensor::randn({1, 2, 3, 4}, fx.rng);
  std::array<Tensor, kModalityCount> feats, nulls;
  for (std::size_t i = 0; i < kModalityCount; ++i) {
    feats[i] = Tensor::randn({1, 2, 3, 4}, fx.rng);
    nulls[i] = Tensor::randn({1, 2, 3, 4}, fx.rng);
  }
  const auto ordered = mix_conditions(feats, {true, true, true, true}, nulls);
  auto swapped = ordered;
  std::swap(swapped[0], swapped[1]);
  const Tensor a = bimot_forward(fx.block, latent, ordered), b = bimot_forward(fx.block, latent, swapped);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff += std::abs(a[i] - b[i]);
  EXPECT_GT(diff, 0.0);

  // Two absent modalities whose nulls hold equal values: exchanging them changes nothing.
  auto eq_nulls = nulls;
  eq_nulls[2] = eq_nulls[3] = Tensor::full({1, 2, 3, 4}, 0.4);
  const std::array<bool, kModalityCount> present = {true, true, false, false};
  const Tensor c = bimot_forward(fx.block, latent, mix_conditions(feats, present, eq_nulls));
  std::swap(eq_nulls[2], eq_nulls[3]);
  const Tensor d = bimot_forward(fx.block, latent, mix_conditions(feats, present, eq_nulls));
  EXPECT_EQ(values(c), values(d));

  const auto all_null = mix_conditions(feats, {false, false, false, false}, nulls);
  EXPECT_EQ(values(bimot_forward(fx.block, latent, all_null)), values(bimot_forward(fx.block, latent, all_null)));
}

TEST(Bimot, DenoiserParametersUseLevelPrefix) {
  ModelConfig c;
  c.height = 16;
  c.width = 32;
  c.dim0 = c.dim1 = 8;
  c.heads = 2;
  const DenoiserNet net(c);
  std::set<std::string> levels;
  for (const auto& p : net.store.params()) {
    if (p.name.starts_with("bimot.")) levels.insert(p.name.substr(0, 8));
  }
  EXPECT_EQ(levels, (std::set<std::string>{"bimot.0.", "bimot.1."}));
  ASSERT_NE(net.store.find("bimot.0.out_proj.weight"), nullptr);
  for (double v : net.store.find("bimot.1.out_proj.weight")->tensor.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(net.store.find("bimot.0.c2l.q.fc1.weight")->lr_multiplier, kNewModuleLrMultiplier);
}

}  // namespace
}  // namespace ds
