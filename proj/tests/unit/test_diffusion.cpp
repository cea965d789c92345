#include <gtest/gtest.h>

#include "common/error.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

namespace ds {
namespace {

std::vector<double> values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(Schedule, LinearInvariants) {
  const auto s = DiffusionSchedule::linear();
  ASSERT_EQ(s.step_count, 1000u);
  EXPECT_NO_THROW(s.validate());
  EXPECT_NEAR(s.alpha_bar(0), 1.0, 1e-3);
  for (std::size_t t = 1; t < s.step_count; ++t) {
    EXPECT_GT(s.betas[t], s.betas[t - 1]);
    EXPECT_LT(s.alphas_cumprod[t], s.alphas_cumprod[t - 1]);
  }
  EXPECT_GT(s.betas.front(), 0.0);
  EXPECT_LT(s.betas.back(), 1.0);
}

TEST(QSample, ClosedForms) {
  DiffusionSchedule s;
  s.step_count = 2;
  s.betas = {0.0, 0.75};
  s.alphas_cumprod = {1.0, 0.25};
  EXPECT_EQ(q_sample(s, {0.3, -0.7}, 0, {5.0, 5.0}), (std::vector<double>{0.3, -0.7}));
  EXPECT_NEAR(q_sample(s, {2.0}, 1, {2.0})[0], 1.0 + std::sqrt(0.75) * 2.0, 1e-12);
  EXPECT_NEAR(q_sample(s, {2.0}, 1, {2.0})[0], 2.7321, 1e-4);
}

TEST(QSample, MonteCarloVariance) {
  const auto s = DiffusionSchedule::linear();
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t t = 400, count = 10000;
  std::vector<double> x0(count), noise(count);
  for (auto& v : x0) v = 0.5 * n(rng);
  for (auto& v : noise) v = n(rng);
  const auto xt = q_sample(s, x0, t, noise);
  double mean = 0, var = 0;
  for (double v : xt) mean += v;
  mean /= count;
  for (double v : xt) var += (v - mean) * (v - mean);
  var /= count - 1;
  const double ab = s.alpha_bar(t);
  EXPECT_NEAR(var, ab * 0.25 + (1 - ab), 0.05 * (ab * 0.25 + (1 - ab)));
}

TEST(Cfg, IdentityCases) {
  std::mt19937_64 rng(1);
  const Tensor c = Tensor::randn({2, 3}, rng), u = Tensor::randn({2, 3}, rng);
  EXPECT_EQ(values(cfg_combine(c, u, 1.0)), values(c));
  for (double s : {0.0, 2.5, 7.0}) {
    const auto r = cfg_combine(c, c, s);
    for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(r.values()[i], c[i], 1e-15);
  }
  const Tensor g = cfg_combine(c, u, 2.5);
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(g[i], u[i] + 2.5 * (c[i] - u[i]), 1e-15);
  EXPECT_EQ(kDefaultCfgScale, 2.5);
}

TEST(Dropout, RatesOverTenThousandDraws) {
  const DropoutPolicy p;
  std::mt19937_64 rng(77);
  std::size_t n = 0, c = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto d = p.draw(rng);
    n += d.drop_neighbor;
    c += d.drop_conditions;
  }
  EXPECT_NEAR(n / 1e4, 0.5, 0.02);
  EXPECT_NEAR(c / 1e4, 0.2, 0.02);
  DropoutPolicy bad;
  bad.p_conditions = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Ddim, TimestepsDescendFromTheTop) {
  const auto s = DiffusionSchedule::linear();
  const auto ts = ddim_timesteps(s, 50);
  ASSERT_EQ(ts.size(), 50u);
  EXPECT_EQ(ts.front(), 999u);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
  EXPECT_THROW(ddim_timesteps(s, 0), ConfigError);
  EXPECT_THROW(ddim_timesteps(s, 1001), ConfigError);
}

TEST(Ddim, TrueNoisePredictorRecoversCleanSampleInOneStep) {
  const auto s = DiffusionSchedule::linear();
  std::mt19937_64 rng(3);
  const Tensor x0 = Tensor::randn({2, 5}, rng, 0.5), noise = Tensor::randn({2, 5}, rng);
  const std::size_t top = ddim_timesteps(s, 1)[0];
  const Tensor xT = q_sample(s, x0, top, noise);
  const NoisePredictor oracle = [&](const Tensor& x, std::size_t t) {
    std::vector<double> e(x.numel());
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = (x[i] - std::sqrt(s.alpha_bar(t)) * x0[i]) / std::sqrt(1 - s.alpha_bar(t));
    }
    return Tensor(x.shape(), e);
  };
  const Tensor out = ddim_sample(s, oracle, xT, {1, false});
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], x0[i], 1e-6);
  const Tensor multi = ddim_sample(s, oracle, xT, {10, false});
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(multi[i], x0[i], 1e-6);
}

TEST(Ddim, FixedEntriesAreNeverUpdated) {
  const auto s = DiffusionSchedule::linear();
  std::mt19937_64 rng(4);
  const Tensor xT = Tensor::randn({6}, rng);
  const std::vector<bool> mask = {true, false, true, false, false, true};
  const NoisePredictor zero = [](const Tensor& x, std::size_t) { return Tensor::full(x.shape(), 0.0); };
  const Tensor out = ddim_sample(s, zero, xT, {5, true}, mask);
  for (std::size_t i = 0; i < 6; ++i) {
    if (mask[i]) EXPECT_EQ(out[i], xT[i]);
  }
  EXPECT_THROW(ddim_sample(s, zero, xT, {5, true}, {true}), ShapeError);
}

class DenoiserTest : public ::testing::Test {
 protected:
  DenoiserTest() : data_(testing::tiny_dataset(2)) {}

  ClipConditions conditions(std::size_t scene, ViewId v) const {
    return testing::full_conditions(data_.prepared[scene], data_.graph, v);
  }
  DenoiserInput input(const ClipConditions& cc, std::size_t t, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    const auto& p = data_.prepared[0];
    std::vector<double> x = p.first_frame(ViewId::kFront);
    for (std::size_t i = x.size(); i < p.frame_count * p.frame_size(); ++i) {
      x.push_back(std::normal_distribution<double>(0.0, 1.0)(rng));
    }
    return {Tensor({1, p.frame_count, 3, p.height, p.width}, x), {t}, {&cc}, {}};
  }

  Dataset data_;
};

TEST_F(DenoiserTest, ZeroInitAttachedEqualsDetached) {
  DenoiserNet net(testing::tiny_model());
  const auto cc = conditions(0, ViewId::kFrontLeft);
  ASSERT_FALSE(cc.keyframe.empty());
  ASSERT_FALSE(cc.neighbor.empty());
  const auto in = input(cc, 500, 1);
  const auto attached = values(net.forward(in));
  for (int mask = 1; mask < 8; ++mask) {
    net.attach.bimot = !(mask & 1);
    net.attach.keyframe = !(mask & 2);
    net.attach.neighbor = !(mask & 4);
    EXPECT_EQ(values(net.forward(in)), attached) << "detach mask " << mask;
  }
}

TEST_F(DenoiserTest, UntrainedOutputIgnoresConditions) {
  const DenoiserNet net(testing::tiny_model());
  const auto a = conditions(0, ViewId::kBack), b = conditions(1, ViewId::kBack);
  auto in = input(a, 300, 2);
  const auto with_a = values(net.forward(in));
  in.conditions = {&b};
  EXPECT_EQ(values(net.forward(in)), with_a);
  in.drops = {DropDecision{true, true}};
  EXPECT_EQ(values(net.forward(in)), with_a);
}

TEST_F(DenoiserTest, CfgScaleOneIsTheConditionalPrediction) {
  DenoiserNet net(testing::tiny_model());
  std::mt19937_64 rng(9);
  testing::randomize_parameters(net.store, rng, 0.2);
  const auto cc = conditions(0, ViewId::kFront);
  const auto in = input(cc, 700, 3);
  const auto eps_c = values(net.forward(in));
  EXPECT_EQ(values(cfg_predict(net, in.x_t, 700, {&cc}, 1.0)), eps_c);
  EXPECT_NE(values(cfg_predict(net, in.x_t, 700, {&cc}, 2.5)), eps_c);
}

TEST_F(DenoiserTest, ZeroOutputModelHasUnitLoss) {
  auto cfg = testing::tiny_model();
  cfg.first_frame_anchor = false;
  DenoiserNet net(cfg);
  for (double& v : net.head.weight.mutable_values()) v = 0.0;
  for (double& v : net.head.bias.mutable_values()) v = 0.0;
  std::vector<ClipConditions> conds;
  for (ViewId v : data_.graph.views_with(ViewRole::kKey)) conds.push_back(conditions(0, v));
  std::vector<TrainingExample> batch;
  for (const auto& c : conds) batch.push_back({data_.prepared[0].clips[view_index(c.view)], 6, &c, false});
  std::mt19937_64 rng(5);
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) acc += training_loss(net, net.schedule, batch, {}, rng).item();
  EXPECT_NEAR(acc / 4, 1.0, 0.05);
}

TEST_F(DenoiserTest, TrainingLossErrors) {
  DenoiserNet net(testing::tiny_model());
  const auto bare = make_conditions(data_.prepared[0], data_.graph, ViewId::kBack, true);
  const std::vector<TrainingExample> batch = {{data_.prepared[0].clips[3], 6, &bare, true}};
  std::mt19937_64 rng(1);
  EXPECT_THROW(training_loss(net, net.schedule, batch, {0.0, 0.0}, rng), ValidationError);
  EXPECT_THROW(training_loss(net, DiffusionSchedule::linear(500), batch, {1.0, 0.0}, rng), ConfigError);
  EXPECT_THROW(training_loss(net, net.schedule, {}, {}, rng), ValidationError);
  const auto cc = conditions(0, ViewId::kFront);
  EXPECT_THROW(net.forward(input(cc, 1000, 1)), ConfigError);
}

TEST_F(DenoiserTest, SamplingIsDeterministicAndKeepsFirstFrame) {
  DenoiserNet net(testing::tiny_model());
  std::mt19937_64 rng(11);
  testing::randomize_parameters(net.store, rng, 0.1);
  const auto cc = conditions(1, ViewId::kBackRight);
  const auto& p = data_.prepared[1];
  const auto first = p.first_frame(ViewId::kBackRight);
  SampleOptions o;
  o.steps = 4;
  o.seed = 21;
  const auto a = sample_clip(net, net.schedule, first, p.frame_count, cc, o);
  EXPECT_EQ(sample_clip(net, net.schedule, first, p.frame_count, cc, o), a);
  EXPECT_TRUE(std::equal(first.begin(), first.end(), a.begin()));
  o.seed = 22;
  EXPECT_NE(sample_clip(net, net.schedule, first, p.frame_count, cc, o), a);
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  auto c = testing::tiny_model();
  c.queries_from_out = true;
  c.first_frame_anchor = false;
  EXPECT_EQ(ModelConfig::from_json(c.to_json()).to_json(), c.to_json());
  auto bad = c;
  bad.width = 18;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.bimot_enabled = false;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.bimot_temporal = false;
  EXPECT_NO_THROW(bad.validate());
}

TEST(Denoiser, NewModulesEndInZeroLayers) {
  const DenoiserNet net(testing::tiny_model());
  for (const char* name : {"bimot.0.out_proj.weight", "level0.keyframe_attn.out.weight", "level1.neighbor_attn.out.weight",
                           "level0.scalar_attn.out.weight", "anchor_gate.weight"}) {
    const auto* p = net.store.find(name);
    ASSERT_NE(p, nullptr) << name;
    for (double v : p->tensor.values()) EXPECT_EQ(v, 0.0) << name;
  }
}

}  // namespace
}  // namespace ds
