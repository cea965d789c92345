#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "common/error.hpp"
#include "grad_suite.hpp"
#include "tensor/checkpoint.hpp"
#include "tensor/optim.hpp"

namespace ds {
namespace {

class Gradient : public ::testing::TestWithParam<testing::GradCase> {};

TEST_P(Gradient, MatchesCentralDifferencesOverTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto r = GetParam().run(rng);
    ASSERT_GT(r.checked, 0u);
    EXPECT_LT(r.max_error, testing::kFdRelTol) << "seed " << seed << ": " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(Ops, Gradient, ::testing::ValuesIn(testing::gradient_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(Tensor, MatmulKnownValues) {
  const Tensor a({2, 2}, {1, 2, 3, 4}), b({2, 2}, {5, 6, 7, 8});
  const Tensor ct = ops::matmul(a, b);
  const auto c = ct.values();
  EXPECT_EQ(std::vector<double>(c.begin(), c.end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(1);
  const Tensor s = ops::softmax(Tensor::randn({4, 7}, rng, 5.0), -1);
  for (std::size_t r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 7; ++c) acc += s[r * 7 + c];
    EXPECT_NEAR(acc, 1.0, 1e-12);
  }
}

TEST(Tensor, FeatureNormOfConstantInputIsExactlyBeta) {
  const Tensor x = Tensor::full({5, 3}, 0.7);
  const Tensor beta({3}, {0.1, -0.2, 0.3});
  const Tensor yt = ops::feature_norm(x, 0, Tensor::full({3}, 2.0), beta);
  const auto y = yt.values();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], beta[i % 3]);
}

TEST(Tensor, Conv2dMatchesLoops) {
  std::mt19937_64 rng(2);
  const Tensor x = Tensor::randn({1, 2, 4, 5}, rng), w = Tensor::randn({3, 2, 3, 3}, rng), b = Tensor::randn({3}, rng);
  const Tensor y = ops::conv2d(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 4, 5}));
  for (std::size_t o = 0; o < 3; ++o) {
    for (int yy = 0; yy < 4; ++yy) {
      for (int xx = 0; xx < 5; ++xx) {
        double acc = b[o];
        for (std::size_t c = 0; c < 2; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sy >= 4 || sx < 0 || sx >= 5) continue;
              acc += x[(c * 4 + sy) * 5 + sx] * w[((o * 2 + c) * 3 + ky) * 3 + kx];
            }
          }
        }
        EXPECT_NEAR(y[(o * 4 + yy) * 5 + xx], acc, 1e-12);
      }
    }
  }
}

TEST(Tensor, SpaceToDepthRoundTrips) {
  std::mt19937_64 rng(3);
  const Tensor x = Tensor::randn({2, 24, 3}, rng);
  const Tensor y = ops::depth_to_space(ops::space_to_depth(x, 4, 6, 2), 4, 6, 2);
  EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}

TEST(Tensor, SpaceToDepthChannelOrder) {
  // 2x2 grid, one channel: the single output token lists (dy, dx) row-major.
  const Tensor x({1, 4, 1}, {10, 11, 12, 13});
  const Tensor yt = ops::space_to_depth(x, 2, 2, 2);
  const auto y = yt.values();
  EXPECT_EQ(std::vector<double>(y.begin(), y.end()), (std::vector<double>{10, 11, 12, 13}));
}

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(ops::add(Tensor::full({2, 3}, 1.0), Tensor::full({3, 2}, 1.0)), ShapeError);
  EXPECT_THROW(ops::matmul(Tensor::full({2, 3}, 1.0), Tensor::full({2, 3}, 1.0)), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST(Tensor, NonFiniteResultThrows) {
  const Tensor x(Shape{1}, std::vector<double>{std::numeric_limits<double>::max()});
  EXPECT_THROW(ops::scale(x, 10.0), NumericError);
}

TEST(Tensor, NoGradGuardRecordsNoHistory) {
  Tensor x = Tensor::full({2}, 1.0, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(ops::sum(ops::square(x)).requires_grad());
  }
  EXPECT_TRUE(ops::sum(ops::square(x)).requires_grad());
}

TEST(Tensor, LeafGradientsAccumulate) {
  Tensor x({2}, {1.0, -2.0}, true);
  backward(ops::sum(ops::square(x)));
  backward(ops::sum(ops::square(x)));
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], -8.0);
  x.zero_grad();
  backward(ops::sum(x));
  EXPECT_EQ(x.grad()[1], 1.0);
}

TEST(Tensor, BackwardNeedsScalarWithHistory) {
  EXPECT_THROW(backward(Tensor::full({2}, 1.0, true)), ShapeError);
  EXPECT_THROW(backward(Tensor::scalar(1.0)), RuntimeError);
}

TEST(Optim, FirstAdamWStepMatchesClosedForm) {
  ParameterStore store;
  Tensor p = store.create_full("p", {3}, 0.5);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.2;
  AdamW opt(store, cfg);
  backward(ops::sum(ops::mul(p, Tensor({3}, {2.0, -0.5, 0.0}))));
  opt.step();
  const double g[] = {2.0, -0.5, 0.0};
  for (std::size_t i = 0; i < 3; ++i) {
    const double expect = 0.5 * (1.0 - 0.1 * 0.2) - 0.1 * g[i] / (std::abs(g[i]) + cfg.eps);
    EXPECT_NEAR(p[i], expect, 1e-15);
  }
}

TEST(Optim, LearningRateMultiplierScalesUpdate) {
  ParameterStore store;
  Tensor a = store.create_zeros("a", {1});
  Tensor b = store.create_zeros("b", {1}, kNewModuleLrMultiplier);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(store, cfg);
  backward(ops::sum(ops::add(a, b)));
  opt.step();
  EXPECT_NEAR(b[0] / a[0], kNewModuleLrMultiplier, 1e-9);
}

TEST(Optim, ClipGradNormReturnsNormAndRescales) {
  ParameterStore store;
  Tensor p = store.create_zeros("p", {2});
  backward(ops::sum(ops::mul(p, Tensor({2}, {3.0, 4.0}))));
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_NEAR(p.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(p.grad()[1], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(store, 0.0), 1.0, 1e-15);
  EXPECT_NEAR(p.grad()[1], 0.8, 1e-15);
}

TEST(Optim, RoundToF32IsIdempotentAndExact) {
  ParameterStore store(5);
  store.create_normal("w", {16}, 1.0);
  store.round_to_f32();
  for (double v : store.params()[0].tensor.values()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("ds_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripsF32ValuesExactly) {
  ParameterStore store(9);
  store.create_normal("a", {2, 3}, 1.0);
  store.create_full("b", {4}, 0.25);
  store.round_to_f32();
  checkpoint::NamedTensors named;
  for (const auto& p : store.params()) named.emplace_back(p.name, p.tensor);
  checkpoint::save(dir_, named, {{"note", "x"}});
  const auto [loaded, manifest] = checkpoint::load(dir_);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(manifest.at("note"), "x");
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(loaded[i].first, named[i].first);
    EXPECT_EQ(loaded[i].second.shape(), named[i].second.shape());
    EXPECT_TRUE(std::equal(loaded[i].second.values().begin(), loaded[i].second.values().end(),
                           named[i].second.values().begin()));
  }
}

TEST_F(CheckpointTest, RejectsCorruptContainer) {
  std::filesystem::create_directories(dir_);
  std::ofstream(dir_ / "bad.bin") << "NOPE1234";
  EXPECT_THROW(checkpoint::read_container(dir_ / "bad.bin"), ParseError);
  EXPECT_THROW(checkpoint::load(dir_ / "missing"), IoError);
}

}  // namespace
}  // namespace ds
