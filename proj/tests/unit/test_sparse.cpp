#include <gtest/gtest.h>

#include "common/error.hpp"
#include "sparse/plan.hpp"
#include "tensor/ops.hpp"
#include "sparse_oracle.hpp"

namespace ds {
namespace {

std::vector<std::size_t> conditioned_frames(const SparsePlan& p) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.frame_count; ++i) {
    if (p.conditioned[i]) out.push_back(i);
  }
  return out;
}

TEST(BuildPlan, TenHzOverPointEightSeconds) {
  const auto p = build_plan(testing::timeline(10, 0.8), {0.0, 0.5});
  EXPECT_EQ(conditioned_frames(p), (std::vector<std::size_t>{0, 5}));
  EXPECT_EQ(p.source_tick[5], 1u);
  EXPECT_FALSE(p.source_tick[1]);
  EXPECT_DOUBLE_EQ(p.video_fps, 10.0);
  EXPECT_DOUBLE_EQ(p.cond_fps, 2.0);
  EXPECT_EQ(p.conditioned_count(), 2u);
}

TEST(BuildPlan, TwoHzFramesAreAllConditioned) {
  const auto f = testing::timeline(2, 3);
  const auto p = build_plan(f, f);
  EXPECT_EQ(p.conditioned_count(), f.size());
}

TEST(BuildPlan, FourHz) {
  const auto p = build_plan(testing::timeline(4, 2), {0, 0.5, 1.0, 1.5});
  EXPECT_EQ(conditioned_frames(p), (std::vector<std::size_t>{0, 2, 4, 6}));
}

TEST(BuildPlan, MatchesBruteForce) {
  for (double fps : {2.0, 4.0, 5.0, 10.0}) {
    for (double duration : {0.8, 2.0, 4.0, 7.3}) {
      const auto frames = testing::timeline(fps, duration);
      const auto ticks = testing::matching_ticks(frames);
      const auto p = build_plan(frames, ticks);
      EXPECT_EQ(p.source_tick, testing::brute_force_match(frames, ticks)) << fps << " Hz, " << duration << " s";
    }
  }
}

TEST(BuildPlan, ToleratesMicrosecondJitter) {
  const auto p = build_plan({0.0, 0.1, 0.2, 0.3, 0.4, 0.5000005}, {0.0, 0.5});
  EXPECT_EQ(conditioned_frames(p), (std::vector<std::size_t>{0, 5}));
}

TEST(BuildPlan, Errors) {
  EXPECT_THROW(build_plan(testing::timeline(5, 1), {0.0, 0.5}), AlignmentError);
  EXPECT_THROW(build_plan({0.0, 0.2, 0.1}, {0.0}), ValidationError);
  EXPECT_THROW(build_plan({0.0, 0.1}, {0.1, 0.0}), ValidationError);
  EXPECT_THROW(build_plan({}, {}), ValidationError);
}

TEST(Densify, AllConditionedIsIdentity) {
  const auto f = testing::timeline(2, 1.5);
  const auto p = build_plan(f, f);
  std::vector<Tensor> real;
  for (std::size_t i = 0; i < f.size(); ++i) real.push_back(Tensor({2}, {1.0 * i, -2.0 * i}));
  const Tensor d = densify(p, real, Tensor::full({2}, 9.0));
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_EQ(d[2 * i], real[i][0]);
    EXPECT_EQ(d[2 * i + 1], real[i][1]);
  }
}

TEST(Densify, NoConditionsGivesNullEverywhere) {
  const auto p = build_plan(testing::timeline(10, 0.4), {});
  const Tensor d = densify(p, {}, Tensor({2}, {0.25, -0.5}));
  ASSERT_EQ(d.shape(), (Shape{4, 2}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(d[2 * i], 0.25);
    EXPECT_EQ(d[2 * i + 1], -0.5);
  }
}

TEST(Densify, RealSlotsUntouchedAndNullElsewhere) {
  const auto p = build_plan(testing::timeline(10, 0.8), {0.0, 0.5});
  std::mt19937_64 rng(4);
  const std::vector<Tensor> real = {Tensor::randn({3, 2}, rng), Tensor::randn({3, 2}, rng)};
  const Tensor null = Tensor::randn({3, 2}, rng);
  const Tensor d = densify(p, real, null);
  ASSERT_EQ(d.shape(), (Shape{8, 3, 2}));
  for (std::size_t i = 0; i < 8; ++i) {
    const Tensor& src = i == 0 ? real[0] : i == 5 ? real[1] : null;
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(d[i * 6 + j], src[j]) << "slot " << i;
  }
}

TEST(Densify, NullEmbeddingCollectsGradientFromEveryGap) {
  const auto p = build_plan(testing::timeline(10, 0.8), {0.0, 0.5});
  Tensor r0 = Tensor::full({2}, 1.0, true), r1 = Tensor::full({2}, 1.0, true);
  Tensor null = Tensor::full({2}, 0.0, true);
  backward(ops::sum(densify(p, {r0, r1}, null)));
  EXPECT_EQ(null.grad()[0], 6.0);
  EXPECT_EQ(r0.grad()[1], 1.0);
}

TEST(Densify, ShapeErrors) {
  const auto p = build_plan(testing::timeline(10, 0.8), {0.0, 0.5});
  EXPECT_THROW(densify(p, {Tensor::full({2}, 1.0)}, Tensor::full({2}, 0.0)), ShapeError);
  EXPECT_THROW(densify(p, {Tensor::full({2}, 1.0), Tensor::full({3}, 1.0)}, Tensor::full({2}, 0.0)), ShapeError);
}

}  // namespace
}  // namespace ds
