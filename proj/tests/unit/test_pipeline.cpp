#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "common/error.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "pipeline/contact_sheet.hpp"
#include "pipeline/inference.hpp"
#include "scene/io.hpp"

namespace ds {
namespace {

namespace fs = std::filesystem;

std::set<ViewId> as_set(const auto& views) { return {views.begin(), views.end()}; }

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ds_pipeline_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

TEST(ViewGraph, RingAndPartition) {
  const auto g = build_view_graph(canonical_rig());
  EXPECT_NO_THROW(g.validate());
  EXPECT_EQ(as_set(g.views_with(ViewRole::kKey)), (std::set{ViewId::kFront, ViewId::kBackLeft, ViewId::kBackRight}));
  EXPECT_EQ(as_set(g.adjacent[view_index(ViewId::kFrontLeft)]), (std::set{ViewId::kFront, ViewId::kBackLeft}));
  EXPECT_EQ(as_set(g.adjacent[view_index(ViewId::kBack)]), (std::set{ViewId::kBackLeft, ViewId::kBackRight}));
  for (ViewId v : kAllViews) {
    for (ViewId a : g.adjacent[view_index(v)]) {
      EXPECT_NE(g.role[view_index(a)], g.role[view_index(v)]);
      EXPECT_TRUE(as_set(g.adjacent[view_index(a)]).count(v));
    }
  }
  const auto from = g.ring_from(ViewId::kBack);
  EXPECT_EQ(from[0], ViewId::kBack);
  EXPECT_EQ(as_set(from).size(), kViewCount);
}

TEST(ViewGraph, RejectsBrokenGraphsAndRigs) {
  auto g = build_view_graph(canonical_rig());
  g.role[view_index(ViewId::kFrontLeft)] = ViewRole::kKey;
  EXPECT_THROW(g.validate(), ValidationError);
  auto rig = canonical_rig();
  rig[1].view = ViewId::kFront;
  EXPECT_THROW(build_view_graph(rig), ValidationError);
}

TEST(GenerationPlan, TwoPassesFromSharedFirstFrames) {
  const auto scene = generate_scene(5, testing::tiny_scene());
  const auto g = build_view_graph(scene.cameras);
  const auto plan = plan_inference(scene, g);
  ASSERT_EQ(plan.pass1.size(), 3u);
  ASSERT_EQ(plan.pass2.size(), 3u);
  std::set<ViewId> first;
  for (const auto& e : plan.pass1) {
    EXPECT_TRUE(e.sources.empty());
    first.insert(e.view);
  }
  EXPECT_EQ(first, as_set(g.views_with(ViewRole::kKey)));
  for (const auto& e : plan.pass2) {
    EXPECT_EQ(as_set(e.sources), as_set(g.adjacent[view_index(e.view)]));
    if (e.view == ViewId::kBack) EXPECT_EQ(as_set(e.sources), (std::set{ViewId::kBackLeft, ViewId::kBackRight}));
  }
  EXPECT_TRUE(plan.keyframe_in_pass1);
  EXPECT_FALSE(plan_inference(scene, g, false).keyframe_in_pass1);

  auto broken = plan;
  broken.pass2[0].sources.pop_back();
  EXPECT_THROW(broken.validate(g), ValidationError);
  broken = plan;
  broken.pass2.push_back(plan.pass1[0]);
  EXPECT_THROW(broken.validate(g), ValidationError);
  broken = plan;
  broken.pass1.pop_back();
  EXPECT_THROW(broken.validate(g), ValidationError);

  auto bare = scene;
  for (auto& f : bare.frames) f.clear();
  EXPECT_THROW(plan_inference(bare, g), ValidationError);
}

TEST(TrainingBatches, KeyViewsPrecedeNeighborsPerScene) {
  const auto data = testing::tiny_dataset(3);
  for (std::size_t epoch = 0; epoch < 4; ++epoch) {
    const auto items = build_training_batches(data, 9, epoch);
    ASSERT_EQ(items.size(), 3 * kViewCount);
    std::set<std::size_t> scenes;
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t scene = items[s * kViewCount].scene;
      EXPECT_TRUE(scenes.insert(scene).second);
      std::set<ViewId> views;
      for (std::size_t i = 0; i < kViewCount; ++i) {
        const auto& it = items[s * kViewCount + i];
        EXPECT_EQ(it.scene, scene);
        EXPECT_EQ(it.role, i < 3 ? ViewRole::kKey : ViewRole::kNeighbor);
        EXPECT_EQ(it.role, data.graph.role[view_index(it.view)]);
        if (it.role == ViewRole::kNeighbor) EXPECT_EQ(it.sources, data.graph.adjacent[view_index(it.view)]);
        views.insert(it.view);
      }
      EXPECT_EQ(views.size(), kViewCount);
    }
  }
  const auto order = [&](std::size_t epoch) {
    std::vector<std::pair<std::size_t, ViewId>> o;
    for (const auto& it : build_training_batches(data, 9, epoch)) o.emplace_back(it.scene, it.view);
    return o;
  };
  EXPECT_EQ(order(2), order(2));
  std::set<std::vector<std::pair<std::size_t, ViewId>>> distinct;
  for (std::size_t e = 0; e < 6; ++e) distinct.insert(order(e));
  EXPECT_GT(distinct.size(), 1u);
}

TEST(Dataset, RejectsMismatchedScenes) {
  std::vector<SceneTimeline> s = {generate_scene(1, testing::tiny_scene()),
                                  generate_scene(2, testing::tiny_scene(10.0, 0.8))};
  EXPECT_THROW(make_dataset(s), ValidationError);
  EXPECT_THROW(make_dataset({}), ValidationError);
  EXPECT_THROW(load_dataset(scratch("missing")), IoError);
}

TEST(Dataset, LoadsSceneFilesInNameOrder) {
  const auto dir = scratch("load");
  fs::create_directories(dir);
  const auto a = generate_scene(31, testing::tiny_scene()), b = generate_scene(30, testing::tiny_scene());
  save_scene(a, dir / "b.json");
  save_scene(b, dir / "a.json");
  std::ofstream(dir / "manifest.json") << "{\"kind\":\"dataset\"}";
  const auto d = load_dataset(dir);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.scenes[0].name, b.name);
  EXPECT_EQ(d.scenes[1].name, a.name);
  fs::remove_all(dir);
}

std::vector<double> losses(Trainer& t, std::size_t n) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(t.step().loss);
  return out;
}

TEST(Trainer, GoldenTwoStepTrace) {
  const auto data = testing::tiny_dataset(2);
  Trainer t(data, testing::tiny_model(), testing::tiny_train(2));
  const auto trace = losses(t, 2);
  EXPECT_NEAR(trace[0], 0.1623878052170486, 1e-9);
  EXPECT_NEAR(trace[1], 0.12563186576813384, 1e-9);
}

TEST(Trainer, DeterministicAndResumable) {
  const auto data = testing::tiny_dataset(2);
  Trainer full(data, testing::tiny_model(), testing::tiny_train(8));
  const auto ref = losses(full, 8);
  Trainer again(data, testing::tiny_model(), testing::tiny_train(8));
  EXPECT_EQ(losses(again, 8), ref);

  const auto dir = scratch("resume");
  Trainer first(data, testing::tiny_model(), testing::tiny_train(8));
  auto trace = losses(first, 5);
  first.save_checkpoint(dir);
  Trainer resumed(data, testing::tiny_model(), testing::tiny_train(8));
  resumed.load_checkpoint(dir);
  EXPECT_EQ(resumed.steps_done(), 5u);
  const auto rest = losses(resumed, 3);
  trace.insert(trace.end(), rest.begin(), rest.end());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(trace[i], ref[i], 1e-6) << "step " << i;

  const auto model = load_model(dir);
  for (const auto& p : resumed.net().store.params()) ASSERT_NE(model->store.find(p.name), nullptr);

  auto other = testing::tiny_model();
  other.queries_from_out = true;
  Trainer mismatch(data, other, testing::tiny_train(8));
  EXPECT_THROW(mismatch.load_checkpoint(dir), ValidationError);
  const auto data2 = testing::tiny_dataset(2, 400);
  Trainer wrong_data(data2, testing::tiny_model(), testing::tiny_train(8));
  EXPECT_THROW(wrong_data.load_checkpoint(dir), ValidationError);
  EXPECT_THROW(load_model(scratch("nothing")), IoError);
  fs::remove_all(dir);
}

TEST(Trainer, NeighborBatchesRecordTheirSources) {
  const auto data = testing::tiny_dataset(1);
  auto tc = testing::tiny_train(12);
  tc.generated_neighbor_prob = 1.0;
  Trainer t(data, testing::tiny_model(), tc);
  bool saw_generated = false;
  for (int i = 0; i < 12; ++i) {
    const auto r = t.step();
    EXPECT_EQ(r.role, data.graph.role[view_index(r.view)]);
    if (r.role == ViewRole::kKey) {
      EXPECT_FALSE(r.generated_sources);
      EXPECT_TRUE(t.generated(0, r.view).has_value());
    }
    saw_generated |= r.generated_sources;
    EXPECT_TRUE(std::isfinite(r.loss));
  }
  EXPECT_TRUE(saw_generated);
}

TEST(Trainer, ConfigErrors) {
  const auto data = testing::tiny_dataset(1);
  auto tc = testing::tiny_train();
  tc.steps = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = testing::tiny_train();
  tc.generated_neighbor_prob = 2.0;
  EXPECT_THROW(tc.validate(), ConfigError);
  EXPECT_THROW(Trainer(data, testing::tiny_model(16, 32), testing::tiny_train()), ConfigError);
  tc = testing::tiny_train();
  tc.optimizer.lr = 0.25;
  EXPECT_EQ(TrainConfig::from_json(tc.to_json()).to_json(), tc.to_json());
}

TEST(Validation, ConditionalAndUnconditionalBranchesAgreeAtInit) {
  const auto data = testing::tiny_dataset(1);
  const DenoiserNet net(testing::tiny_model());
  const auto r = validation_losses(net, data, 1, 2);
  EXPECT_EQ(r.samples, 2 * kViewCount);
  EXPECT_EQ(r.conditional, r.unconditional);
  EXPECT_EQ(validation_losses(net, data, 1, 2).conditional, r.conditional);
  EXPECT_THROW(validation_losses(net, data, 1, 0), ConfigError);
}

class InferenceTest : public ::testing::Test {
 protected:
  InferenceTest()
      : scene_(generate_scene(17, testing::tiny_scene())),
        graph_(build_view_graph(scene_.cameras)),
        plan_(plan_inference(scene_, graph_)),
        net_(testing::tiny_model()) {
    std::mt19937_64 rng(8);
    testing::randomize_parameters(net_.store, rng, 0.2);
    options_.steps = 3;
    options_.seed = 5;
  }

  SceneTimeline scene_;
  ViewGraph graph_;
  GenerationPlan plan_;
  DenoiserNet net_;
  InferenceOptions options_;
};

TEST_F(InferenceTest, DeterministicAcrossRunsAndThreadCounts) {
  const auto a = run_inference(net_, scene_, graph_, plan_, options_);
  auto o = options_;
  o.threads = 1;
  const auto b = run_inference(net_, scene_, graph_, plan_, o);
  o.threads = 3;
  const auto c = run_inference(net_, scene_, graph_, plan_, o);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.frames, c.frames);
  for (ViewId v : kAllViews) {
    ASSERT_EQ(a.frames[view_index(v)].size(), scene_.frame_count());
    EXPECT_EQ(a.frames[view_index(v)][0], scene_.frames[view_index(v)][0]);
    EXPECT_EQ(a.seeds[view_index(v)], view_seed(options_.seed, v));
  }
}

TEST_F(InferenceTest, KeyViewsMatchIndependentSampling) {
  const auto video = run_inference(net_, scene_, graph_, plan_, options_);
  const auto prepared = prepare_scene(scene_);
  for (ViewId v : graph_.views_with(ViewRole::kKey)) {
    SampleOptions so;
    so.steps = options_.steps;
    so.seed = view_seed(options_.seed, v);
    const auto clip = sample_clip(net_, net_.schedule, prepared.first_frame(v), prepared.frame_count,
                                  make_conditions(prepared, graph_, v, true), so);
    for (std::size_t f = 0; f < prepared.frame_count; ++f) {
      EXPECT_EQ(planar_to_image(clip.data() + f * prepared.frame_size(), prepared.width, prepared.height),
                video.frames[view_index(v)][f]);
    }
  }
}

TEST_F(InferenceTest, NeighborAblationChangesOnlyPassTwo) {
  const auto with = run_inference(net_, scene_, graph_, plan_, options_);
  auto o = options_;
  o.neighbor_cond = false;
  const auto without = run_inference(net_, scene_, graph_, plan_, o);
  bool changed = false;
  for (ViewId v : kAllViews) {
    const auto& a = with.frames[view_index(v)];
    const auto& b = without.frames[view_index(v)];
    if (graph_.role[view_index(v)] == ViewRole::kKey) {
      EXPECT_EQ(a, b);
    } else {
      changed |= a != b;
    }
  }
  EXPECT_TRUE(changed);
}

TEST_F(InferenceTest, PassOneFailureIsNested) {
  auto o = options_;
  o.steps = net_.schedule.step_count + 1;
  try {
    run_inference(net_, scene_, graph_, plan_, o);
    FAIL() << "expected a pass-1 failure";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("pass 1"), std::string::npos);
    EXPECT_THROW(std::rethrow_if_nested(e), ConfigError);
  }
}

TEST_F(InferenceTest, OptionAndSizeErrors) {
  auto o = options_;
  o.steps = 0;
  EXPECT_THROW(run_inference(net_, scene_, graph_, plan_, o), ConfigError);
  o = options_;
  o.cfg_scale = -1.0;
  EXPECT_THROW(run_inference(net_, scene_, graph_, plan_, o), ConfigError);
  const DenoiserNet big(testing::tiny_model(16, 32));
  EXPECT_THROW(run_inference(big, scene_, graph_, plan_, options_), ConfigError);
}

TEST_F(InferenceTest, GeneratedVideoRoundTrip) {
  const auto video = run_inference(net_, scene_, graph_, plan_, options_);
  const auto dir = scratch("gen");
  write_generated(video, dir, {{"seed", 5}});
  for (ViewId v : kAllViews) {
    for (std::size_t f = 0; f < scene_.frame_count(); ++f) {
      EXPECT_TRUE(fs::exists(dir / scene_.name / view_name(v) / ("frame_" + std::to_string(f) + ".png")));
    }
  }
  EXPECT_TRUE(fs::exists(dir / scene_.name / "manifest.json"));
  const auto back = read_generated(dir / scene_.name);
  EXPECT_EQ(back.scene, video.scene);
  EXPECT_EQ(back.frames, video.frames);
  EXPECT_THROW(read_generated(dir / "absent"), IoError);
  fs::remove_all(dir);
}

TEST(ContactSheet, TilesArePlacedPixelExact) {
  std::array<Image, kViewCount> views;
  for (ViewId v : kAllViews) {
    Image im(5, 3);
    for (std::size_t y = 0; y < 3; ++y) {
      for (std::size_t x = 0; x < 5; ++x) {
        auto* p = im.pixel(x, y);
        p[0] = static_cast<std::uint8_t>(40 * view_index(v));
        p[1] = static_cast<std::uint8_t>(x);
        p[2] = static_cast<std::uint8_t>(y);
      }
    }
    views[view_index(v)] = im;
  }
  const Image sheet = contact_sheet(views);
  ASSERT_EQ(sheet.width, 15u);
  ASSERT_EQ(sheet.height, 6u);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      const ViewId v = kSheetGrid[r][c];
      for (std::size_t y = 0; y < 3; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
          const auto* p = sheet.pixel(c * 5 + x, r * 3 + y);
          EXPECT_EQ(p[0], 40 * view_index(v));
          EXPECT_EQ(p[1], x);
          EXPECT_EQ(p[2], y);
        }
      }
    }
  }
  EXPECT_EQ(kSheetGrid[0][1], ViewId::kFront);
  EXPECT_EQ(kSheetGrid[1][1], ViewId::kBack);
  auto missing = views;
  missing[2] = Image();
  EXPECT_THROW(contact_sheet(missing), ValidationError);
  auto uneven = views;
  uneven[4] = Image(4, 3);
  EXPECT_THROW(contact_sheet(uneven), ShapeError);
}

}  // namespace
}  // namespace ds
