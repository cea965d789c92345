#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "app/commands.hpp"
#include "app/run_config.hpp"
#include "common/error.hpp"
#include "fixtures.hpp"
#include "pipeline/inference.hpp"
#include "scene/io.hpp"

namespace ds {
namespace {

namespace fs = std::filesystem;

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file() && e.path().extension() == ext;
  return n;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

TEST(RunConfig, DefaultsAndTypedAccess) {
  RunConfig c("train");
  EXPECT_EQ(c.get_uint("steps"), 200u);
  EXPECT_EQ(c.get_double("lr"), 0.001);
  EXPECT_TRUE(c.get_bool("bimot_enabled"));
  EXPECT_FALSE(c.has("data"));
  EXPECT_THROW(c.require("data"), ConfigError);
  RunConfig g("generate");
  EXPECT_EQ(g.get_double("cfg_scale"), kDefaultCfgScale);
  EXPECT_EQ(g.get_uint("steps"), 50u);
  const auto j = c.to_json()["settings"];
  EXPECT_EQ(c.to_json()["command"], "train");
  for (const auto& k : RunConfig::schema("train")) EXPECT_TRUE(j.contains(k.key)) << k.key;
  EXPECT_TRUE(j["data"].is_null());
  EXPECT_EQ(RunConfig::commands().size(), 5u);
}

TEST(RunConfig, ParsesFilesAndRejectsBadInput) {
  RunConfig c("train");
  c.parse("# comment\nversion = 1\nsteps = 12  # inline\ndata = \"dir with space\"\nlr = 2e-3\nbimot_enabled = false\n");
  EXPECT_EQ(c.get_uint("steps"), 12u);
  EXPECT_EQ(c.get_string("data"), "dir with space");
  EXPECT_EQ(c.get_double("lr"), 2e-3);
  EXPECT_FALSE(c.get_bool("bimot_enabled"));
  c.set("steps", "7");
  EXPECT_EQ(c.get_uint("steps"), 7u);

  EXPECT_THROW(c.set("stepz", "1"), ConfigError);
  EXPECT_THROW(c.set("steps", "many"), ConfigError);
  EXPECT_THROW(c.set("steps", "-3"), ConfigError);
  EXPECT_THROW(c.set("lr", "fast"), ConfigError);
  EXPECT_THROW(c.set("bimot_enabled", "maybe"), ConfigError);
  EXPECT_THROW(c.set("version", "2"), ConfigError);
  EXPECT_THROW(c.parse("steps 3"), ConfigError);
  EXPECT_THROW(c.get_uint("lr"), ConfigError);
  EXPECT_THROW(RunConfig("fly"), ConfigError);
  EXPECT_THROW(RunConfig::schema("fly"), ConfigError);
  EXPECT_THROW(c.load_file("/nonexistent/drivescape.toml"), IoError);
}

TEST(RunConfig, HashFollowsEffectiveSettings) {
  RunConfig a("generate"), b("generate");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.set("cfg_scale", "2.5");
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.set("cfg_scale", "3");
  EXPECT_NE(config_hash(a), config_hash(b));
}

class Commands : public ::testing::Test {
 protected:
  Commands() : root_(fs::temp_directory_path() / ("ds_app_" + std::to_string(::getpid()))) {
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Commands() override { fs::remove_all(root_); }

  RunConfig gen_scene_config(const fs::path& out, std::size_t count = 2) const {
    RunConfig c("gen-scene");
    c.set("out", out.string());
    c.set("count", std::to_string(count));
    c.set("width", "16");
    c.set("height", "8");
    c.set("seed", "50");
    return c;
  }
  RunConfig train_config(const fs::path& data, const fs::path& out, std::size_t steps) const {
    RunConfig c("train");
    c.parse("patch = 2\ndim0 = 8\ndim1 = 8\nheads = 2\nstem_channels = 4\nhead_channels = 4\n"
            "encoder_channels = 2\ntime_dim = 8\nseed = 4\n");
    c.set("data", data.string());
    c.set("out", out.string());
    c.set("steps", std::to_string(steps));
    return c;
  }

  fs::path root_;
};

TEST_F(Commands, GenSceneWritesScenesAndManifest) {
  std::vector<std::string> lines;
  run_command(gen_scene_config(root_ / "scenes", 3), [&](const std::string& l) { lines.push_back(l); });
  EXPECT_EQ(lines.size(), 3u);
  EXPECT_EQ(count_files(root_ / "scenes", ".json"), 4u);
  const auto s = load_scene(root_ / "scenes" / "scene_51.json");
  EXPECT_EQ(s.frame_count(), 8u);
  EXPECT_EQ(s.camera(ViewId::kFront).width, 16u);
  EXPECT_EQ(s.frames, generate_scene(51, SceneConfig{10, 0.8, 3, "straight", 16, 8}).frames);

  auto bad = gen_scene_config(root_ / "bad");
  bad.set("fps", "11");
  EXPECT_THROW(run_command(bad), ConfigError);
  bad = gen_scene_config(root_ / "bad");
  bad.set("count", "0");
  EXPECT_THROW(run_command(bad), ConfigError);
  EXPECT_THROW(run_command(RunConfig("gen-scene")), ConfigError);
}

TEST_F(Commands, TrainGenerateEvaluateRender) {
  run_command(gen_scene_config(root_ / "scenes"));
  run_command(train_config(root_ / "scenes", root_ / "ckpt", 3));
  EXPECT_EQ(read_lines(root_ / "ckpt" / "loss.jsonl").size(), 3u);
  EXPECT_TRUE(fs::exists(root_ / "ckpt" / "run.json"));

  RunConfig gen("generate");
  gen.set("checkpoint", (root_ / "ckpt").string());
  gen.set("scene", (root_ / "scenes" / "scene_50.json").string());
  gen.set("out", (root_ / "gen").string());
  gen.set("steps", "2");
  gen.set("seed", "9");
  run_command(gen);
  const auto scene = load_scene(root_ / "scenes" / "scene_50.json");
  EXPECT_EQ(count_files(root_ / "gen", ".png"), kViewCount * scene.frame_count());
  std::ifstream mf(root_ / "gen" / "scene_50" / "manifest.json");
  const auto manifest = nlohmann::json::parse(mf);
  EXPECT_EQ(manifest["plan"]["pass1"].size(), 3u);
  EXPECT_EQ(manifest["inference"]["cfg_scale"], kDefaultCfgScale);

  gen.set("out", (root_ / "gen2").string());
  run_command(gen);
  EXPECT_EQ(read_generated(root_ / "gen" / "scene_50").frames, read_generated(root_ / "gen2" / "scene_50").frames);

  RunConfig ev("evaluate");
  ev.set("generated", (root_ / "gen" / "scene_50").string());
  ev.set("scene", (root_ / "scenes" / "scene_50.json").string());
  ev.set("report", (root_ / "report" / "gen").string());
  run_command(ev);
  EXPECT_TRUE(fs::exists(root_ / "report" / "gen.json"));
  EXPECT_EQ(read_lines(root_ / "report" / "gen.csv").size(), 2u);

  RunConfig rd("render");
  rd.set("generated", (root_ / "gen" / "scene_50").string());
  rd.set("out", (root_ / "sheets").string());
  run_command(rd);
  EXPECT_EQ(count_files(root_ / "sheets", ".png"), scene.frame_count());
  const Image sheet = read_png(root_ / "sheets" / "sheet_0.png");
  EXPECT_EQ(sheet.width, 48u);
  EXPECT_EQ(sheet.height, 16u);
  rd.set("layout", "strip");
  EXPECT_THROW(run_command(rd), ConfigError);
}

TEST_F(Commands, EvaluateGroundTruthAgainstItself) {
  run_command(gen_scene_config(root_ / "scenes", 1));
  const auto scene = load_scene(root_ / "scenes" / "scene_50.json");
  MultiViewVideo v;
  v.scene = scene.name;
  v.frames = scene.frames;
  write_generated(v, root_ / "gt", {});
  RunConfig ev("evaluate");
  ev.set("generated", (root_ / "gt" / scene.name).string());
  ev.set("scene", (root_ / "scenes" / "scene_50.json").string());
  ev.set("report", (root_ / "gt_report").string());
  run_command(ev);
  std::ifstream in(root_ / "gt_report.json");
  const auto j = nlohmann::json::parse(in);
  std::map<std::string, double> m;
  for (const auto& r : j["records"]) m[r["metric"]] = r["value"];
  EXPECT_EQ(m.at("vehicle_iou"), 1.0);
  EXPECT_EQ(m.at("road_iou"), 1.0);
  EXPECT_LT(std::fabs(m.at("frechet_distance")), 1e-8);
}

TEST_F(Commands, TrainResumeContinuesTheLossTrace) {
  run_command(gen_scene_config(root_ / "scenes"));
  run_command(train_config(root_ / "scenes", root_ / "full", 5));
  run_command(train_config(root_ / "scenes", root_ / "part", 3));
  auto resume = train_config(root_ / "scenes", root_ / "part", 5);
  resume.set("resume", (root_ / "part").string());
  run_command(resume);
  const auto full = read_lines(root_ / "full" / "loss.jsonl"), part = read_lines(root_ / "part" / "loss.jsonl");
  ASSERT_EQ(full.size(), 5u);
  ASSERT_EQ(part.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto a = nlohmann::json::parse(full[i]), b = nlohmann::json::parse(part[i]);
    EXPECT_EQ(a["step"], b["step"]);
    EXPECT_NEAR(a["loss"].get<double>(), b["loss"].get<double>(), 1e-6) << "step " << i;
  }
  auto beyond = train_config(root_ / "scenes", root_ / "again", 2);
  beyond.set("resume", (root_ / "part").string());
  EXPECT_THROW(run_command(beyond), ConfigError);
}

TEST_F(Commands, MissingInputsAreErrors) {
  RunConfig gen("generate");
  gen.set("checkpoint", (root_ / "nope").string());
  gen.set("scene", (root_ / "nope.json").string());
  gen.set("out", (root_ / "gen").string());
  EXPECT_THROW(run_command(gen), IoError);
  RunConfig ev("evaluate");
  ev.set("report", (root_ / "r").string());
  EXPECT_THROW(run_command(ev), ConfigError);
  ev.set("ablation", "no_such_row");
  ev.set("train_data", root_.string());
  ev.set("eval_data", root_.string());
  EXPECT_THROW(run_command(ev), ConfigError);
  RunConfig tr("train");
  tr.set("data", (root_ / "missing").string());
  tr.set("out", (root_ / "o").string());
  EXPECT_THROW(run_command(tr), IoError);
}

}  // namespace
}  // namespace ds
