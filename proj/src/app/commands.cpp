#include "app/commands.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "eval/ablation.hpp"
#include "pipeline/contact_sheet.hpp"
#include "scene/generator.hpp"
#include "scene/io.hpp"

namespace ds {

using nlohmann::json;

namespace {

void emit(const LogSink& log, const std::string& line) {
  if (log) log(line);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json run_manifest(const RunConfig& cfg) {
  return {{"config", cfg.to_json()}, {"config_hash", config_hash(cfg)}};
}

ModelConfig model_config(const RunConfig& cfg, std::size_t height, std::size_t width) {
  ModelConfig m;
  m.height = height;
  m.width = width;
  m.dim0 = cfg.get_uint("dim0");
  m.dim1 = cfg.get_uint("dim1");
  m.heads = cfg.get_uint("heads");
  m.patch = cfg.get_uint("patch");
  m.stem_channels = cfg.get_uint("stem_channels");
  m.head_channels = cfg.get_uint("head_channels");
  m.encoder_channels = cfg.get_uint("encoder_channels");
  m.time_dim = cfg.get_uint("time_dim");
  m.bimot_enabled = cfg.get_bool("bimot_enabled");
  m.bimot_temporal = cfg.get_bool("bimot_temporal");
  m.keyframe_cond = cfg.get_bool("keyframe_cond");
  m.neighbor_cond = cfg.get_bool("neighbor_cond");
  m.queries_from_out = cfg.get_bool("queries_from_out");
  m.first_frame_anchor = cfg.get_bool("first_frame_anchor");
  m.init_seed = cfg.get_uint("init_seed");
  m.validate();
  return m;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.seed = cfg.get_uint("seed");
  t.steps = cfg.get_uint("steps");
  t.optimizer.lr = cfg.get_double("lr");
  t.optimizer.weight_decay = cfg.get_double("weight_decay");
  t.dropout.p_neighbor = cfg.get_double("p_neighbor_drop");
  t.dropout.p_conditions = cfg.get_double("p_condition_drop");
  t.grad_clip = cfg.get_double("grad_clip");
  t.generated_neighbor_prob = cfg.get_double("generated_neighbor_prob");
  t.generated_sample_steps = cfg.get_uint("generated_sample_steps");
  if (cfg.command() == "train") t.checkpoint_every = cfg.get_uint("checkpoint_every");
  t.validate();
  return t;
}

InferenceOptions inference_options(const RunConfig& cfg) {
  InferenceOptions o;
  o.seed = cfg.get_uint("seed");
  o.steps = cfg.get_uint(cfg.command() == "generate" ? "steps" : "sample_steps");
  o.cfg_scale = cfg.get_double("cfg_scale");
  o.clip_x0 = cfg.get_bool("clip_x0");
  o.keyframe_in_pass1 = cfg.get_bool("keyframe_in_pass1");
  o.neighbor_cond = cfg.get_bool("use_neighbor");
  o.threads = cfg.get_uint("threads");
  o.validate();
  return o;
}

void gen_scene(const RunConfig& cfg, const LogSink& log) {
  cfg.require("out");
  SceneConfig sc;
  sc.fps = cfg.get_double("fps");
  sc.duration = cfg.get_double("duration");
  sc.vehicles = static_cast<int>(std::min<std::uint64_t>(cfg.get_uint("vehicles"), 1000));
  sc.road_template = cfg.get_string("road_template");
  sc.width = cfg.get_uint("width");
  sc.height = cfg.get_uint("height");
  sc.validate();
  const std::uint64_t count = cfg.get_uint("count");
  if (count == 0) throw ConfigError("gen-scene: count must be positive");
  const std::filesystem::path out = cfg.get_string("out");
  std::filesystem::create_directories(out);
  json names = json::array();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t seed = cfg.get_uint("seed") + i;
    const SceneTimeline scene = generate_scene(seed, sc);
    save_scene(scene, out / (scene.name + ".json"));
    names.push_back(scene.name);
    emit(log, "wrote scene " + scene.name + " (" + std::to_string(scene.frame_count()) + " frames x 6 views)");
  }
  json m = run_manifest(cfg);
  m["scenes"] = names;
  write_text(out / "manifest.json", m.dump(2) + "\n");
}

void train(const RunConfig& cfg, const LogSink& log) {
  cfg.require("data");
  cfg.require("out");
  const TrainConfig tc = train_config(cfg);
  const Dataset data = load_dataset(cfg.get_string("data"));
  const ModelConfig mc = model_config(cfg, data.prepared.front().height, data.prepared.front().width);
  Trainer trainer(data, mc, tc);
  const std::filesystem::path out = cfg.get_string("out");
  std::filesystem::create_directories(out);
  const bool resuming = cfg.has("resume");
  if (resuming) {
    trainer.load_checkpoint(cfg.get_string("resume"));
    emit(log, "resumed at step " + std::to_string(trainer.steps_done()));
  }
  if (trainer.steps_done() > tc.steps) {
    throw ConfigError("train: checkpoint is already at step " + std::to_string(trainer.steps_done()) +
                      ", beyond steps = " + std::to_string(tc.steps));
  }
  const std::filesystem::path log_path = cfg.has("log") ? std::filesystem::path(cfg.get_string("log")) : out / "loss.jsonl";
  if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
  std::ofstream loss_log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!loss_log) throw IoError("cannot write loss log " + log_path.string());
  write_text(out / "run.json", run_manifest(cfg).dump(2) + "\n");
  while (trainer.steps_done() < tc.steps) {
    const StepRecord rec = trainer.step();
    loss_log << rec.to_json().dump() << '\n';
    loss_log.flush();
    if ((rec.step + 1) % 10 == 0 || rec.step + 1 == tc.steps) {
      std::ostringstream line;
      line << "step " << rec.step + 1 << "/" << tc.steps << " loss " << rec.loss;
      emit(log, line.str());
    }
    if (tc.checkpoint_every > 0 && trainer.steps_done() % tc.checkpoint_every == 0 && trainer.steps_done() < tc.steps) {
      trainer.save_checkpoint(out);
    }
  }
  trainer.save_checkpoint(out);
  emit(log, "checkpoint written to " + out.string());
}

void generate(const RunConfig& cfg, const LogSink& log) {
  cfg.require("checkpoint");
  cfg.require("scene");
  cfg.require("out");
  const InferenceOptions opts = inference_options(cfg);
  const auto net = load_model(cfg.get_string("checkpoint"));
  const SceneTimeline scene = load_scene(cfg.get_string("scene"));
  const ViewGraph graph = build_view_graph(scene.cameras);
  const GenerationPlan plan = plan_inference(scene, graph, opts.keyframe_in_pass1);
  const MultiViewVideo video = run_inference(*net, scene, graph, plan, opts);
  json m = run_manifest(cfg);
  m["inference"] = opts.to_json();
  m["model"] = net->config.to_json();
  json p1 = json::array(), p2 = json::array();
  for (const auto& e : plan.pass1) p1.push_back(view_name(e.view));
  for (const auto& e : plan.pass2) {
    p2.push_back({{"view", view_name(e.view)}, {"sources", {view_name(e.sources[0]), view_name(e.sources[1])}}});
  }
  m["plan"] = {{"pass1", p1}, {"pass2", p2}};
  write_generated(video, cfg.get_string("out"), m);
  emit(log, "wrote " + (std::filesystem::path(cfg.get_string("out")) / video.scene).string());
}

std::vector<AblationConfig> parse_matrix(const std::string& spec) {
  const auto all = default_ablation_matrix();
  if (spec == "default") return all;
  std::vector<AblationConfig> out;
  std::istringstream in(spec);
  std::string name;
  while (std::getline(in, name, ',')) {
    bool found = false;
    for (const auto& c : all) {
      if (c.name == name) {
        out.push_back(c);
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown ablation row '" + name + "'");
  }
  if (out.empty()) throw ConfigError("ablation matrix is empty");
  return out;
}

void evaluate(const RunConfig& cfg, const LogSink& log) {
  cfg.require("report");
  const std::filesystem::path report = cfg.get_string("report");
  json out_json;
  std::string csv;
  if (cfg.has("ablation")) {
    cfg.require("train_data");
    cfg.require("eval_data");
    const auto matrix = parse_matrix(cfg.get_string("ablation"));
    AblationBudget budget;
    budget.train = train_config(cfg);
    budget.inference = inference_options(cfg);
    const Dataset train_data = load_dataset(cfg.get_string("train_data"));
    const Dataset eval_data = load_dataset(cfg.get_string("eval_data"));
    budget.model = model_config(cfg, train_data.prepared.front().height, train_data.prepared.front().width);
    const AblationReport r = run_ablation(matrix, train_data, eval_data, budget,
                                          [&](const std::string& name, const StepRecord& rec) {
                                            if ((rec.step + 1) % 50 == 0) {
                                              emit(log, name + ": step " + std::to_string(rec.step + 1));
                                            }
                                          });
    out_json = r.to_json();
    csv = r.to_csv();
  } else {
    cfg.require("generated");
    cfg.require("scene");
    const SceneTimeline scene = load_scene(cfg.get_string("scene"));
    const MultiViewVideo video = read_generated(cfg.get_string("generated"));
    const SceneMetrics m = evaluate_video(video, scene);
    json records = json::array();
    const auto add = [&](const std::string& metric, double v) {
      records.push_back({{"config", "generated"}, {"metric", metric}, {"scene", scene.name}, {"value", v}});
    };
    add("frechet_distance", m.frechet);
    add("vehicle_iou", m.iou.vehicle.iou());
    add("road_iou", m.iou.road.iou());
    add("temporal_consistency", m.temporal);
    add("ground_truth_temporal_consistency", m.ground_truth_temporal);
    for (const auto& c : m.iou.per_class) add("iou_label_" + std::to_string(c.label), c.iou());
    out_json = {{"version", 1}, {"configs", json::array()}, {"records", records}};
    std::ostringstream s;
    s.precision(10);
    s << "scene,frechet_distance,vehicle_iou,road_iou,temporal_consistency,ground_truth_temporal_consistency\n"
      << scene.name << ',' << m.frechet << ',' << m.iou.vehicle.iou() << ',' << m.iou.road.iou() << ',' << m.temporal
      << ',' << m.ground_truth_temporal << '\n';
    csv = s.str();
  }
  out_json["run"] = run_manifest(cfg);
  auto json_path = report, csv_path = report;
  json_path += ".json";
  csv_path += ".csv";
  write_text(json_path, out_json.dump(2) + "\n");
  write_text(csv_path, csv);
  emit(log, "wrote " + json_path.string() + " and " + csv_path.string());
}

void render(const RunConfig& cfg, const LogSink& log) {
  cfg.require("generated");
  cfg.require("out");
  if (cfg.get_string("layout") != "grid") throw ConfigError("render: unknown layout '" + cfg.get_string("layout") + "'");
  const MultiViewVideo video = read_generated(cfg.get_string("generated"));
  std::size_t frames = video.frames[0].size();
  for (const auto& v : video.frames) frames = std::min(frames, v.size());
  if (frames == 0) throw ValidationError("render: generated video has no frames");
  const std::filesystem::path out = cfg.get_string("out");
  std::filesystem::create_directories(out);
  for (std::size_t i = 0; i < frames; ++i) {
    std::array<Image, kViewCount> views;
    for (ViewId v : kAllViews) views[view_index(v)] = video.frames[view_index(v)][i];
    write_png(out / ("sheet_" + std::to_string(i) + ".png"), contact_sheet(views));
  }
  write_text(out / "manifest.json", run_manifest(cfg).dump(2) + "\n");
  emit(log, "wrote " + std::to_string(frames) + " contact sheets to " + out.string());
}

}  // namespace

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : cfg.to_json().dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void run_command(const RunConfig& cfg, const LogSink& log) {
  const std::string& c = cfg.command();
  if (c == "gen-scene") return gen_scene(cfg, log);
  if (c == "train") return train(cfg, log);
  if (c == "generate") return generate(cfg, log);
  if (c == "evaluate") return evaluate(cfg, log);
  if (c == "render") return render(cfg, log);
  throw ConfigError("unknown command '" + c + "'");
}

}  // namespace ds
