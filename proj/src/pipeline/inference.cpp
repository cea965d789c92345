#include "pipeline/inference.hpp"

#include <cstdlib>
#include <exception>
#include <fstream>
#include <thread>

#include "common/error.hpp"

namespace ds {

using nlohmann::json;

namespace {

constexpr std::uint64_t kViewStream = 10;

std::vector<Image> to_images(const std::vector<double>& clip, std::size_t frames, std::size_t w, std::size_t h) {
  std::vector<Image> out;
  for (std::size_t f = 0; f < frames; ++f) out.push_back(planar_to_image(clip.data() + f * 3 * w * h, w, h));
  return out;
}

std::vector<double> to_planar(const std::vector<Image>& frames) {
  std::vector<double> out;
  for (const auto& img : frames) {
    const auto p = image_to_planar(img);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

}  // namespace

void InferenceOptions::validate() const {
  if (steps == 0) throw ConfigError("sampling steps must be positive");
  if (!(cfg_scale >= 0.0)) throw ConfigError("cfg scale must be non-negative");
}

json InferenceOptions::to_json() const {
  return {{"seed", seed},
          {"steps", steps},
          {"cfg_scale", cfg_scale},
          {"clip_x0", clip_x0},
          {"keyframe_cond", keyframe_cond},
          {"keyframe_in_pass1", keyframe_in_pass1},
          {"neighbor_cond", neighbor_cond}};
}

std::size_t worker_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DRIVESCAPE_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

std::uint64_t view_seed(std::uint64_t seed, ViewId view) {
  return derived_rng(seed, kViewStream, view_index(view))();
}

MultiViewVideo run_inference(const DenoiserNet& net, const SceneTimeline& scene, const ViewGraph& graph,
                             const GenerationPlan& plan, const InferenceOptions& options) {
  options.validate();
  plan.validate(graph);
  const PreparedScene prepared = prepare_scene(scene);
  if (prepared.height != net.config.height || prepared.width != net.config.width) {
    throw ConfigError("scene image size differs from the model's");
  }
  MultiViewVideo out;
  out.scene = scene.name;
  for (ViewId v : kAllViews) out.seeds[view_index(v)] = view_seed(options.seed, v);

  const auto sample = [&](ViewId v, const ClipConditions& cond) {
    SampleOptions so;
    so.steps = options.steps;
    so.cfg_scale = options.cfg_scale;
    so.seed = out.seeds[view_index(v)];
    so.clip_x0 = options.clip_x0;
    const auto clip = sample_clip(net, net.schedule, prepared.first_frame(v), prepared.frame_count, cond, so);
    out.frames[view_index(v)] = to_images(clip, prepared.frame_count, prepared.width, prepared.height);
  };

  // Pass 1: independent key-view samplings, each on its own seeded stream.
  const bool kf1 = options.keyframe_cond && plan.keyframe_in_pass1 && options.keyframe_in_pass1;
  std::vector<std::exception_ptr> errors(plan.pass1.size());
  const std::size_t workers = std::min(worker_threads(options.threads), plan.pass1.size());
  const auto run_entry = [&](std::size_t i) {
    try {
      const ViewId v = plan.pass1[i].view;
      sample(v, make_conditions(prepared, graph, v, kf1));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < plan.pass1.size(); ++i) run_entry(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < plan.pass1.size(); i += workers) run_entry(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (...) {
      std::throw_with_nested(RuntimeError("pass 1 failed for view " + std::string(view_name(plan.pass1[i].view)) +
                                          "; pass 2 aborted"));
    }
  }

  // Pass 2: neighbor views conditioned on the generated key videos.
  for (const auto& e : plan.pass2) {
    std::vector<double> prev, next;
    if (options.neighbor_cond) {
      prev = to_planar(out.frames[view_index(e.sources[0])]);
      next = to_planar(out.frames[view_index(e.sources[1])]);
    }
    sample(e.view, make_conditions(prepared, graph, e.view, options.keyframe_cond,
                                   options.neighbor_cond ? &prev : nullptr, options.neighbor_cond ? &next : nullptr));
  }
  return out;
}

void write_generated(const MultiViewVideo& video, const std::filesystem::path& dir, const json& manifest) {
  const auto root = dir / video.scene;
  std::filesystem::create_directories(root);
  for (ViewId v : kAllViews) {
    const auto view_dir = root / std::string(view_name(v));
    std::filesystem::create_directories(view_dir);
    const auto& frames = video.frames[view_index(v)];
    for (std::size_t i = 0; i < frames.size(); ++i) {
      write_png(view_dir / ("frame_" + std::to_string(i) + ".png"), frames[i]);
    }
  }
  json m = manifest;
  m["scene"] = video.scene;
  json seeds = json::object();
  for (ViewId v : kAllViews) seeds[std::string(view_name(v))] = video.seeds[view_index(v)];
  m["view_seeds"] = seeds;
  std::ofstream out(root / "manifest.json");
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
  out << m.dump(2) << '\n';
}

MultiViewVideo read_generated(const std::filesystem::path& scene_dir) {
  if (!std::filesystem::is_directory(scene_dir)) throw IoError("generated directory " + scene_dir.string() + " not found");
  MultiViewVideo video;
  video.scene = scene_dir.filename().string();
  for (ViewId v : kAllViews) {
    const auto view_dir = scene_dir / std::string(view_name(v));
    auto& frames = video.frames[view_index(v)];
    for (std::size_t i = 0;; ++i) {
      const auto p = view_dir / ("frame_" + std::to_string(i) + ".png");
      if (!std::filesystem::exists(p)) break;
      frames.push_back(read_png(p));
    }
    if (frames.empty()) throw IoError("no frames for view " + std::string(view_name(v)) + " in " + scene_dir.string());
  }
  const auto manifest = scene_dir / "manifest.json";
  if (std::filesystem::exists(manifest)) {
    std::ifstream in(manifest);
    try {
      const json m = json::parse(in);
      if (m.contains("scene")) video.scene = m.at("scene").get<std::string>();
      if (m.contains("view_seeds")) {
        for (ViewId v : kAllViews) video.seeds[view_index(v)] = m.at("view_seeds").at(std::string(view_name(v)));
      }
    } catch (const json::exception& e) {
      throw ParseError("generated manifest " + manifest.string() + ": " + e.what());
    }
  }
  return video;
}

}  // namespace ds
