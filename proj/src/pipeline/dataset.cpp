#include "pipeline/dataset.hpp"

#include "common/error.hpp"
#include "condition/raster.hpp"

namespace ds {

std::vector<double> PreparedScene::first_frame(ViewId v) const {
  const auto& c = clips[view_index(v)];
  return {c.begin(), c.begin() + static_cast<std::ptrdiff_t>(frame_size())};
}

PreparedScene prepare_scene(const SceneTimeline& scene) {
  scene.validate();
  if (!scene.has_frames()) throw ValidationError("scene " + scene.name + " has no rendered frames");
  PreparedScene p;
  p.name = scene.name;
  p.frame_count = scene.frame_count();
  p.width = scene.cameras[0].width;
  p.height = scene.cameras[0].height;
  std::vector<double> tick_ts;
  for (const auto& t : scene.ticks) tick_ts.push_back(t.t);
  p.plan = build_plan(scene.frame_timestamps, tick_ts);
  const Grid grid{p.width, p.height};
  for (ViewId v : kAllViews) {
    const auto& cam = scene.camera(v);
    if (cam.width != p.width || cam.height != p.height) throw ValidationError("views differ in image size");
    auto& clip = p.clips[view_index(v)];
    for (const Image& img : scene.frames[view_index(v)]) {
      const auto planar = image_to_planar(img);
      clip.insert(clip.end(), planar.begin(), planar.end());
    }
    for (std::size_t f = 0; f < p.frame_count; ++f) {
      if (!p.plan.source_tick[f]) continue;
      const auto& tick = scene.ticks[*p.plan.source_tick[f]];
      p.map[view_index(v)].push_back(rasterize_map(tick.map, cam, grid));
      p.layout[view_index(v)].push_back(rasterize_boxes(tick.boxes, cam, grid));
    }
  }
  for (std::size_t f = 0; f < p.frame_count; ++f) {
    if (p.plan.source_tick[f]) p.ego.push_back(scene.ticks[*p.plan.source_tick[f]].ego);
  }
  return p;
}

std::vector<double> keyframe_raster(const PreparedScene& scene, const ViewGraph& graph, ViewId view) {
  std::vector<double> out;
  out.reserve(kViewCount * scene.frame_size());
  for (ViewId v : graph.ring_from(view)) {
    const auto f = scene.first_frame(v);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

std::vector<std::vector<double>> neighbor_frames(const std::vector<double>& prev_clip,
                                                 const std::vector<double>& next_clip, std::size_t frame_count) {
  if (frame_count == 0 || prev_clip.size() != next_clip.size() || prev_clip.size() % frame_count) {
    throw ShapeError("neighbor clips differ in size or frame count");
  }
  const std::size_t per = prev_clip.size() / frame_count;
  std::vector<std::vector<double>> out(frame_count);
  for (std::size_t f = 0; f < frame_count; ++f) {
    const auto off = static_cast<std::ptrdiff_t>(f * per);
    out[f].insert(out[f].end(), prev_clip.begin() + off, prev_clip.begin() + off + static_cast<std::ptrdiff_t>(per));
    out[f].insert(out[f].end(), next_clip.begin() + off, next_clip.begin() + off + static_cast<std::ptrdiff_t>(per));
  }
  return out;
}

ClipConditions make_conditions(const PreparedScene& scene, const ViewGraph& graph, ViewId view, bool with_keyframe,
                               const std::vector<double>* prev_clip, const std::vector<double>* next_clip) {
  ClipConditions c;
  c.view = view;
  c.plan = scene.plan;
  c.map = scene.map[view_index(view)];
  c.layout = scene.layout[view_index(view)];
  c.ego = scene.ego;
  if (with_keyframe) c.keyframe = keyframe_raster(scene, graph, view);
  if ((prev_clip == nullptr) != (next_clip == nullptr)) throw ValidationError("neighbor sources come in pairs");
  if (prev_clip) c.neighbor = neighbor_frames(*prev_clip, *next_clip, scene.frame_count);
  return c;
}

}  // namespace ds
