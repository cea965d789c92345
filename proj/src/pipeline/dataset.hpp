#pragma once

#include <array>
#include <vector>

#include "diffusion/denoiser.hpp"
#include "pipeline/view_graph.hpp"

namespace ds {

// A scene converted to model inputs: planar clips and projected condition rasters.
struct PreparedScene {
  std::string name;
  std::size_t frame_count = 0;
  std::size_t height = 0, width = 0;
  std::array<std::vector<double>, kViewCount> clips;  // [F, 3, H, W] in [-1, 1]
  SparsePlan plan;
  std::array<std::vector<std::vector<double>>, kViewCount> map;     // per conditioned frame
  std::array<std::vector<std::vector<double>>, kViewCount> layout;  // per conditioned frame
  std::vector<EgoState> ego;                                        // per conditioned frame

  std::size_t frame_size() const { return 3 * height * width; }
  std::vector<double> first_frame(ViewId v) const;
};

PreparedScene prepare_scene(const SceneTimeline& scene);

// Six first frames in ring order starting at `view`, channel-concatenated: [18, H, W].
std::vector<double> keyframe_raster(const PreparedScene& scene, const ViewGraph& graph, ViewId view);

// Per-frame [6, H, W] stacks of the two adjacent key-view clips (ring order).
std::vector<std::vector<double>> neighbor_frames(const std::vector<double>& prev_clip,
                                                 const std::vector<double>& next_clip, std::size_t frame_count);

ClipConditions make_conditions(const PreparedScene& scene, const ViewGraph& graph, ViewId view, bool with_keyframe,
                               const std::vector<double>* prev_clip = nullptr,
                               const std::vector<double>* next_clip = nullptr);

}  // namespace ds
