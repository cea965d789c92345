#pragma once

#include <array>
#include <vector>

#include "scene/types.hpp"

namespace ds {

enum class ViewRole { kKey, kNeighbor };

struct ViewGraph {
  std::array<ViewId, kViewCount> ring;                   // FRONT -> FRONT_RIGHT -> ... -> FRONT_LEFT
  std::array<ViewRole, kViewCount> role;                 // by view_index
  std::array<std::array<ViewId, 2>, kViewCount> adjacent;  // by view_index: {previous, next} on the ring

  std::vector<ViewId> views_with(ViewRole r) const;
  std::size_t ring_position(ViewId v) const;
  // The six views starting at `v` and following the ring.
  std::array<ViewId, kViewCount> ring_from(ViewId v) const;
  // Throws ValidationError if any partition invariant fails.
  void validate() const;
};

// Fixed ring and key/neighbor partition; requires all six canonical cameras.
ViewGraph build_view_graph(const std::array<CameraSpec, kViewCount>& rig);

struct PassEntry {
  ViewId view;
  std::vector<ViewId> sources;  // generated key views this entry is conditioned on
};

struct GenerationPlan {
  std::vector<PassEntry> pass1;
  std::vector<PassEntry> pass2;
  std::array<ViewId, kViewCount> keyframe_views;  // first frames supplied to every entry
  bool keyframe_in_pass1 = true;

  // 2 passes, disjoint cover of all views, pass-2 sources resolved within pass 1.
  void validate(const ViewGraph& graph) const;
};

GenerationPlan plan_inference(const SceneTimeline& scene, const ViewGraph& graph, bool keyframe_in_pass1 = true);

}  // namespace ds
