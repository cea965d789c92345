#include "pipeline/view_graph.hpp"

#include <algorithm>
#include <set>

#include "common/error.hpp"

namespace ds {

std::vector<ViewId> ViewGraph::views_with(ViewRole r) const {
  std::vector<ViewId> out;
  for (ViewId v : ring) {
    if (role[view_index(v)] == r) out.push_back(v);
  }
  return out;
}

std::size_t ViewGraph::ring_position(ViewId v) const {
  return static_cast<std::size_t>(std::find(ring.begin(), ring.end(), v) - ring.begin());
}

std::array<ViewId, kViewCount> ViewGraph::ring_from(ViewId v) const {
  const std::size_t p = ring_position(v);
  std::array<ViewId, kViewCount> out{};
  for (std::size_t k = 0; k < kViewCount; ++k) out[k] = ring[(p + k) % kViewCount];
  return out;
}

void ViewGraph::validate() const {
  std::set<ViewId> seen(ring.begin(), ring.end());
  if (seen.size() != kViewCount) throw ValidationError("view ring must list each canonical view once");
  for (ViewId v : ring) {
    const auto& adj = adjacent[view_index(v)];
    const std::size_t p = ring_position(v);
    if (adj[0] != ring[(p + kViewCount - 1) % kViewCount] || adj[1] != ring[(p + 1) % kViewCount]) {
      throw ValidationError("adjacency of " + std::string(view_name(v)) + " disagrees with the ring");
    }
    const bool key = role[view_index(v)] == ViewRole::kKey;
    for (ViewId a : adj) {
      const bool adj_key = role[view_index(a)] == ViewRole::kKey;
      if (key && adj_key) throw ValidationError("key views " + std::string(view_name(v)) + " and " +
                                                std::string(view_name(a)) + " are adjacent");
      if (!key && !adj_key) throw ValidationError("neighbor view " + std::string(view_name(v)) +
                                                  " has a non-key ring neighbor");
    }
  }
}

ViewGraph build_view_graph(const std::array<CameraSpec, kViewCount>& rig) {
  for (std::size_t i = 0; i < kViewCount; ++i) {
    if (rig[i].view != static_cast<ViewId>(i)) throw ValidationError("camera rig is missing canonical views");
  }
  ViewGraph g;
  g.ring = {ViewId::kFront, ViewId::kFrontRight, ViewId::kBackRight, ViewId::kBack, ViewId::kBackLeft,
            ViewId::kFrontLeft};
  for (std::size_t p = 0; p < kViewCount; ++p) {
    const ViewId v = g.ring[p];
    g.adjacent[view_index(v)] = {g.ring[(p + kViewCount - 1) % kViewCount], g.ring[(p + 1) % kViewCount]};
    g.role[view_index(v)] = p % 2 == 0 ? ViewRole::kKey : ViewRole::kNeighbor;
  }
  g.validate();
  return g;
}

void GenerationPlan::validate(const ViewGraph& graph) const {
  std::set<ViewId> first, all;
  for (const auto& e : pass1) {
    if (!e.sources.empty()) throw ValidationError("pass-1 view " + std::string(view_name(e.view)) + " has sources");
    if (!first.insert(e.view).second) throw ValidationError("view listed twice in pass 1");
  }
  all = first;
  for (const auto& e : pass2) {
    if (!all.insert(e.view).second) throw ValidationError("view " + std::string(view_name(e.view)) + " in both passes");
    const auto& adj = graph.adjacent[view_index(e.view)];
    if (e.sources.size() != 2 || !std::is_permutation(e.sources.begin(), e.sources.end(), adj.begin())) {
      throw ValidationError("pass-2 view " + std::string(view_name(e.view)) + " must source its two ring neighbors");
    }
    for (ViewId s : e.sources) {
      if (!first.count(s)) throw ValidationError("pass-2 source " + std::string(view_name(s)) + " not produced in pass 1");
    }
  }
  if (all.size() != kViewCount) throw ValidationError("generation plan does not cover all six views");
}

GenerationPlan plan_inference(const SceneTimeline& scene, const ViewGraph& graph, bool keyframe_in_pass1) {
  if (!scene.has_frames()) throw ValidationError("scene " + scene.name + " has no first frames");
  GenerationPlan plan;
  for (ViewId v : graph.views_with(ViewRole::kKey)) plan.pass1.push_back({v, {}});
  for (ViewId v : graph.views_with(ViewRole::kNeighbor)) {
    const auto& adj = graph.adjacent[view_index(v)];
    plan.pass2.push_back({v, {adj[0], adj[1]}});
  }
  plan.keyframe_views = graph.ring;
  plan.keyframe_in_pass1 = keyframe_in_pass1;
  plan.validate(graph);
  return plan;
}

}  // namespace ds
