#include "sparse/plan.hpp"

#include <cmath>

#include "common/error.hpp"
#include "scene/types.hpp"
#include "tensor/ops.hpp"

namespace ds {

namespace {

void require_increasing(const std::vector<double>& ts, const char* what) {
  for (std::size_t i = 1; i < ts.size(); ++i) {
    if (!(ts[i] > ts[i - 1])) {
      throw ValidationError(std::string(what) + " not strictly increasing at index " + std::to_string(i));
    }
  }
}

double mean_rate(const std::vector<double>& ts) {
  if (ts.size() < 2) return 0.0;
  return static_cast<double>(ts.size() - 1) / (ts.back() - ts.front());
}

}  // namespace

std::size_t SparsePlan::conditioned_count() const {
  std::size_t n = 0;
  for (bool c : conditioned) n += c ? 1 : 0;
  return n;
}

SparsePlan build_plan(const std::vector<double>& frame_timestamps, const std::vector<double>& tick_timestamps) {
  if (frame_timestamps.empty()) throw ValidationError("sparse plan needs at least one frame");
  require_increasing(frame_timestamps, "frame timestamps");
  require_increasing(tick_timestamps, "tick timestamps");
  SparsePlan plan;
  plan.frame_count = frame_timestamps.size();
  plan.conditioned.assign(plan.frame_count, false);
  plan.source_tick.assign(plan.frame_count, std::nullopt);
  std::size_t f = 0;
  for (std::size_t k = 0; k < tick_timestamps.size(); ++k) {
    const double t = tick_timestamps[k];
    while (f < plan.frame_count && frame_timestamps[f] < t - kTimestampTolerance) ++f;
    if (f == plan.frame_count || std::abs(frame_timestamps[f] - t) > kTimestampTolerance) {
      throw AlignmentError("annotation tick " + std::to_string(k) + " at t=" + std::to_string(t) +
                           " s matches no frame timestamp");
    }
    plan.conditioned[f] = true;
    plan.source_tick[f] = k;
  }
  plan.video_fps = mean_rate(frame_timestamps);
  plan.cond_fps = mean_rate(tick_timestamps);
  return plan;
}

Tensor densify(const SparsePlan& plan, const std::vector<Tensor>& real, const Tensor& null_embedding) {
  if (real.size() != plan.conditioned_count()) {
    throw ShapeError("densify: " + std::to_string(real.size()) + " real conditions for " +
                     std::to_string(plan.conditioned_count()) + " conditioned frames");
  }
  std::vector<Tensor> slots;
  slots.reserve(plan.frame_count);
  std::size_t next = 0;
  for (std::size_t i = 0; i < plan.frame_count; ++i) {
    const Tensor& t = plan.conditioned[i] ? real[next++] : null_embedding;
    if (t.shape() != null_embedding.shape()) {
      throw ShapeError("densify: condition at frame " + std::to_string(i) + " has shape " + shape_str(t.shape()) +
                       ", null embedding has " + shape_str(null_embedding.shape()));
    }
    slots.push_back(t);
  }
  return ops::stack(slots);
}

}  // namespace ds
