#pragma once

#include <optional>
#include <vector>

#include "tensor/tensor.hpp"

namespace ds {

struct SparsePlan {
  std::size_t frame_count = 0;
  std::vector<bool> conditioned;
  std::vector<std::optional<std::size_t>> source_tick;
  double video_fps = 0;
  double cond_fps = 0;

  std::size_t conditioned_count() const;
};

// Exact (1e-6 s) matching of annotation ticks onto frames. Both sequences must be
// strictly increasing; a tick without a matching frame raises AlignmentError.
SparsePlan build_plan(const std::vector<double>& frame_timestamps, const std::vector<double>& tick_timestamps);

// Full-rate [frames, ...] stack: real conditions (one per conditioned frame, in frame
// order) at conditioned slots, `null_embedding` everywhere else. Gradients flow into
// the null embedding from every unconditioned slot.
Tensor densify(const SparsePlan& plan, const std::vector<Tensor>& real, const Tensor& null_embedding);

}  // namespace ds
