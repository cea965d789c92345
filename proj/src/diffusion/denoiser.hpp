#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "bimot/bimot.hpp"
#include "condition/embedding.hpp"
#include "diffusion/schedule.hpp"
#include "json.hpp"
#include "sparse/plan.hpp"

namespace ds {

inline constexpr std::size_t kKeyframeImages = 6;
inline constexpr std::size_t kNeighborImages = 2;

struct ModelConfig {
  std::size_t height = 32, width = 64;
  std::size_t patch = 4;
  std::size_t dim0 = 32, dim1 = 64;  // token widths at the two resolution levels
  std::size_t heads = 4;
  std::size_t stem_channels = 16;
  std::size_t head_channels = 8;
  std::size_t encoder_channels = 4;
  std::size_t time_dim = 64;
  std::size_t camera_embed_dim = 16;
  std::size_t scalar_dim = 32;
  bool bimot_enabled = true;
  bool bimot_temporal = true;
  bool queries_from_out = false;
  bool keyframe_cond = true;   // false detaches the key-frame pathway
  bool neighbor_cond = true;   // false detaches the neighbor-video pathway
  bool first_frame_anchor = true;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::size_t grid_h() const { return height / patch; }
  std::size_t grid_w() const { return width / patch; }
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Model-ready conditions for one clip of one view. Rasters are channel-planar.
struct ClipConditions {
  ViewId view = ViewId::kFront;
  SparsePlan plan;
  std::vector<std::vector<double>> map;     // per conditioned frame, [8, H, W]
  std::vector<std::vector<double>> layout;  // per conditioned frame, [8, H, W]
  std::vector<EgoState> ego;                // per conditioned frame
  std::vector<double> keyframe;             // [18, H, W] (6 first frames, ring order from `view`), or empty
  std::vector<std::vector<double>> neighbor;  // per frame [6, H, W] (2 adjacent key views), or empty
};

// Which condition pathways are wired into the forward pass. Detached pathways are
// skipped entirely; attached ones at initialization contribute exact zeros.
struct Attachments {
  bool bimot = true;
  bool keyframe = true;
  bool neighbor = true;
  bool scalar = true;
  bool fallback = true;
};

struct DenoiserInput {
  Tensor x_t;                       // [S, F, 3, H, W]; slot 0 of each clip holds the clean first frame
  std::vector<std::size_t> t;       // per clip
  std::vector<const ClipConditions*> conditions;  // per clip
  std::vector<DropDecision> drops;  // per clip; empty means no dropout
};

struct DenoiserNet;

struct LevelBlock {
  std::size_t dim = 0, grid_h = 0, grid_w = 0;
  nn::LayerNorm conv_norm;
  nn::Conv2d conv;
  nn::Attention spatial;
  std::optional<BimotBlock> bimot;
  nn::Attention temporal;
  nn::Linear scalar_ctx;
  nn::Attention scalar_attn, keyframe_attn, neighbor_attn;
  nn::Attention layout_attn;  // map/layout path when BiMoT is disabled
  nn::LayerNorm ffn_norm;
  nn::Linear ffn1, ffn2;
};

struct ImageEncoder {
  nn::Conv2d c1, c2;
  Tensor operator()(const Tensor& x) const;  // [B, C, H, W] -> [B, ce, H, W]
};

struct DenoiserNet {
  ModelConfig config;
  ParameterStore store;
  Attachments attach;

  DiffusionSchedule schedule = DiffusionSchedule::linear();
  nn::Linear time1, time2, anchor_gate;
  std::array<nn::Linear, 2> film;
  nn::Conv2d stem;
  nn::Linear patch_embed, down, up, head_proj;
  nn::LayerNorm head_norm;
  nn::Conv2d head;
  std::array<Tensor, 2> pos;
  std::array<LevelBlock, 2> levels;

  ImageEncoder map_encoder, layout_encoder, image_encoder;
  std::array<nn::Linear, kModalityCount> cond_proj;  // encoded rasters -> level-0 tokens
  std::array<nn::Linear, kModalityCount> cond_down;  // level-0 -> level-1 condition tokens
  ScalarEmbedder scalars;
  Tensor null_map, null_layout, null_keyframe, null_neighbor, null_scalar;

  explicit DenoiserNet(const ModelConfig& config);
  DenoiserNet(const DenoiserNet&) = delete;
  DenoiserNet& operator=(const DenoiserNet&) = delete;

  // Predicted noise, [S, F, 3, H, W]. Slot 0 of the output carries no meaning. With
  // first_frame_anchor the head output is added to g(t) * (x_t - sqrt(abar) x_0) / sqrt(1 - abar),
  // the noise implied by a static copy of the first frame, g(t) = (1 - abar)(1 + gate(time embedding)).
  Tensor forward(const DenoiserInput& input) const;
};

// Conditional and unconditional predictions combined with constant scale s.
Tensor cfg_predict(const DenoiserNet& net, const Tensor& x_t, std::size_t t,
                   const std::vector<const ClipConditions*>& conditions, double scale);

struct TrainingExample {
  std::vector<double> frames;  // [F, 3, H, W], frame 0 is the given first frame
  std::size_t frame_count = 0;
  const ClipConditions* conditions = nullptr;
  bool neighbor_role = false;
};

// One ε-prediction loss (MSE on frames 1..T) over a batch of clips. Timesteps, noise
// and dropout come from `rng`. Gradients are left in the parameters.
Tensor training_loss(const DenoiserNet& net, const DiffusionSchedule& schedule,
                     const std::vector<TrainingExample>& batch, const DropoutPolicy& policy,
                     std::mt19937_64& rng, std::vector<DropDecision>* drops_out = nullptr);

// Same loss at fixed timesteps and noise with a forced drop decision (validation).
double evaluation_loss(const DenoiserNet& net, const DiffusionSchedule& schedule, const TrainingExample& example,
                       std::size_t t, const std::vector<double>& noise, const DropDecision& drop);

struct SampleOptions {
  std::size_t steps = 50;
  double cfg_scale = kDefaultCfgScale;
  std::uint64_t seed = 0;
  bool clip_x0 = true;
};

// Generates frames 1..T given the first frame; returns [F, 3, H, W] with slot 0 equal to
// the given first frame.
std::vector<double> sample_clip(const DenoiserNet& net, const DiffusionSchedule& schedule,
                                const std::vector<double>& first_frame, std::size_t frame_count,
                                const ClipConditions& conditions, const SampleOptions& options);

}  // namespace ds
