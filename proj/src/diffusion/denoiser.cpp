#include "diffusion/denoiser.hpp"

#include <cmath>

#include "common/error.hpp"
#include "condition/raster.hpp"

namespace ds {

using nlohmann::json;

namespace {

constexpr std::size_t kTimeFeatures = 32;
constexpr double kPosInitStd = 0.02;

Tensor nchw_to_tokens(const Tensor& x) {
  const auto& s = x.shape();
  return ops::reshape(ops::permute(x, {0, 2, 3, 1}), {s[0], s[2] * s[3], s[1]});
}

Tensor tokens_to_nchw(const Tensor& x, std::size_t h, std::size_t w) {
  const auto& s = x.shape();
  return ops::permute(ops::reshape(x, {s[0], h, w, s[2]}), {0, 3, 1, 2});
}

Tensor timestep_features(const std::vector<std::size_t>& ts) {
  std::vector<double> v;
  const std::size_t half = kTimeFeatures / 2;
  for (std::size_t t : ts) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      v.push_back(std::sin(static_cast<double>(t) * freq));
    }
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      v.push_back(std::cos(static_cast<double>(t) * freq));
    }
  }
  return Tensor({ts.size(), kTimeFeatures}, std::move(v));
}

// h[S*F, N, d] * (1 + scale) + shift with per-clip scale/shift from film[S, 2d].
Tensor apply_film(const Tensor& h, const Tensor& film, std::size_t clips) {
  const std::size_t d = h.shape()[2];
  const std::size_t per_clip = h.shape()[0] / clips * h.shape()[1];
  const Tensor scale = ops::expand(ops::reshape(ops::slice(film, 1, 0, d), {clips, 1, d}), 1, per_clip);
  const Tensor shift = ops::expand(ops::reshape(ops::slice(film, 1, d, 2 * d), {clips, 1, d}), 1, per_clip);
  const Tensor flat = ops::reshape(h, {clips, per_clip, d});
  return ops::reshape(ops::add(ops::mul(flat, ops::add_scalar(scale, 1.0)), shift), h.shape());
}

// Repeats a per-clip tensor [S, ...] to [S*F, ...].
Tensor repeat_frames(const Tensor& x, std::size_t frames) {
  Shape with_axis = x.shape();
  with_axis.insert(with_axis.begin() + 1, 1);
  Tensor e = ops::expand(ops::reshape(x, with_axis), 1, frames);
  Shape flat = x.shape();
  flat[0] *= frames;
  return ops::reshape(e, flat);
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows, const Shape& item_shape) {
  Shape shape = item_shape;
  shape.insert(shape.begin(), rows.size());
  std::vector<double> v;
  v.reserve(shape_numel(shape));
  for (const auto& r : rows) {
    if (r.size() != shape_numel(item_shape)) {
      throw ShapeError("condition raster has " + std::to_string(r.size()) + " values, expected " +
                       shape_str(item_shape));
    }
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(std::move(shape), std::move(v));
}

std::vector<Tensor> split_rows(const Tensor& x) {
  std::vector<Tensor> out;
  Shape item(x.shape().begin() + 1, x.shape().end());
  for (std::size_t i = 0; i < x.shape()[0]; ++i) out.push_back(ops::reshape(ops::slice(x, 0, i, i + 1), item));
  return out;
}

struct LevelConditions {
  std::array<Tensor, kModalityCount> tokens;  // each [S*F, N, d]
  Tensor scalar;                              // [S*F, 1, scalar_dim]
};

}  // namespace

Tensor ImageEncoder::operator()(const Tensor& x) const { return ops::silu(c2(ops::silu(c1(x)))); }

void ModelConfig::validate() const {
  if (patch == 0 || height % (2 * patch) || width % (2 * patch)) {
    throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be divisible by twice the patch size");
  }
  if (heads == 0 || dim0 % heads || dim1 % heads) throw ConfigError("model dims must be divisible by heads");
  if (!bimot_enabled && bimot_temporal) throw ConfigError("bimot_temporal requires bimot_enabled");
  for (std::size_t v : {stem_channels, head_channels, encoder_channels, time_dim, camera_embed_dim, scalar_dim}) {
    if (v == 0) throw ConfigError("model widths must be positive");
  }
}

json ModelConfig::to_json() const {
  return {{"height", height},
          {"width", width},
          {"patch", patch},
          {"dim0", dim0},
          {"dim1", dim1},
          {"heads", heads},
          {"stem_channels", stem_channels},
          {"head_channels", head_channels},
          {"encoder_channels", encoder_channels},
          {"time_dim", time_dim},
          {"camera_embed_dim", camera_embed_dim},
          {"scalar_dim", scalar_dim},
          {"bimot_enabled", bimot_enabled},
          {"bimot_temporal", bimot_temporal},
          {"queries_from_out", queries_from_out},
          {"keyframe_cond", keyframe_cond},
          {"neighbor_cond", neighbor_cond},
          {"first_frame_anchor", first_frame_anchor},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.height = j.at("height").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.patch = j.at("patch").get<std::size_t>();
    c.dim0 = j.at("dim0").get<std::size_t>();
    c.dim1 = j.at("dim1").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.stem_channels = j.at("stem_channels").get<std::size_t>();
    c.head_channels = j.at("head_channels").get<std::size_t>();
    c.encoder_channels = j.at("encoder_channels").get<std::size_t>();
    c.time_dim = j.at("time_dim").get<std::size_t>();
    c.camera_embed_dim = j.at("camera_embed_dim").get<std::size_t>();
    c.scalar_dim = j.at("scalar_dim").get<std::size_t>();
    c.bimot_enabled = j.at("bimot_enabled").get<bool>();
    c.bimot_temporal = j.at("bimot_temporal").get<bool>();
    c.queries_from_out = j.at("queries_from_out").get<bool>();
    c.keyframe_cond = j.at("keyframe_cond").get<bool>();
    c.neighbor_cond = j.at("neighbor_cond").get<bool>();
    c.first_frame_anchor = j.at("first_frame_anchor").get<bool>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

DenoiserNet::DenoiserNet(const ModelConfig& cfg) : config(cfg), store(cfg.init_seed) {
  config.validate();
  attach.keyframe = config.keyframe_cond;
  attach.neighbor = config.neighbor_cond;
  const double lr_new = kNewModuleLrMultiplier;
  const std::size_t p2 = config.patch * config.patch;
  const std::size_t d0 = config.dim0, d1 = config.dim1, ce = config.encoder_channels;
  const std::size_t gh = config.grid_h(), gw = config.grid_w();
  const std::array<std::size_t, 2> dims = {d0, d1};

  time1 = nn::Linear::create(store, "time.fc1", kTimeFeatures, config.time_dim);
  time2 = nn::Linear::create(store, "time.fc2", config.time_dim, config.time_dim);
  if (config.first_frame_anchor) anchor_gate = nn::Linear::create(store, "anchor_gate", config.time_dim, 1, lr_new, true);
  for (std::size_t l = 0; l < 2; ++l) {
    film[l] = nn::Linear::create(store, "film." + std::to_string(l), config.time_dim, 2 * dims[l], 1.0, true);
  }
  stem = nn::Conv2d::create(store, "stem", 6, config.stem_channels);
  patch_embed = nn::Linear::create(store, "patch_embed", p2 * config.stem_channels, d0);
  pos[0] = store.create_normal("pos.0", {gh * gw, d0}, kPosInitStd);
  pos[1] = store.create_normal("pos.1", {gh * gw / 4, d1}, kPosInitStd);
  down = nn::Linear::create(store, "down", 4 * d0, d1);
  up = nn::Linear::create(store, "up", d1, 4 * d0);

  for (std::size_t l = 0; l < 2; ++l) {
    const std::string n = "level" + std::to_string(l);
    const std::size_t d = dims[l];
    LevelBlock& b = levels[l];
    b.dim = d;
    b.grid_h = l == 0 ? gh : gh / 2;
    b.grid_w = l == 0 ? gw : gw / 2;
    b.conv_norm = nn::LayerNorm::create(store, n + ".conv.norm", d);
    b.conv = nn::Conv2d::create(store, n + ".conv", d, d);
    b.spatial = nn::Attention::create(store, n + ".spatial", d, config.heads, 1.0, false);
    if (config.bimot_enabled) {
      b.bimot = BimotBlock::create(store, "bimot." + std::to_string(l),
                                   {d, config.heads, config.bimot_temporal, config.queries_from_out}, lr_new);
    }
    b.temporal = nn::Attention::create(store, n + ".temporal", d, config.heads, 1.0, false);
    b.scalar_ctx = nn::Linear::create(store, n + ".scalar_ctx", config.scalar_dim, d, lr_new);
    b.scalar_attn = nn::Attention::create(store, n + ".scalar_attn", d, config.heads, lr_new, true);
    b.keyframe_attn = nn::Attention::create(store, n + ".keyframe_attn", d, config.heads, lr_new, true);
    b.neighbor_attn = nn::Attention::create(store, n + ".neighbor_attn", d, config.heads, lr_new, true);
    if (!config.bimot_enabled) {
      b.layout_attn = nn::Attention::create(store, n + ".layout_attn", d, config.heads, lr_new, true);
    }
    b.ffn_norm = nn::LayerNorm::create(store, n + ".ffn.norm", d);
    b.ffn1 = nn::Linear::create(store, n + ".ffn.fc1", d, 2 * d);
    b.ffn2 = nn::Linear::create(store, n + ".ffn.fc2", 2 * d, d);
  }

  head_norm = nn::LayerNorm::create(store, "head.norm", d0);
  head_proj = nn::Linear::create(store, "head.proj", d0, p2 * config.head_channels);
  head = nn::Conv2d::create(store, "head.conv", config.head_channels + config.stem_channels, 3);

  map_encoder = {nn::Conv2d::create(store, "cond.map.c1", kMapChannels, ce, 3, lr_new),
                 nn::Conv2d::create(store, "cond.map.c2", ce, ce, 3, lr_new)};
  layout_encoder = {nn::Conv2d::create(store, "cond.layout.c1", kLayoutChannels, ce, 3, lr_new),
                    nn::Conv2d::create(store, "cond.layout.c2", ce, ce, 3, lr_new)};
  image_encoder = {nn::Conv2d::create(store, "cond.image.c1", 3, ce, 3, lr_new),
                   nn::Conv2d::create(store, "cond.image.c2", ce, ce, 3, lr_new)};
  const std::array<std::size_t, kModalityCount> in_ch = {ce, ce, kKeyframeImages * ce, kNeighborImages * ce};
  for (Modality m : kFusionOrder) {
    const auto i = static_cast<std::size_t>(m);
    const std::string n = "cond." + std::string(modality_name(m));
    cond_proj[i] = nn::Linear::create(store, n + ".proj", in_ch[i] * p2, d0, lr_new);
    cond_down[i] = nn::Linear::create(store, n + ".down", 4 * d0, d1, lr_new);
  }
  scalars = ScalarEmbedder::create(store, "cond.scalar", config.camera_embed_dim, config.scalar_dim, lr_new);

  const std::size_t h = config.height, w = config.width;
  null_map = store.create_zeros("null.map", {kMapChannels, h, w}, lr_new);
  null_layout = store.create_zeros("null.layout", {kLayoutChannels, h, w}, lr_new);
  null_keyframe = store.create_zeros("null.keyframe", {3 * kKeyframeImages, h, w}, lr_new);
  null_neighbor = store.create_zeros("null.neighbor", {3 * kNeighborImages, h, w}, lr_new);
  null_scalar = store.create_zeros("null.scalar", {config.scalar_dim}, lr_new);
}

namespace {

struct ForwardContext {
  const DenoiserNet& net;
  std::size_t clips, frames;

  // Encoded raster batch [n, C, H, W] -> level-0 tokens [n, N0, d0].
  Tensor encode(const ImageEncoder& enc, const Tensor& rasters, Modality m, std::size_t images) const {
    const auto& c = net.config;
    Tensor feat = enc(rasters);
    if (images > 1) {
      feat = ops::reshape(feat, {rasters.shape()[0] / images, images * c.encoder_channels, c.height, c.width});
    }
    const Tensor tok = ops::space_to_depth(nchw_to_tokens(feat), c.height, c.width, c.patch);
    return ops::add_bcast(net.cond_proj[static_cast<std::size_t>(m)](tok), net.pos[0]);
  }

  // Sparse raster modality for one clip -> [F, N0, d0].
  Tensor sparse_modality(const ImageEncoder& enc, const Tensor& null_raster, const SparsePlan& plan,
                         const std::vector<std::vector<double>>& real, bool dropped, Modality m) const {
    const Shape item = null_raster.shape();
    Shape null_batch = item;
    null_batch.insert(null_batch.begin(), 1);
    if (dropped || real.empty()) {
      return ops::expand(encode(enc, ops::reshape(null_raster, null_batch), m, 1), 0, frames);
    }
    if (plan.frame_count != frames) throw ShapeError("condition plan covers a different frame count");
    const Tensor parts[] = {rows_tensor(real, item), ops::reshape(null_raster, null_batch)};
    const auto encoded = split_rows(encode(enc, ops::concat(parts, 0), m, 1));
    const std::vector<Tensor> reals(encoded.begin(), encoded.end() - 1);
    return densify(plan, reals, encoded.back());
  }

  LevelConditions level0(const DenoiserInput& in) const {
    const auto& c = net.config;
    const std::size_t hw = c.height * c.width;
    std::array<std::vector<Tensor>, kModalityCount> per_clip;
    std::vector<Tensor> scalar_rows;
    for (std::size_t s = 0; s < clips; ++s) {
      const ClipConditions& cc = *in.conditions[s];
      const DropDecision drop = in.drops.empty() ? DropDecision{} : in.drops[s];
      per_clip[0].push_back(sparse_modality(net.map_encoder, net.null_map, cc.plan, cc.map, drop.drop_conditions,
                                            Modality::kMap));
      per_clip[1].push_back(sparse_modality(net.layout_encoder, net.null_layout, cc.plan, cc.layout,
                                            drop.drop_conditions, Modality::kLayout));
      const bool kf = net.attach.keyframe && !cc.keyframe.empty() && !drop.drop_conditions;
      const Tensor kf_raster = kf ? Tensor({kKeyframeImages, 3, c.height, c.width}, cc.keyframe)
                                  : ops::reshape(net.null_keyframe, {kKeyframeImages, 3, c.height, c.width});
      per_clip[2].push_back(
          ops::expand(encode(net.image_encoder, kf_raster, Modality::kKeyframe, kKeyframeImages), 0, frames));
      if (net.attach.neighbor && !cc.neighbor.empty() && !drop.drop_neighbor) {
        if (cc.neighbor.size() != frames) throw ShapeError("neighbor condition covers a different frame count");
        Tensor rasters = rows_tensor(cc.neighbor, {3 * kNeighborImages * hw});
        rasters = ops::reshape(rasters, {frames * kNeighborImages, 3, c.height, c.width});
        per_clip[3].push_back(encode(net.image_encoder, rasters, Modality::kNeighbor, kNeighborImages));
      } else {
        const Tensor null_imgs = ops::reshape(net.null_neighbor, {kNeighborImages, 3, c.height, c.width});
        per_clip[3].push_back(
            ops::expand(encode(net.image_encoder, null_imgs, Modality::kNeighbor, kNeighborImages), 0, frames));
      }
      std::vector<Tensor> reals;
      if (!cc.ego.empty()) {
        if (cc.ego.size() != cc.plan.conditioned_count()) throw ShapeError("one ego state per conditioned frame");
        reals = split_rows(net.scalars(std::vector<ViewId>(cc.ego.size(), cc.view), cc.ego));
        scalar_rows.push_back(densify(cc.plan, reals, net.null_scalar));
      } else {
        scalar_rows.push_back(ops::expand(ops::reshape(net.null_scalar, {1, c.scalar_dim}), 0, frames));
      }
    }
    LevelConditions out;
    for (std::size_t i = 0; i < kModalityCount; ++i) out.tokens[i] = ops::concat(per_clip[i], 0);
    out.scalar = ops::reshape(ops::concat(scalar_rows, 0), {clips * frames, 1, c.scalar_dim});
    return out;
  }

  LevelConditions level1(const LevelConditions& l0) const {
    const auto& c = net.config;
    LevelConditions out;
    for (std::size_t i = 0; i < kModalityCount; ++i) {
      const Tensor merged = ops::space_to_depth(l0.tokens[i], c.grid_h(), c.grid_w(), 2);
      out.tokens[i] = ops::add_bcast(net.cond_down[i](merged), net.pos[1]);
    }
    out.scalar = l0.scalar;
    return out;
  }

  Tensor block(const LevelBlock& b, Tensor h, const LevelConditions& cond) const {
    const Attachments& at = net.attach;
    const std::size_t batch = h.shape()[0], n = h.shape()[1], d = h.shape()[2];
    const Tensor grid = tokens_to_nchw(b.conv_norm(h), b.grid_h, b.grid_w);
    h = ops::add(h, nchw_to_tokens(b.conv(ops::silu(grid))));
    h = ops::add(h, b.spatial.self(h));
    if (b.bimot && at.bimot) {
      const Shape clip_shape{clips, frames, n, d};
      std::array<Tensor, kModalityCount> feats;
      for (std::size_t i = 0; i < kModalityCount; ++i) feats[i] = ops::reshape(cond.tokens[i], clip_shape);
      const auto mixed = mix_conditions(feats, {true, true, true, true}, {});
      const Tensor r = b.bimot->forward(ops::reshape(h, clip_shape), mixed);
      h = ops::add(h, ops::reshape(r, {batch, n, d}));
    }
    {
      Tensor seq = ops::reshape(ops::permute(ops::reshape(h, {clips, frames, n, d}), {0, 2, 1, 3}),
                                {clips * n, frames, d});
      seq = b.temporal.self(seq);
      h = ops::add(h, ops::reshape(ops::permute(ops::reshape(seq, {clips, n, frames, d}), {0, 2, 1, 3}),
                                   {batch, n, d}));
    }
    if (at.scalar) h = ops::add(h, b.scalar_attn(h, b.scalar_ctx(cond.scalar)));
    if (at.keyframe) h = ops::add(h, b.keyframe_attn(h, cond.tokens[static_cast<std::size_t>(Modality::kKeyframe)]));
    if (at.neighbor) h = ops::add(h, b.neighbor_attn(h, cond.tokens[static_cast<std::size_t>(Modality::kNeighbor)]));
    if (!b.bimot && at.fallback) {
      const Tensor parts[] = {cond.tokens[static_cast<std::size_t>(Modality::kMap)],
                              cond.tokens[static_cast<std::size_t>(Modality::kLayout)]};
      h = ops::add(h, b.layout_attn(h, ops::concat(parts, 1)));
    }
    return ops::add(h, b.ffn2(ops::silu(b.ffn1(b.ffn_norm(h)))));
  }
};

}  // namespace

Tensor DenoiserNet::forward(const DenoiserInput& in) const {
  const auto& c = config;
  if (in.x_t.rank() != 5 || in.x_t.shape()[2] != 3 || in.x_t.shape()[3] != c.height || in.x_t.shape()[4] != c.width) {
    throw ShapeError("denoiser: x_t must be [S, F, 3, " + std::to_string(c.height) + ", " + std::to_string(c.width) +
                     "], got " + shape_str(in.x_t.shape()));
  }
  const std::size_t clips = in.x_t.shape()[0], frames = in.x_t.shape()[1], batch = clips * frames;
  if (in.t.size() != clips || in.conditions.size() != clips || (!in.drops.empty() && in.drops.size() != clips)) {
    throw ShapeError("denoiser: per-clip inputs do not match " + std::to_string(clips) + " clips");
  }
  for (std::size_t t : in.t) {
    if (t >= schedule.step_count) throw ConfigError("denoiser: timestep " + std::to_string(t) + " out of range");
  }
  ForwardContext ctx{*this, clips, frames};
  const std::size_t gh = c.grid_h(), gw = c.grid_w();

  const Tensor x = ops::reshape(in.x_t, {batch, 3, c.height, c.width});
  const Tensor first = repeat_frames(ops::reshape(ops::slice(in.x_t, 1, 0, 1), {clips, 3, c.height, c.width}), frames);
  const Tensor stem_in[] = {x, first};
  const Tensor stem_out = ops::silu(stem(ops::concat(stem_in, 1)));

  const Tensor temb = ops::silu(time2(ops::silu(time1(timestep_features(in.t)))));
  Tensor h0 = ops::space_to_depth(nchw_to_tokens(stem_out), c.height, c.width, c.patch);
  h0 = apply_film(ops::add_bcast(patch_embed(h0), pos[0]), film[0](temb), clips);

  const LevelConditions cond0 = ctx.level0(in);
  const LevelConditions cond1 = ctx.level1(cond0);
  h0 = ctx.block(levels[0], h0, cond0);
  Tensor h1 = ops::add_bcast(down(ops::space_to_depth(h0, gh, gw, 2)), pos[1]);
  h1 = ctx.block(levels[1], apply_film(h1, film[1](temb), clips), cond1);
  h0 = ops::add(h0, ops::depth_to_space(up(h1), gh, gw, 2));

  const Tensor px = ops::depth_to_space(head_proj(head_norm(h0)), c.height, c.width, c.patch);
  const Tensor head_in[] = {ops::silu(tokens_to_nchw(px, c.height, c.width)), stem_out};
  const Tensor out = ops::reshape(head(ops::concat(head_in, 1)), {clips, frames, 3, c.height, c.width});
  if (!c.first_frame_anchor) return out;

  const std::size_t per_clip = frames * 3 * c.height * c.width, per_frame = 3 * c.height * c.width;
  const auto xv = in.x_t.values();
  std::vector<double> anchor(clips * per_clip), base(clips);
  for (std::size_t s = 0; s < clips; ++s) {
    const double ab = schedule.alpha_bar(in.t[s]);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    const double* clip = xv.data() + s * per_clip;
    for (std::size_t i = 0; i < per_clip; ++i) anchor[s * per_clip + i] = (clip[i] - a * clip[i % per_frame]) / b;
    base[s] = 1.0 - ab;
  }
  // (1 - abar)(1 + gate): the learned part fades with the noise level, so it cannot
  // amplify the 1/sqrt(1 - abar) factor at small t.
  const Tensor gate = ops::mul(ops::add_scalar(anchor_gate(temb), 1.0), Tensor({clips, 1}, std::move(base)));
  const Tensor scaled = ops::mul(ops::expand(gate, 1, per_clip), Tensor({clips, per_clip}, std::move(anchor)));
  return ops::add(out, ops::reshape(scaled, out.shape()));
}

Tensor cfg_predict(const DenoiserNet& net, const Tensor& x_t, std::size_t t,
                   const std::vector<const ClipConditions*>& conditions, double scale) {
  const std::size_t clips = x_t.shape()[0];
  DenoiserInput cond{x_t, std::vector<std::size_t>(clips, t), conditions, {}};
  const Tensor eps_c = net.forward(cond);
  if (scale == 1.0) return eps_c;
  DenoiserInput uncond = cond;
  uncond.drops.assign(clips, DropDecision{false, true});
  return cfg_combine(eps_c, net.forward(uncond), scale);
}

namespace {

void make_x_t(const DiffusionSchedule& schedule, const std::vector<double>& frames, std::size_t frame_count,
                std::size_t t, const std::vector<double>& noise, std::vector<double>& x) {
  const std::size_t per = frames.size() / frame_count;
  x.insert(x.end(), frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(per));
  const std::vector<double> tail(frames.begin() + static_cast<std::ptrdiff_t>(per), frames.end());
  const auto noisy = q_sample(schedule, tail, t, noise);
  x.insert(x.end(), noisy.begin(), noisy.end());
}

void check_schedule(const DenoiserNet& net, const DiffusionSchedule& schedule) {
  if (schedule.alphas_cumprod != net.schedule.alphas_cumprod) {
    throw ConfigError("noise schedule differs from the one the denoiser was built with");
  }
}

void check_example(const DenoiserNet& net, const TrainingExample& ex) {
  const std::size_t per = 3 * net.config.height * net.config.width;
  if (ex.frame_count < 2 || ex.frames.size() != ex.frame_count * per) {
    throw ShapeError("training clip needs at least 2 frames of [3, H, W]");
  }
  if (!ex.conditions) throw ValidationError("training clip without conditions");
}

}  // namespace

Tensor training_loss(const DenoiserNet& net, const DiffusionSchedule& schedule,
                     const std::vector<TrainingExample>& batch, const DropoutPolicy& policy, std::mt19937_64& rng,
                     std::vector<DropDecision>* drops_out) {
  if (batch.empty()) throw ValidationError("empty training batch");
  check_schedule(net, schedule);
  const std::size_t frames = batch[0].frame_count;
  const std::size_t per = 3 * net.config.height * net.config.width;
  DenoiserInput in;
  std::vector<double> x, target;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& ex : batch) {
    check_example(net, ex);
    if (ex.frame_count != frames) throw ShapeError("training batch mixes clip lengths");
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, schedule.step_count - 1)(rng);
    const DropDecision drop = policy.draw(rng);
    if (ex.neighbor_role && ex.conditions->neighbor.empty() && !drop.drop_neighbor) {
      throw ValidationError("neighbor-view batch has no neighbor video source");
    }
    std::vector<double> noise((frames - 1) * per);
    for (double& v : noise) v = normal(rng);
    make_x_t(schedule, ex.frames, frames, t, noise, x);
    target.insert(target.end(), noise.begin(), noise.end());
    in.t.push_back(t);
    in.conditions.push_back(ex.conditions);
    in.drops.push_back(drop);
  }
  const std::size_t clips = batch.size();
  in.x_t = Tensor({clips, frames, 3, net.config.height, net.config.width}, std::move(x));
  if (drops_out) *drops_out = in.drops;
  const Tensor pred = ops::slice(net.forward(in), 1, 1, frames);
  return ops::mse(pred, Tensor(pred.shape(), std::move(target)));
}

double evaluation_loss(const DenoiserNet& net, const DiffusionSchedule& schedule, const TrainingExample& example,
                       std::size_t t, const std::vector<double>& noise, const DropDecision& drop) {
  check_example(net, example);
  check_schedule(net, schedule);
  NoGradGuard no_grad;
  std::vector<double> x;
  make_x_t(schedule, example.frames, example.frame_count, t, noise, x);
  DenoiserInput in;
  in.x_t = Tensor({1, example.frame_count, 3, net.config.height, net.config.width}, std::move(x));
  in.t = {t};
  in.conditions = {example.conditions};
  in.drops = {drop};
  const Tensor pred = ops::slice(net.forward(in), 1, 1, example.frame_count);
  return ops::mse(pred, Tensor(pred.shape(), noise)).item();
}

std::vector<double> sample_clip(const DenoiserNet& net, const DiffusionSchedule& schedule,
                                const std::vector<double>& first_frame, std::size_t frame_count,
                                const ClipConditions& conditions, const SampleOptions& options) {
  const auto& c = net.config;
  const std::size_t per = 3 * c.height * c.width;
  if (first_frame.size() != per) throw ShapeError("first frame must be [3, H, W]");
  if (frame_count < 2) throw ConfigError("sampling needs at least 2 frames");
  check_schedule(net, schedule);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(first_frame);
  x.reserve(frame_count * per);
  for (std::size_t i = per; i < frame_count * per; ++i) x.push_back(normal(rng));
  std::vector<bool> fixed(frame_count * per, false);
  std::fill(fixed.begin(), fixed.begin() + static_cast<std::ptrdiff_t>(per), true);
  const std::vector<const ClipConditions*> conds = {&conditions};
  const NoisePredictor predict = [&](const Tensor& x_t, std::size_t t) {
    return cfg_predict(net, x_t, t, conds, options.cfg_scale);
  };
  const Tensor out = ddim_sample(schedule, predict, Tensor({1, frame_count, 3, c.height, c.width}, std::move(x)),
                                 {options.steps, options.clip_x0}, fixed);
  return {out.values().begin(), out.values().end()};
}

}  // namespace ds
