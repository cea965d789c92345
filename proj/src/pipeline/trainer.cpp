#include "pipeline/trainer.hpp"

#include <algorithm>
#include <map>

#include "common/error.hpp"
#include "scene/io.hpp"
#include "tensor/checkpoint.hpp"

namespace ds {

using nlohmann::json;

namespace {

constexpr char kCheckpointKind[] = "drivescape-train";
constexpr std::uint64_t kBatchStream = 1, kStepStream = 2, kValidationStream = 3;

std::vector<Image> quantize_clip(const std::vector<double>& clip, std::size_t frames, std::size_t w, std::size_t h) {
  std::vector<Image> out;
  const std::size_t per = 3 * w * h;
  for (std::size_t f = 0; f < frames; ++f) out.push_back(planar_to_image(clip.data() + f * per, w, h));
  return out;
}

std::vector<double> clip_to_planar(const std::vector<Image>& frames) {
  std::vector<double> out;
  for (const auto& img : frames) {
    const auto p = image_to_planar(img);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::string cache_name(std::size_t scene, ViewId v) {
  return "cache." + std::to_string(scene) + "." + std::string(view_name(v));
}

std::vector<std::string> scene_names(const Dataset& data) {
  std::vector<std::string> out;
  for (const auto& s : data.scenes) out.push_back(s.name);
  return out;
}

}  // namespace

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

Dataset make_dataset(std::vector<SceneTimeline> scenes) {
  if (scenes.empty()) throw ValidationError("dataset has no scenes");
  Dataset d;
  for (const auto& s : scenes) d.prepared.push_back(prepare_scene(s));
  for (const auto& p : d.prepared) {
    const auto& p0 = d.prepared.front();
    if (p.frame_count != p0.frame_count || p.height != p0.height || p.width != p0.width) {
      throw ValidationError("scene " + p.name + " differs from " + p0.name + " in frame count or image size");
    }
  }
  d.graph = build_view_graph(scenes.front().cameras);
  d.scenes = std::move(scenes);
  return d;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "manifest.json") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("dataset directory " + dir.string() + " has no scene files");
  std::vector<SceneTimeline> scenes;
  for (const auto& f : files) scenes.push_back(load_scene(f));
  return make_dataset(std::move(scenes));
}

std::vector<BatchItem> build_training_batches(const Dataset& data, std::uint64_t seed, std::size_t epoch) {
  if (data.size() == 0) throw ValidationError("dataset has no scenes");
  auto rng = derived_rng(seed, kBatchStream, epoch);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<BatchItem> items;
  for (std::size_t s : order) {
    auto keys = data.graph.views_with(ViewRole::kKey);
    auto neighbors = data.graph.views_with(ViewRole::kNeighbor);
    std::shuffle(keys.begin(), keys.end(), rng);
    std::shuffle(neighbors.begin(), neighbors.end(), rng);
    for (ViewId v : keys) items.push_back({s, v, ViewRole::kKey, {}});
    for (ViewId v : neighbors) items.push_back({s, v, ViewRole::kNeighbor, data.graph.adjacent[view_index(v)]});
  }
  return items;
}

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("train steps must be positive");
  if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (optimizer.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  dropout.validate();
  if (!(generated_neighbor_prob >= 0.0 && generated_neighbor_prob <= 1.0)) {
    throw ConfigError("generated_neighbor_prob must lie in [0, 1]");
  }
  if (generated_neighbor_prob > 0.0 && generated_sample_steps == 0) {
    throw ConfigError("generated_sample_steps must be positive when generated sources are used");
  }
}

json TrainConfig::to_json() const {
  return {{"seed", seed},
          {"steps", steps},
          {"lr", optimizer.lr},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"eps", optimizer.eps},
          {"weight_decay", optimizer.weight_decay},
          {"p_neighbor_drop", dropout.p_neighbor},
          {"p_condition_drop", dropout.p_conditions},
          {"grad_clip", grad_clip},
          {"generated_neighbor_prob", generated_neighbor_prob},
          {"generated_sample_steps", generated_sample_steps},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.steps = j.at("steps").get<std::size_t>();
    c.optimizer.lr = j.at("lr").get<double>();
    c.optimizer.beta1 = j.at("beta1").get<double>();
    c.optimizer.beta2 = j.at("beta2").get<double>();
    c.optimizer.eps = j.at("eps").get<double>();
    c.optimizer.weight_decay = j.at("weight_decay").get<double>();
    c.dropout.p_neighbor = j.at("p_neighbor_drop").get<double>();
    c.dropout.p_conditions = j.at("p_condition_drop").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.generated_neighbor_prob = j.at("generated_neighbor_prob").get<double>();
    c.generated_sample_steps = j.at("generated_sample_steps").get<std::size_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

json StepRecord::to_json() const {
  return {{"step", step},
          {"loss", loss},
          {"grad_norm", grad_norm},
          {"role", role == ViewRole::kKey ? "key" : "neighbor"},
          {"scene", scene},
          {"view", view_name(view)},
          {"generated_sources", generated_sources},
          {"drop_neighbor", drop.drop_neighbor},
          {"drop_conditions", drop.drop_conditions}};
}

Trainer::Trainer(const Dataset& data, const ModelConfig& model, const TrainConfig& config)
    : data_(data), config_(config) {
  config_.validate();
  if (data.size() == 0) throw ValidationError("dataset has no scenes");
  const auto& p0 = data.prepared.front();
  if (model.height != p0.height || model.width != p0.width) {
    throw ConfigError("model image size " + std::to_string(model.height) + "x" + std::to_string(model.width) +
                      " differs from dataset " + std::to_string(p0.height) + "x" + std::to_string(p0.width));
  }
  net_ = std::make_unique<DenoiserNet>(model);
  net_->store.round_to_f32();
  optimizer_ = std::make_unique<AdamW>(net_->store, config_.optimizer, true);
  key_conditions_.resize(data.size());
  cache_.resize(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (ViewId v : data.graph.views_with(ViewRole::kKey)) {
      key_conditions_[s][view_index(v)] = make_conditions(data.prepared[s], data.graph, v, true);
    }
  }
}

const std::vector<BatchItem>& Trainer::epoch_items(std::size_t epoch) {
  if (epoch != cached_epoch_) {
    items_ = build_training_batches(data_, config_.seed, epoch);
    cached_epoch_ = epoch;
  }
  return items_;
}

const std::optional<std::vector<Image>>& Trainer::generated(std::size_t scene, ViewId view) const {
  return cache_.at(scene)[view_index(view)];
}

std::vector<double> Trainer::source_clip(std::size_t scene, ViewId view, bool generated) const {
  const auto& g = cache_[scene][view_index(view)];
  if (generated && g) return clip_to_planar(*g);
  return data_.prepared[scene].clips[view_index(view)];
}

StepRecord Trainer::step() {
  const std::size_t per_epoch = 6 * data_.size();
  const BatchItem item = epoch_items(step_ / per_epoch)[step_ % per_epoch];
  const PreparedScene& scene = data_.prepared[item.scene];
  auto rng = derived_rng(config_.seed, kStepStream, step_);

  StepRecord rec;
  rec.step = step_;
  rec.role = item.role;
  rec.scene = scene.name;
  rec.view = item.view;

  ClipConditions neighbor_cond;
  const ClipConditions* cond = &key_conditions_[item.scene][view_index(item.view)];
  if (item.role == ViewRole::kNeighbor) {
    const bool want_generated = std::bernoulli_distribution(config_.generated_neighbor_prob)(rng);
    rec.generated_sources = want_generated && cache_[item.scene][view_index(item.sources[0])] &&
                            cache_[item.scene][view_index(item.sources[1])];
    const auto prev = source_clip(item.scene, item.sources[0], rec.generated_sources);
    const auto next = source_clip(item.scene, item.sources[1], rec.generated_sources);
    neighbor_cond = make_conditions(scene, data_.graph, item.view, true, &prev, &next);
    cond = &neighbor_cond;
  }

  const TrainingExample ex{scene.clips[view_index(item.view)], scene.frame_count, cond,
                           item.role == ViewRole::kNeighbor};
  net_->store.zero_grad();
  std::vector<DropDecision> drops;
  const Tensor loss = training_loss(*net_, net_->schedule, {ex}, config_.dropout, rng, &drops);
  backward(loss);
  rec.loss = loss.item();
  rec.drop = drops.front();
  rec.grad_norm = clip_grad_norm(net_->store, config_.grad_clip);
  optimizer_->step();

  if (item.role == ViewRole::kKey && config_.generated_neighbor_prob > 0.0) {
    SampleOptions opts;
    opts.steps = config_.generated_sample_steps;
    opts.cfg_scale = 1.0;
    opts.seed = rng();
    const auto clip = sample_clip(*net_, net_->schedule, scene.first_frame(item.view), scene.frame_count, *cond, opts);
    cache_[item.scene][view_index(item.view)] = quantize_clip(clip, scene.frame_count, scene.width, scene.height);
  }
  ++step_;
  return rec;
}

void Trainer::save_checkpoint(const std::filesystem::path& dir) const {
  checkpoint::NamedTensors tensors;
  const auto& params = net_->store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.emplace_back(params[i].name, params[i].tensor);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].tensor.shape();
    tensors.emplace_back("adam.m." + params[i].name, Tensor(shape, optimizer_->first_moments()[i]));
    tensors.emplace_back("adam.v." + params[i].name, Tensor(shape, optimizer_->second_moments()[i]));
  }
  json cached = json::array();
  for (std::size_t s = 0; s < cache_.size(); ++s) {
    for (ViewId v : kAllViews) {
      const auto& g = cache_[s][view_index(v)];
      if (!g) continue;
      std::vector<double> codes;
      for (const auto& img : *g) codes.insert(codes.end(), img.rgb.begin(), img.rgb.end());
      tensors.emplace_back(cache_name(s, v), Tensor({g->size(), g->front().height, g->front().width, 3}, codes));
      cached.push_back(cache_name(s, v));
    }
  }
  json manifest = {{"kind", kCheckpointKind},
                   {"model", net_->config.to_json()},
                   {"train", config_.to_json()},
                   {"step", step_},
                   {"optimizer_steps", optimizer_->step_count()},
                   {"scenes", scene_names(data_)},
                   {"cached_clips", cached}};
  checkpoint::save(dir, tensors, manifest);
}

void Trainer::load_checkpoint(const std::filesystem::path& dir) {
  auto [tensors, manifest] = checkpoint::load(dir);
  try {
    if (manifest.at("kind") != kCheckpointKind) throw ValidationError(dir.string() + " is not a training checkpoint");
    if (ModelConfig::from_json(manifest.at("model")).to_json() != net_->config.to_json()) {
      throw ValidationError("checkpoint model config differs from the trainer's");
    }
    if (manifest.at("scenes").get<std::vector<std::string>>() != scene_names(data_)) {
      throw ValidationError("checkpoint was trained on a different dataset");
    }
    std::map<std::string, Tensor> by_name(tensors.begin(), tensors.end());
    const auto take = [&](const std::string& name, const Shape& shape) -> std::vector<double> {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw ValidationError("checkpoint is missing tensor " + name);
      if (it->second.shape() != shape) {
        throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                         shape_str(shape));
      }
      return {it->second.values().begin(), it->second.values().end()};
    };
    auto& params = net_->store.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Shape shape = params[i].tensor.shape();
      const auto v = take(params[i].name, shape);
      std::copy(v.begin(), v.end(), params[i].tensor.mutable_values().begin());
      optimizer_->first_moments()[i] = take("adam.m." + params[i].name, shape);
      optimizer_->second_moments()[i] = take("adam.v." + params[i].name, shape);
    }
    optimizer_->set_step_count(manifest.at("optimizer_steps").get<long long>());
    step_ = manifest.at("step").get<std::size_t>();
    for (auto& per_scene : cache_) per_scene.fill(std::nullopt);
    const auto& p0 = data_.prepared.front();
    for (std::size_t s = 0; s < cache_.size(); ++s) {
      for (ViewId v : kAllViews) {
        auto it = by_name.find(cache_name(s, v));
        if (it == by_name.end()) continue;
        const auto codes = take(it->first, {p0.frame_count, p0.height, p0.width, 3});
        std::vector<Image> frames;
        const std::size_t per = p0.height * p0.width * 3;
        for (std::size_t f = 0; f < p0.frame_count; ++f) {
          Image img(p0.width, p0.height);
          for (std::size_t k = 0; k < per; ++k) img.rgb[k] = static_cast<std::uint8_t>(codes[f * per + k]);
          frames.push_back(std::move(img));
        }
        cache_[s][view_index(v)] = std::move(frames);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest " + dir.string() + ": " + e.what());
  }
  cached_epoch_ = static_cast<std::size_t>(-1);
}

std::unique_ptr<DenoiserNet> load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / checkpoint::kManifestFile)) {
    throw IoError("checkpoint " + dir.string() + " not found");
  }
  auto [tensors, manifest] = checkpoint::load(dir);
  std::unique_ptr<DenoiserNet> net;
  try {
    net = std::make_unique<DenoiserNet>(ModelConfig::from_json(manifest.at("model")));
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest " + dir.string() + ": " + e.what());
  }
  std::map<std::string, Tensor> by_name(tensors.begin(), tensors.end());
  for (auto& p : net->store.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ValidationError("checkpoint is missing parameter " + p.name);
    if (it->second.shape() != p.tensor.shape()) throw ShapeError("checkpoint parameter " + p.name + " has wrong shape");
    const auto v = it->second.values();
    std::copy(v.begin(), v.end(), p.tensor.mutable_values().begin());
  }
  return net;
}

ValidationReport validation_losses(const DenoiserNet& net, const Dataset& data, std::uint64_t seed,
                                   std::size_t timesteps) {
  if (timesteps == 0) throw ConfigError("validation needs at least one timestep");
  ValidationReport r;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto& scene = data.prepared[s];
    for (ViewId v : kAllViews) {
      const bool neighbor = data.graph.role[view_index(v)] == ViewRole::kNeighbor;
      const auto& adj = data.graph.adjacent[view_index(v)];
      const ClipConditions cond =
          neighbor ? make_conditions(scene, data.graph, v, true, &scene.clips[view_index(adj[0])],
                                     &scene.clips[view_index(adj[1])])
                   : make_conditions(scene, data.graph, v, true);
      const TrainingExample ex{scene.clips[view_index(v)], scene.frame_count, &cond, neighbor};
      auto rng = derived_rng(seed, kValidationStream, s * kViewCount + view_index(v));
      for (std::size_t k = 0; k < timesteps; ++k) {
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, net.schedule.step_count - 1)(rng);
        std::vector<double> noise((scene.frame_count - 1) * scene.frame_size());
        for (double& x : noise) x = normal(rng);
        r.conditional += evaluation_loss(net, net.schedule, ex, t, noise, {false, false});
        r.unconditional += evaluation_loss(net, net.schedule, ex, t, noise, {false, true});
        ++r.samples;
      }
    }
  }
  r.conditional /= static_cast<double>(r.samples);
  r.unconditional /= static_cast<double>(r.samples);
  return r;
}

}  // namespace ds
