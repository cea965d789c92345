#include "drivescape/drivescape.h"

#include <cstring>
#include <exception>
#include <memory>
#include <string>

#include "app/commands.hpp"
#include "common/error.hpp"
#include "pipeline/inference.hpp"
#include "scene/generator.hpp"
#include "scene/io.hpp"

struct ds_config {
  ds::RunConfig config;
};

struct ds_scene {
  ds::SceneTimeline scene;
};

struct ds_model {
  std::unique_ptr<ds::DenoiserNet> net;
};

namespace {

thread_local std::string g_last_error;

ds_status status_of(ds::ErrorKind kind) {
  switch (kind) {
    case ds::ErrorKind::kInvalidArgument: return DS_ERR_INVALID_ARGUMENT;
    case ds::ErrorKind::kShape: return DS_ERR_SHAPE;
    case ds::ErrorKind::kNumeric: return DS_ERR_NUMERIC;
    case ds::ErrorKind::kConfig: return DS_ERR_CONFIG;
    case ds::ErrorKind::kParse: return DS_ERR_PARSE;
    case ds::ErrorKind::kValidation: return DS_ERR_VALIDATION;
    case ds::ErrorKind::kAlignment: return DS_ERR_ALIGNMENT;
    case ds::ErrorKind::kIo: return DS_ERR_IO;
    case ds::ErrorKind::kRuntime: return DS_ERR_RUNTIME;
  }
  return DS_ERR_INTERNAL;
}

void append_nested(const std::exception& e, std::string& msg) {
  msg += e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    msg += ": ";
    append_nested(inner, msg);
  } catch (...) {
    msg += ": unknown error";
  }
}

// Runs `fn`, translating exceptions into a status and the thread's last error.
template <typename Fn>
ds_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return DS_OK;
  } catch (const ds::Error& e) {
    append_nested(e, g_last_error);
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return DS_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DS_ERR_RUNTIME;
  } catch (const std::exception& e) {
    append_nested(e, g_last_error);
    return DS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DS_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw ds::Error(ds::ErrorKind::kInvalidArgument, what);
}

}  // namespace

extern "C" {

const char* ds_version(void) { return "0.1.0"; }

const char* ds_status_name(ds_status status) {
  switch (status) {
    case DS_OK: return "ok";
    case DS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case DS_ERR_SHAPE: return "shape error";
    case DS_ERR_NUMERIC: return "numeric error";
    case DS_ERR_CONFIG: return "config error";
    case DS_ERR_PARSE: return "parse error";
    case DS_ERR_VALIDATION: return "validation error";
    case DS_ERR_ALIGNMENT: return "alignment error";
    case DS_ERR_IO: return "io error";
    case DS_ERR_RUNTIME: return "runtime error";
    case DS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* ds_last_error(void) { return g_last_error.c_str(); }

double ds_default_cfg_scale(void) { return ds::kDefaultCfgScale; }

void ds_string_free(char* s) { delete[] s; }

size_t ds_command_count(void) { return ds::RunConfig::commands().size(); }

const char* ds_command_name(size_t index) {
  const auto& c = ds::RunConfig::commands();
  return index < c.size() ? c[index].c_str() : nullptr;
}

ds_status ds_command_key_count(const char* command, size_t* out) {
  return guarded([&] {
    require(command && out, "command and out must be non-null");
    *out = ds::RunConfig::schema(command).size();
  });
}

ds_status ds_command_key(const char* command, size_t index, const char** key, int* type, const char** default_value,
                         const char** help) {
  return guarded([&] {
    require(command != nullptr, "command must be non-null");
    const auto& schema = ds::RunConfig::schema(command);
    require(index < schema.size(), "key index out of range");
    const auto& k = schema[index];
    if (key) *key = k.key.c_str();
    if (type) *type = static_cast<int>(k.type);
    if (default_value) *default_value = k.default_value.c_str();
    if (help) *help = k.help.c_str();
  });
}

ds_status ds_config_create(const char* command, ds_config** out) {
  return guarded([&] {
    require(command && out, "command and out must be non-null");
    *out = new ds_config{ds::RunConfig(command)};
  });
}

void ds_config_destroy(ds_config* config) { delete config; }

ds_status ds_config_load(ds_config* config, const char* path) {
  return guarded([&] {
    require(config && path, "config and path must be non-null");
    config->config.load_file(path);
  });
}

ds_status ds_config_set(ds_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config && key && value, "config, key and value must be non-null");
    config->config.set(key, value);
  });
}

ds_status ds_config_json(const ds_config* config, char** out) {
  return guarded([&] {
    require(config && out, "config and out must be non-null");
    const std::string s = config->config.to_json().dump(2);
    char* buf = new char[s.size() + 1];
    std::memcpy(buf, s.c_str(), s.size() + 1);
    *out = buf;
  });
}

ds_status ds_run(const ds_config* config, ds_log_fn log, void* user) {
  return guarded([&] {
    require(config != nullptr, "config must be non-null");
    ds::LogSink sink;
    if (log) sink = [log, user](const std::string& line) { log(line.c_str(), user); };
    ds::run_command(config->config, sink);
  });
}

ds_status ds_scene_generate(uint64_t seed, double fps, double duration, int vehicles, ds_scene** out) {
  return guarded([&] {
    require(out != nullptr, "out must be non-null");
    ds::SceneConfig sc;
    sc.fps = fps;
    sc.duration = duration;
    sc.vehicles = vehicles;
    *out = new ds_scene{ds::generate_scene(seed, sc)};
  });
}

ds_status ds_scene_load(const char* path, ds_scene** out) {
  return guarded([&] {
    require(path && out, "path and out must be non-null");
    *out = new ds_scene{ds::load_scene(path)};
  });
}

ds_status ds_scene_save(const ds_scene* scene, const char* path) {
  return guarded([&] {
    require(scene && path, "scene and path must be non-null");
    ds::save_scene(scene->scene, path);
  });
}

ds_status ds_scene_frame_count(const ds_scene* scene, size_t* out) {
  return guarded([&] {
    require(scene && out, "scene and out must be non-null");
    *out = scene->scene.frame_count();
  });
}

ds_status ds_scene_frame(const ds_scene* scene, int view, size_t frame, uint8_t* rgb, size_t capacity, size_t* width,
                         size_t* height) {
  return guarded([&] {
    require(scene != nullptr, "scene must be non-null");
    require(view >= 0 && view < static_cast<int>(ds::kViewCount), "view index out of range");
    const auto& frames = scene->scene.frames[static_cast<std::size_t>(view)];
    require(frame < frames.size(), "frame index out of range");
    const ds::Image& img = frames[frame];
    if (width) *width = img.width;
    if (height) *height = img.height;
    if (rgb) {
      require(capacity >= img.rgb.size(), "rgb buffer too small");
      std::memcpy(rgb, img.rgb.data(), img.rgb.size());
    }
  });
}

void ds_scene_destroy(ds_scene* scene) { delete scene; }

ds_status ds_model_load(const char* checkpoint_dir, ds_model** out) {
  return guarded([&] {
    require(checkpoint_dir && out, "checkpoint_dir and out must be non-null");
    *out = new ds_model{ds::load_model(checkpoint_dir)};
  });
}

ds_status ds_model_parameter_count(const ds_model* model, size_t* out) {
  return guarded([&] {
    require(model && out, "model and out must be non-null");
    *out = model->net->store.total_elements();
  });
}

void ds_model_destroy(ds_model* model) { delete model; }

ds_status ds_generate_views(const ds_model* model, const ds_scene* scene, uint64_t seed, size_t steps,
                            double cfg_scale, const char* out_dir) {
  return guarded([&] {
    require(model && scene && out_dir, "model, scene and out_dir must be non-null");
    ds::InferenceOptions opts;
    opts.seed = seed;
    opts.steps = steps;
    opts.cfg_scale = cfg_scale;
    const ds::ViewGraph graph = ds::build_view_graph(scene->scene.cameras);
    const auto plan = ds::plan_inference(scene->scene, graph, opts.keyframe_in_pass1);
    const auto video = ds::run_inference(*model->net, scene->scene, graph, plan, opts);
    ds::write_generated(video, out_dir, {{"inference", opts.to_json()}});
  });
}

}  // extern "C"
