#ifndef DRIVESCAPE_DRIVESCAPE_H
#define DRIVESCAPE_DRIVESCAPE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define DS_API __declspec(dllexport)
#else
#define DS_API __attribute__((visibility("default")))
#endif

/* Every fallible call returns a status; on failure ds_last_error() holds the message
   of the calling thread, with nested causes joined by ": ". */
typedef enum ds_status {
  DS_OK = 0,
  DS_ERR_INVALID_ARGUMENT = 1,
  DS_ERR_SHAPE = 2,
  DS_ERR_NUMERIC = 3,
  DS_ERR_CONFIG = 4,
  DS_ERR_PARSE = 5,
  DS_ERR_VALIDATION = 6,
  DS_ERR_ALIGNMENT = 7,
  DS_ERR_IO = 8,
  DS_ERR_RUNTIME = 9,
  DS_ERR_INTERNAL = 10
} ds_status;

DS_API const char* ds_version(void);
DS_API const char* ds_status_name(ds_status status);
DS_API const char* ds_last_error(void);
DS_API double ds_default_cfg_scale(void);
DS_API void ds_string_free(char* s);

/* Commands and their settings schema. */
DS_API size_t ds_command_count(void);
DS_API const char* ds_command_name(size_t index);
DS_API ds_status ds_command_key_count(const char* command, size_t* out);
/* type: 0 string, 1 non-negative integer, 2 number, 3 boolean. Strings live as long as the library. */
DS_API ds_status ds_command_key(const char* command, size_t index, const char** key, int* type,
                                const char** default_value, const char** help);

/* Run configuration for one command: TOML-style file plus key overrides. */
typedef struct ds_config ds_config;
DS_API ds_status ds_config_create(const char* command, ds_config** out);
DS_API void ds_config_destroy(ds_config* config);
DS_API ds_status ds_config_load(ds_config* config, const char* path);
DS_API ds_status ds_config_set(ds_config* config, const char* key, const char* value);
/* Effective settings as JSON; release with ds_string_free. */
DS_API ds_status ds_config_json(const ds_config* config, char** out);

typedef void (*ds_log_fn)(const char* line, void* user);
/* Runs the configured command. `log` may be NULL. */
DS_API ds_status ds_run(const ds_config* config, ds_log_fn log, void* user);

/* Scenes. */
typedef struct ds_scene ds_scene;
DS_API ds_status ds_scene_generate(uint64_t seed, double fps, double duration, int vehicles, ds_scene** out);
DS_API ds_status ds_scene_load(const char* path, ds_scene** out);
DS_API ds_status ds_scene_save(const ds_scene* scene, const char* path);
DS_API ds_status ds_scene_frame_count(const ds_scene* scene, size_t* out);
/* Rendered RGB frame of one view: width * height * 3 bytes into `rgb` (capacity bytes). */
DS_API ds_status ds_scene_frame(const ds_scene* scene, int view, size_t frame, uint8_t* rgb, size_t capacity,
                                size_t* width, size_t* height);
DS_API void ds_scene_destroy(ds_scene* scene);

/* Trained models. */
typedef struct ds_model ds_model;
DS_API ds_status ds_model_load(const char* checkpoint_dir, ds_model** out);
DS_API ds_status ds_model_parameter_count(const ds_model* model, size_t* out);
DS_API void ds_model_destroy(ds_model* model);

/* Two-pass generation of all six views into {out_dir}/{scene}/{view}/frame_{i}.png. */
DS_API ds_status ds_generate_views(const ds_model* model, const ds_scene* scene, uint64_t seed, size_t steps,
                                   double cfg_scale, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif
