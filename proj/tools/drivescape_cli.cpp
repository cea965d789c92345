// drivescape command-line front end. Talks to the core only through the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "drivescape/drivescape.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string flag_name(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

int report(ds_status status) {
  std::fprintf(stderr, "error: %s: %s\n", ds_status_name(status), ds_last_error());
  return status == DS_ERR_CONFIG || status == DS_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
}

void print_line(const char* line, void*) { std::printf("%s\n", line); std::fflush(stdout); }

struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;  // schema key -> flag value
  bool print_config = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view driving video generation at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ds_version()));

  std::vector<std::string> names;
  for (size_t i = 0; i < ds_command_count(); ++i) names.emplace_back(ds_command_name(i));
  std::map<std::string, Subcommand> subs;
  for (const auto& name : names) {
    Subcommand& s = subs[name];
    s.app = app.add_subcommand(name);
    s.app->add_option("--config", s.config_file, "TOML-style key = value settings file")->check(CLI::ExistingFile);
    s.app->add_flag("--print-config", s.print_config, "Print the effective settings and exit");
    size_t count = 0;
    if (ds_command_key_count(name.c_str(), &count) != DS_OK) return report(DS_ERR_INTERNAL);
    for (size_t k = 0; k < count; ++k) {
      const char *key = nullptr, *def = nullptr, *help = nullptr;
      int type = 0;
      ds_command_key(name.c_str(), k, &key, &type, &def, &help);
      if (std::string(key) == "version") continue;
      std::string text = help;
      if (def && *def) text += " [default: " + std::string(def) + "]";
      s.app->add_option(flag_name(key), s.values[key], text);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (auto& [name, s] : subs) {
    if (!s.app->parsed()) continue;
    ds_config* cfg = nullptr;
    ds_status st = ds_config_create(name.c_str(), &cfg);
    if (st != DS_OK) return report(st);
    if (!s.config_file.empty()) st = ds_config_load(cfg, s.config_file.c_str());
    for (const auto& [key, value] : s.values) {
      if (st != DS_OK) break;
      if (s.app->count(flag_name(key)) > 0) st = ds_config_set(cfg, key.c_str(), value.c_str());
    }
    if (st == DS_OK && s.print_config) {
      char* json = nullptr;
      st = ds_config_json(cfg, &json);
      if (st == DS_OK) std::printf("%s\n", json);
      ds_string_free(json);
      ds_config_destroy(cfg);
      return st == DS_OK ? kExitOk : report(st);
    }
    if (st == DS_OK) st = ds_run(cfg, print_line, nullptr);
    ds_config_destroy(cfg);
    return st == DS_OK ? kExitOk : report(st);
  }
  return kExitUsage;
}
