#include "app/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "common/error.hpp"

namespace ds {

using nlohmann::json;

namespace {

using T = ValueType;

std::vector<KeySpec> model_keys() {
  return {
      {"dim0", T::kUInt, "32", "token width at the fine level"},
      {"dim1", T::kUInt, "64", "token width at the coarse level"},
      {"heads", T::kUInt, "4", "attention heads"},
      {"patch", T::kUInt, "4", "patch size"},
      {"stem_channels", T::kUInt, "16", "full-resolution stem channels"},
      {"head_channels", T::kUInt, "8", "full-resolution head channels"},
      {"encoder_channels", T::kUInt, "4", "condition encoder channels"},
      {"time_dim", T::kUInt, "64", "timestep embedding width"},
      {"bimot_enabled", T::kBool, "true", "BiMoT blocks"},
      {"bimot_temporal", T::kBool, "true", "temporal attention inside BiMoT"},
      {"keyframe_cond", T::kBool, "true", "key-frame conditions"},
      {"neighbor_cond", T::kBool, "true", "neighbor-video conditions"},
      {"queries_from_out", T::kBool, "false", "flow attention takes queries from F_out"},
      {"first_frame_anchor", T::kBool, "true", "first-frame anchored noise prediction"},
      {"init_seed", T::kUInt, "0", "parameter initialization seed"},
  };
}

std::vector<KeySpec> train_keys() {
  return {
      {"steps", T::kUInt, "200", "optimizer steps (one clip each)"},
      {"lr", T::kDouble, "0.001", "AdamW learning rate"},
      {"weight_decay", T::kDouble, "0.01", "AdamW decoupled weight decay"},
      {"p_neighbor_drop", T::kDouble, "0.5", "neighbor-condition dropout"},
      {"p_condition_drop", T::kDouble, "0.2", "condition dropout"},
      {"grad_clip", T::kDouble, "1.0", "global gradient-norm clip (0 disables)"},
      {"generated_neighbor_prob", T::kDouble, "0.5", "share of neighbor batches fed generated key clips"},
      {"generated_sample_steps", T::kUInt, "2", "DDIM steps for cached generated key clips"},
  };
}

std::vector<KeySpec> sample_keys(const char* steps_key) {
  return {
      {steps_key, T::kUInt, "50", "DDIM sampling steps"},
      {"cfg_scale", T::kDouble, "2.5", "classifier-free guidance scale"},
      {"clip_x0", T::kBool, "true", "clip predicted clean frames to [-1, 1]"},
      {"keyframe_in_pass1", T::kBool, "true", "key-frame conditions for key views"},
      {"use_neighbor", T::kBool, "true", "feed generated key videos to pass 2"},
      {"threads", T::kUInt, "0", "pass-1 worker threads (0: DRIVESCAPE_THREADS or hardware)"},
  };
}

std::vector<KeySpec> concat(std::initializer_list<std::vector<KeySpec>> parts) {
  std::vector<KeySpec> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

const std::map<std::string, std::vector<KeySpec>>& all_schemas() {
  static const std::map<std::string, std::vector<KeySpec>> schemas = {
      {"gen-scene",
       {{"version", T::kUInt, "1", "config schema version"},
        {"seed", T::kUInt, "0", "scene seed; scene i uses seed + i"},
        {"count", T::kUInt, "1", "number of scenes"},
        {"fps", T::kDouble, "10", "video frame rate, [2, 10] Hz"},
        {"duration", T::kDouble, "0.8", "clip duration in seconds"},
        {"vehicles", T::kUInt, "3", "vehicles per scene"},
        {"road_template", T::kString, "straight", "straight | junction"},
        {"width", T::kUInt, "64", "image width"},
        {"height", T::kUInt, "32", "image height"},
        {"out", T::kString, "", "output directory"}}},
      {"train", concat({{{"version", T::kUInt, "1", "config schema version"},
                         {"data", T::kString, "", "directory of scene JSON files"},
                         {"out", T::kString, "", "checkpoint directory"},
                         {"seed", T::kUInt, "0", "training seed"},
                         {"checkpoint_every", T::kUInt, "0", "also checkpoint every N steps (0: only at the end)"},
                         {"resume", T::kString, "", "checkpoint directory to resume from"},
                         {"log", T::kString, "", "loss log path (default: <out>/loss.jsonl)"}},
                        train_keys(), model_keys()})},
      {"generate", concat({{{"version", T::kUInt, "1", "config schema version"},
                            {"checkpoint", T::kString, "", "checkpoint directory"},
                            {"scene", T::kString, "", "scene JSON with first frames and annotations"},
                            {"out", T::kString, "", "output directory"},
                            {"seed", T::kUInt, "0", "sampling seed"}},
                           sample_keys("steps")})},
      {"evaluate", concat({{{"version", T::kUInt, "1", "config schema version"},
                            {"generated", T::kString, "", "generated scene directory"},
                            {"scene", T::kString, "", "scene JSON"},
                            {"report", T::kString, "", "report path stem (.json and .csv are written)"},
                            {"ablation", T::kString, "", "comma-separated rows, or 'default' for the full matrix"},
                            {"train_data", T::kString, "", "ablation training scenes"},
                            {"eval_data", T::kString, "", "ablation evaluation scenes"},
                            {"seed", T::kUInt, "0", "ablation training and sampling seed"}},
                           train_keys(), model_keys(), sample_keys("sample_steps")})},
      {"render", {{"version", T::kUInt, "1", "config schema version"},
                  {"generated", T::kString, "", "generated scene directory"},
                  {"out", T::kString, "", "output directory for contact sheets"},
                  {"layout", T::kString, "grid", "sheet layout (grid: 2 x 3 views)"}}},
  };
  return schemas;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_uint(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s[0] == '-' || s[0] == '+') return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  in >> out;
  return in && in.peek() == std::char_traits<char>::eof() && std::isfinite(out);
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") return out = true, true;
  if (s == "false" || s == "0") return out = false, true;
  return false;
}

const char* type_name(ValueType t) {
  switch (t) {
    case T::kString: return "string";
    case T::kUInt: return "non-negative integer";
    case T::kDouble: return "number";
    case T::kBool: return "boolean";
  }
  return "?";
}

}  // namespace

RunConfig::RunConfig(std::string command) : command_(std::move(command)) {
  if (!all_schemas().count(command_)) throw ConfigError("unknown command '" + command_ + "'");
}

const std::vector<std::string>& RunConfig::commands() {
  static const std::vector<std::string> names = {"gen-scene", "train", "generate", "evaluate", "render"};
  return names;
}

const std::vector<KeySpec>& RunConfig::schema(const std::string& command) {
  auto it = all_schemas().find(command);
  if (it == all_schemas().end()) throw ConfigError("unknown command '" + command + "'");
  return it->second;
}

const KeySpec& RunConfig::spec(const std::string& key) const {
  for (const auto& k : schema(command_)) {
    if (k.key == key) return k;
  }
  throw ConfigError("unknown key '" + key + "' for command " + command_);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec& k = spec(key);
  std::string v = trim(value);
  if (k.type == T::kString && v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  std::uint64_t u = 0;
  double d = 0.0;
  bool b = false;
  const bool ok = k.type == T::kString || (k.type == T::kUInt && parse_uint(v, u)) ||
                  (k.type == T::kDouble && parse_double(v, d)) || (k.type == T::kBool && parse_bool(v, b));
  if (!ok) throw ConfigError("key '" + key + "' expects a " + type_name(k.type) + ", got '" + value + "'");
  if (key == "version" && u != static_cast<std::uint64_t>(kRunConfigVersion)) {
    throw ConfigError("config schema version " + v + " is not supported (expected " +
                      std::to_string(kRunConfigVersion) + ")");
  }
  values_[key] = v;
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  parse(text.str(), path.string());
}

std::string RunConfig::raw(const std::string& key) const {
  const KeySpec& k = spec(key);
  auto it = values_.find(key);
  return it != values_.end() ? it->second : k.default_value;
}

bool RunConfig::has(const std::string& key) const { return !raw(key).empty(); }

void RunConfig::require(const std::string& key) const {
  if (!has(key)) throw ConfigError(command_ + ": missing required setting '" + key + "'");
}

std::string RunConfig::get_string(const std::string& key) const { return raw(key); }

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  require(key);
  std::uint64_t u = 0;
  if (spec(key).type != T::kUInt || !parse_uint(raw(key), u)) throw ConfigError("key '" + key + "' is not an integer");
  return u;
}

double RunConfig::get_double(const std::string& key) const {
  require(key);
  double d = 0;
  const auto t = spec(key).type;
  if ((t != T::kDouble && t != T::kUInt) || !parse_double(raw(key), d)) {
    throw ConfigError("key '" + key + "' is not a number");
  }
  return d;
}

bool RunConfig::get_bool(const std::string& key) const {
  require(key);
  bool b = false;
  if (spec(key).type != T::kBool || !parse_bool(raw(key), b)) throw ConfigError("key '" + key + "' is not a boolean");
  return b;
}

json RunConfig::to_json() const {
  json out = json::object();
  for (const auto& k : schema(command_)) {
    if (!has(k.key)) {
      out[k.key] = nullptr;
      continue;
    }
    switch (k.type) {
      case T::kString: out[k.key] = get_string(k.key); break;
      case T::kUInt: out[k.key] = get_uint(k.key); break;
      case T::kDouble: out[k.key] = get_double(k.key); break;
      case T::kBool: out[k.key] = get_bool(k.key); break;
    }
  }
  return {{"command", command_}, {"settings", out}};
}

}  // namespace ds
