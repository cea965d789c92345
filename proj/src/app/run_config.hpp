#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace ds {

inline constexpr int kRunConfigVersion = 1;

enum class ValueType { kString, kUInt, kDouble, kBool };

struct KeySpec {
  std::string key;
  ValueType type;
  std::string default_value;  // empty string: no default (optional or required by the command)
  std::string help;
};

// Command settings from a TOML-style `key = value` file with command-line overrides.
// Unknown keys are rejected; values are type-checked when set.
class RunConfig {
 public:
  explicit RunConfig(std::string command);

  static const std::vector<std::string>& commands();
  static const std::vector<KeySpec>& schema(const std::string& command);

  // Lines of `key = value`; `#` starts a comment; strings may be double-quoted; an
  // optional `version = 1` line pins the schema version.
  void load_file(const std::filesystem::path& path);
  void parse(const std::string& text, const std::string& origin = "<config>");
  void set(const std::string& key, const std::string& value);

  const std::string& command() const { return command_; }
  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  // Throws ConfigError naming the key when it has no value.
  void require(const std::string& key) const;

  // Every schema key with its effective typed value (null when unset).
  nlohmann::json to_json() const;

 private:
  const KeySpec& spec(const std::string& key) const;
  std::string raw(const std::string& key) const;

  std::string command_;
  std::map<std::string, std::string> values_;
};

}  // namespace ds
