#pragma once

#include <functional>
#include <string>

#include "app/run_config.hpp"

namespace ds {

// Receives one human-readable progress line at a time.
using LogSink = std::function<void(const std::string&)>;

// Runs cfg.command(). Settings errors throw ConfigError; everything else throws the
// core error hierarchy.
void run_command(const RunConfig& cfg, const LogSink& log = {});

// FNV-1a 64 of the config's canonical JSON, hex encoded.
std::string config_hash(const RunConfig& cfg);

}  // namespace ds
