#pragma once
// Flat dotted-key run configuration with named presets and strict key
// checking. Precedence: preset < config file < command-line overrides.

#include <string>
#include <vector>

#include "co4/bench.hpp"
#include "co4/trainer.hpp"

namespace co4 {

struct Paths {
  std::string corpus;
  std::string vocab;
  std::string checkpoint;
  std::string pairs;
  std::string output_dir;
};

struct RunConfig {
  std::string preset;  // "", "co4-alpha", "co4-beta", "co4-gamma", "baseline"
  ModelConfig model;
  TrainConfig train;
  BenchConfig bench;
  Paths paths;

  void validate() const;
};

// Expands a named preset onto the defaults. Throws ConfigError for an
// unknown name.
RunConfig make_preset(const std::string& name);

// `text` is the config file body (may be empty): one `key = value` per line,
// `#` comments. `overrides` are `key=value` strings from the command line.
// A `preset` key in either is expanded first; unknown keys are rejected with
// the key path; CO4_OUTPUT_DIR is the fallback for paths.output_dir.
RunConfig parse_config(const std::string& text,
                       const std::vector<std::string>& overrides = {});

// Every key with its resolved value, one per line — written next to run
// artifacts so any run is reproducible from this file alone.
std::string resolved_config_text(const RunConfig& cfg);

}  // namespace co4
