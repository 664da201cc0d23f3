#pragma once

#include <string>
#include <vector>

#include "plad/dataset.hpp"
#include "plad/model.hpp"
#include "plad/pipeline.hpp"
#include "plad/trainer.hpp"

namespace plad {

// Everything one run needs, serialized as a single JSON document. Parsing is
// strict: a key the defaults do not define is rejected, so typos surface as
// config errors instead of silently keeping a default.
struct RunConfig {
  std::string data_dir = "out/dataset";
  std::string out_dir = "out";
  std::string train_category = "cube";
  int threads = 1;

  PipelineConfig pipeline;
  EncoderConfig encoder;
  GeoNetConfig geonet;
  PromptConfig prompts;
  LossConfig loss;
  TrainConfig train;
  std::vector<SynthSpec> synth;  // one spec per category

  ModelConfig model_config() const;
  void validate() const;
};

// Defaults, including the three-category benchmark synth specs.
RunConfig default_run_config();

std::string run_config_to_json(const RunConfig& cfg);

// Parses JSON text over the defaults. Unknown keys, wrong value kinds, and
// malformed JSON throw std::invalid_argument.
RunConfig parse_run_config(const std::string& json_text);

// Reads the file then parses it; file errors throw std::runtime_error.
RunConfig load_run_config(const std::string& path);

// Applies one `dotted.path=value` override. The path must already exist in
// the serialized form (arrays are indexed numerically: synth.0.seed). The
// value is parsed as JSON when possible, else taken as a string.
void apply_override(RunConfig& cfg, const std::string& assignment);

// FNV-1a 64 over the canonical JSON serialization, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace plad
