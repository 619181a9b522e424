#pragma once

#include <json.hpp>

#include "vslm/pipeline.hpp"

namespace vslm {

// JSON codecs for every configuration block. Readers accept partial objects
// (absent fields keep their defaults) but reject unknown keys with a
// ConfigError naming the offender; writers emit every field, so a written
// config is always the fully resolved effective one.

nlohmann::json corpus_to_json(const CorpusConfig& cfg);
CorpusConfig corpus_from_json(const nlohmann::json& j);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json sampler_to_json(const SamplerConfig& cfg);
SamplerConfig sampler_from_json(const nlohmann::json& j);

nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

// Ablation-specific knobs of a run config; the shared model/train/sampler
// blocks and the seed complete the experiment.
struct AblateSection {
  int n_train = 600;
  int n_heldout = 100;
  int pretrain_steps = 1000;
  int pretrain_factor = 5;
  std::vector<std::string> runs = {"full", "no_visual", "visual_prefix",
                                   "full_pretrain_adapt", "full_frozen"};
};

// Unified configuration for the command-line tools. One file drives every
// subcommand; each picks the blocks it needs.
struct RunConfig {
  uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  AblateSection ablate;

  ExperimentConfig experiment() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Parses a JSON file into a run config; any I/O, syntax, schema, or range
// problem is a ConfigError.
RunConfig load_run_config(const std::string& path);

void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace vslm
