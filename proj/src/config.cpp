#include "vslm/config.hpp"

#include <fstream>
#include <initializer_list>

namespace vslm {
namespace {

void check_keys(const nlohmann::json& j, const char* where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(std::string(where) + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
void get_field(const nlohmann::json& j, const char* where, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(where) + ": field \"" + key + "\" has the wrong type");
  }
}

}  // namespace

nlohmann::json corpus_to_json(const CorpusConfig& cfg) {
  return {{"vocab_p", cfg.vocab_p},
          {"n_speakers", cfg.n_speakers},
          {"n_q", cfg.n_q},
          {"codebook_size", cfg.codebook_size},
          {"lip_dim", cfg.lip_dim},
          {"fps", cfg.fps},
          {"dur_min", cfg.dur_min},
          {"dur_max", cfg.dur_max},
          {"len_min", cfg.len_min},
          {"len_max", cfg.len_max},
          {"noise_sigma", cfg.noise_sigma},
          {"ref_frames", cfg.ref_frames},
          {"feat_dim", cfg.feat_dim},
          {"feature_seed", cfg.feature_seed},
          {"phoneme_remap_seed", cfg.phoneme_remap_seed}};
}

CorpusConfig corpus_from_json(const nlohmann::json& j) {
  check_keys(j, "corpus",
             {"vocab_p", "n_speakers", "n_q", "codebook_size", "lip_dim", "fps", "dur_min",
              "dur_max", "len_min", "len_max", "noise_sigma", "ref_frames", "feat_dim",
              "feature_seed", "phoneme_remap_seed"});
  CorpusConfig cfg;
  get_field(j, "corpus", "vocab_p", cfg.vocab_p);
  get_field(j, "corpus", "n_speakers", cfg.n_speakers);
  get_field(j, "corpus", "n_q", cfg.n_q);
  get_field(j, "corpus", "codebook_size", cfg.codebook_size);
  get_field(j, "corpus", "lip_dim", cfg.lip_dim);
  get_field(j, "corpus", "fps", cfg.fps);
  get_field(j, "corpus", "dur_min", cfg.dur_min);
  get_field(j, "corpus", "dur_max", cfg.dur_max);
  get_field(j, "corpus", "len_min", cfg.len_min);
  get_field(j, "corpus", "len_max", cfg.len_max);
  get_field(j, "corpus", "noise_sigma", cfg.noise_sigma);
  get_field(j, "corpus", "ref_frames", cfg.ref_frames);
  get_field(j, "corpus", "feat_dim", cfg.feat_dim);
  get_field(j, "corpus", "feature_seed", cfg.feature_seed);
  get_field(j, "corpus", "phoneme_remap_seed", cfg.phoneme_remap_seed);
  return cfg;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"corpus", corpus_to_json(cfg.corpus)},
          {"dim_h", cfg.dim_h},
          {"dim_m", cfg.dim_m},
          {"n_global", cfg.n_global},
          {"n_local", cfg.n_local},
          {"heads", cfg.heads},
          {"context_limit", cfg.context_limit},
          {"variant", to_string(cfg.variant)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  check_keys(j, "model",
             {"corpus", "dim_h", "dim_m", "n_global", "n_local", "heads", "context_limit",
              "variant"});
  ModelConfig cfg;
  if (j.contains("corpus")) cfg.corpus = corpus_from_json(j.at("corpus"));
  get_field(j, "model", "dim_h", cfg.dim_h);
  get_field(j, "model", "dim_m", cfg.dim_m);
  get_field(j, "model", "n_global", cfg.n_global);
  get_field(j, "model", "n_local", cfg.n_local);
  get_field(j, "model", "heads", cfg.heads);
  get_field(j, "model", "context_limit", cfg.context_limit);
  if (j.contains("variant")) {
    std::string v;
    get_field(j, "model", "variant", v);
    cfg.variant = variant_from_string(v);
  }
  return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"eps", cfg.eps},
          {"weight_decay", cfg.weight_decay},
          {"batch_size", cfg.batch_size},
          {"steps", cfg.steps},
          {"seed", cfg.seed},
          {"align_weight", cfg.align_weight},
          {"dec_weight", cfg.dec_weight},
          {"stage", to_string(cfg.stage)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  check_keys(j, "train",
             {"lr", "beta1", "beta2", "eps", "weight_decay", "batch_size", "steps", "seed",
              "align_weight", "dec_weight", "stage"});
  TrainConfig cfg;
  get_field(j, "train", "lr", cfg.lr);
  get_field(j, "train", "beta1", cfg.beta1);
  get_field(j, "train", "beta2", cfg.beta2);
  get_field(j, "train", "eps", cfg.eps);
  get_field(j, "train", "weight_decay", cfg.weight_decay);
  get_field(j, "train", "batch_size", cfg.batch_size);
  get_field(j, "train", "steps", cfg.steps);
  get_field(j, "train", "seed", cfg.seed);
  get_field(j, "train", "align_weight", cfg.align_weight);
  get_field(j, "train", "dec_weight", cfg.dec_weight);
  if (j.contains("stage")) {
    std::string s;
    get_field(j, "train", "stage", s);
    cfg.stage = stage_from_string(s);
  }
  return cfg;
}

nlohmann::json sampler_to_json(const SamplerConfig& cfg) {
  return {{"k", cfg.k}, {"temperature", cfg.temperature}};
}

SamplerConfig sampler_from_json(const nlohmann::json& j) {
  check_keys(j, "sampler", {"k", "temperature"});
  SamplerConfig cfg;
  get_field(j, "sampler", "k", cfg.k);
  get_field(j, "sampler", "temperature", cfg.temperature);
  return cfg;
}

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
  return {{"model", model_config_to_json(cfg.model)},
          {"n_train", cfg.n_train},
          {"n_heldout", cfg.n_heldout},
          {"train", train_config_to_json(cfg.train)},
          {"pretrain_steps", cfg.pretrain_steps},
          {"pretrain_factor", cfg.pretrain_factor},
          {"sampler", sampler_to_json(cfg.sampler)},
          {"seed", cfg.seed},
          {"runs", cfg.runs}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  check_keys(j, "experiment",
             {"model", "n_train", "n_heldout", "train", "pretrain_steps", "pretrain_factor",
              "sampler", "seed", "runs"});
  ExperimentConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  get_field(j, "experiment", "n_train", cfg.n_train);
  get_field(j, "experiment", "n_heldout", cfg.n_heldout);
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  get_field(j, "experiment", "pretrain_steps", cfg.pretrain_steps);
  get_field(j, "experiment", "pretrain_factor", cfg.pretrain_factor);
  if (j.contains("sampler")) cfg.sampler = sampler_from_json(j.at("sampler"));
  get_field(j, "experiment", "seed", cfg.seed);
  get_field(j, "experiment", "runs", cfg.runs);
  return cfg;
}

ExperimentConfig RunConfig::experiment() const {
  ExperimentConfig e;
  e.model = model;
  e.train = train;
  e.sampler = sampler;
  e.seed = seed;
  e.n_train = ablate.n_train;
  e.n_heldout = ablate.n_heldout;
  e.pretrain_steps = ablate.pretrain_steps;
  e.pretrain_factor = ablate.pretrain_factor;
  e.runs = ablate.runs;
  return e;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"model", model_config_to_json(cfg.model)},
          {"train", train_config_to_json(cfg.train)},
          {"sampler", sampler_to_json(cfg.sampler)},
          {"ablate",
           {{"n_train", cfg.ablate.n_train},
            {"n_heldout", cfg.ablate.n_heldout},
            {"pretrain_steps", cfg.ablate.pretrain_steps},
            {"pretrain_factor", cfg.ablate.pretrain_factor},
            {"runs", cfg.ablate.runs}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, "config", {"seed", "model", "train", "sampler", "ablate"});
  RunConfig cfg;
  get_field(j, "config", "seed", cfg.seed);
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  if (j.contains("sampler")) cfg.sampler = sampler_from_json(j.at("sampler"));
  if (j.contains("ablate")) {
    const nlohmann::json& a = j.at("ablate");
    check_keys(a, "ablate",
               {"n_train", "n_heldout", "pretrain_steps", "pretrain_factor", "runs"});
    get_field(a, "ablate", "n_train", cfg.ablate.n_train);
    get_field(a, "ablate", "n_heldout", cfg.ablate.n_heldout);
    get_field(a, "ablate", "pretrain_steps", cfg.ablate.pretrain_steps);
    get_field(a, "ablate", "pretrain_factor", cfg.ablate.pretrain_factor);
    get_field(a, "ablate", "runs", cfg.ablate.runs);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: " + path + " is not valid JSON");
  return run_config_from_json(j);
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace vslm
