#pragma once

#include <json.hpp>

#include "vslm/aligner.hpp"
#include "vslm/decoder.hpp"
#include "vslm/metrics.hpp"
#include "vslm/optim.hpp"

namespace vslm {

// full: aligner expansion drives a fixed-duration decoder prompt.
// no_visual: raw phonemes only, stop-token length prediction.
// visual_prefix: raw phonemes plus projected lip frames as prompt context,
// stop-token length prediction.
enum class Variant { Full, NoVisual, VisualPrefix };
// scratch: single training run from random init. pretrain: decoder-only
// objective. adapt: joint training from a pretrained decoder. frozen:
// aligner-only training with the decoder held fixed.
enum class Stage { Scratch, Pretrain, Adapt, Frozen };

std::string to_string(Variant v);
std::string to_string(Stage s);
Variant variant_from_string(const std::string& s);
Stage stage_from_string(const std::string& s);

struct ModelConfig {
  CorpusConfig corpus;
  int dim_h = 64;
  int dim_m = 128;
  int n_global = 4;
  int n_local = 2;
  int heads = 4;
  int context_limit = 512;
  Variant variant = Variant::Full;

  AlignerConfig aligner_config() const;
  DecoderConfig decoder_config() const;
  void validate() const;
};

struct Model {
  ModelConfig cfg;
  std::optional<AlignerParams> aligner;  // present for the full variant
  DecoderParams decoder;
  ParamSet params() const;
};

Model make_model(const ModelConfig& cfg, uint64_t init_seed);

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 8;
  int steps = 3000;
  uint64_t seed = 1;
  double align_weight = 1.0;
  double dec_weight = 1.0;
  Stage stage = Stage::Scratch;
  void validate() const;
};

// Batch means of the per-utterance loss sums.
struct StepLosses {
  double align = 0.0;
  double dec = 0.0;
};

// Training-time prompt for one utterance under a variant. The full variant
// teacher-forces the true expansion; the others see raw phonemes and learn
// to stop.
PromptSequence training_prompt(const Utterance& utt, Variant variant,
                               const DecoderConfig& cfg);

class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg);

  // One batch: joint forward, one backward, one optimizer step. Throws
  // NumericError with parameters untouched if any loss or gradient is
  // non-finite.
  StepLosses train_step(const std::vector<const Utterance*>& batch);

  // steps uniformly sampled batches; appends per-step losses to log.
  void run(const std::vector<Utterance>& corpus, int steps,
           std::vector<StepLosses>* log = nullptr);

  int64_t step_count() const { return steps_done_; }
  void set_step_count(int64_t n) { steps_done_ = n; }
  AdamW& optimizer() { return opt_; }
  const AdamW& optimizer() const { return opt_; }
  const ParamSet& trainable() const { return trainable_; }
  const TrainConfig& config() const { return cfg_; }
  std::string rng_state() const { return data_rng_.state(); }
  void set_rng_state(const std::string& s) { data_rng_.set_state(s); }

 private:
  Model& model_;
  TrainConfig cfg_;
  ParamSet trainable_;
  AdamW opt_;
  Rng data_rng_;
  int64_t steps_done_ = 0;
};

struct SamplerConfig {
  int k = 30;
  double temperature = 1.0;
};

// Temperature-scaled top-k draw. k = 1 is an exact argmax and consumes no
// randomness; k larger than the vocabulary is clamped.
int top_k_sample(const std::vector<real>& logits, const SamplerConfig& cfg, Rng& rng);
// The exact distribution top_k_sample draws from, over all ids (zero outside
// the kept set).
std::vector<double> top_k_probs(const std::vector<real>& logits, int k, double temperature);

struct GenerateOptions {
  SamplerConfig sampler;
  bool fixed_length = true;  // one frame per phoneme step
  int max_frames = 0;        // frame cap for stop-token generation
};

// Autoregressive decoding with per-block key/value caches. Fixed-length mode
// emits exactly one frame per phoneme step and never samples the stop
// symbol; stop-token mode runs until a level-0 stop (never on the first
// frame; no utterance is empty) or the frame cap.
TokenGrid generate(const Model& model, const std::vector<int>& phoneme_steps,
                   const LipEmbeds* lips, const TokenGrid& reference,
                   const GenerateOptions& opts, Rng& rng);

// ---- checkpoints -----------------------------------------------------------

struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  int64_t step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, std::vector<float>>> arrays;
};

// Binary layout: "VSLM", version u32 LE, manifest length u64 LE, JSON
// manifest, then raw little-endian f32 arrays in manifest order.
void write_checkpoint(const std::string& path, const Model& model, const Trainer* trainer);
Checkpoint read_checkpoint(const std::string& path);
Model model_from_checkpoint(const Checkpoint& ck);
// Restores optimizer moments, step counter, and batch RNG into a trainer
// built from the same config.
void restore_trainer(const Checkpoint& ck, Trainer& trainer);

// ---- evaluation --------------------------------------------------------------

struct UttEval {
  std::string id;
  int t_gen = 0;
  int t_true = 0;
  double frame_accuracy = -1.0;  // -1 when the model has no aligner
  double token_accuracy = 0.0;
  double speaker_accuracy = 0.0;
  double mcd = 0.0;
  double mcd_sl = 0.0;
  double dur_err = 0.0;
};

struct EvalSummary {
  Variant variant = Variant::Full;
  int count = 0;
  bool has_aligner = false;
  double frame_accuracy = 0.0;
  double token_accuracy = 0.0;
  double speaker_accuracy = 0.0;
  double mcd_dtw = 0.0;
  double mcd_dtw_sl = 0.0;
  double duration_err = 0.0;
  double align_loss_per_frame = 0.0;
  double dec_loss_per_token = 0.0;
  std::vector<UttEval> rows;
};

// Teacher-forced per-frame alignment loss and per-token decoder loss.
struct HeldoutLosses {
  double align = 0.0;
  double dec = 0.0;
};
HeldoutLosses heldout_losses(const Model& model, const std::vector<Utterance>& utts);

// Metrics for one generated grid against its ground truth. Token and speaker
// accuracies compare the overlapping prefix when lengths differ; they are the
// strict grid metrics otherwise. predicted_expansion, when given, is scored
// against the true frame-level phoneme ids.
UttEval evaluate_generated(const Utterance& utt, const TokenGrid& gen,
                           const std::vector<int>* predicted_expansion,
                           const CorpusTables& tables, const CorpusConfig& cfg);

// Generates for every utterance (per-utterance derived sampling seeds) and
// aggregates metrics.
EvalSummary evaluate(const Model& model, const std::vector<Utterance>& utts,
                     const CorpusTables& tables, const SamplerConfig& sampler,
                     uint64_t seed);

void write_eval_csv(const std::string& path, const EvalSummary& s);

// ---- experiments -------------------------------------------------------------

// Ablation driver configuration. model.corpus is the target-domain corpus;
// the pretraining corpus derives from it with a remapped phoneme convention
// and pretrain_factor times the training utterance count.
struct ExperimentConfig {
  ModelConfig model;
  int n_train = 600;
  int n_heldout = 100;
  TrainConfig train;  // budget for scratch/adapt/frozen runs
  int pretrain_steps = 1000;
  int pretrain_factor = 5;
  SamplerConfig sampler;
  uint64_t seed = 7;
  // Any of: full, no_visual, visual_prefix, full_pretrain_adapt, full_frozen.
  std::vector<std::string> runs = {"full", "no_visual", "visual_prefix",
                                   "full_pretrain_adapt", "full_frozen"};
};

// Trains and evaluates every requested run, writes report.json, summary.csv,
// summary.txt, per-run evaluation CSVs, and the effective config into
// out_dir, and returns the report.
nlohmann::json run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace vslm
