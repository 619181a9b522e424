#pragma once

#include <optional>

#include "vslm/data.hpp"
#include "vslm/nn.hpp"

namespace vslm {

struct DecoderConfig {
  int vocab_p = 24;
  int n_q = 4;
  int codebook_size = 64;  // V; every level table carries one extra stop row
  int lip_dim = 0;         // > 0 allocates the lip prefix projection
  int dim = 128;
  int n_global = 4;
  int n_local = 2;
  int heads = 4;
  int context_limit = 512;
  int stop_id() const { return codebook_size; }
};

// Prompt step kinds double as indices into the segment embedding table.
enum class StepKind { Phoneme = 0, Separator = 1, Reference = 2, Bos = 3, Target = 4, Lip = 5 };
inline constexpr int kStepKinds = 6;

struct PromptStep {
  StepKind kind = StepKind::Phoneme;
  int phoneme = -1;         // Phoneme steps
  std::vector<int> tokens;  // Reference and Target frames, n_q entries
  const float* lip = nullptr;  // Lip steps, borrowed row of lip_dim floats
  int pos = 0;              // position within the step's own segment
};

struct PromptSequence {
  std::vector<PromptStep> steps;
  int first_target = -1;  // index into steps, -1 when no target region
  int n_targets = 0;
};

// Layout: phonemes ++ [lip frames] ++ separator ++ reference frames ++ BOS
// ++ [target frames ++ [stop frame]]. Target frames are present at training
// time only; append_stop adds an all-stop-token frame for models that must
// learn when to halt.
PromptSequence assemble_prompt(const std::vector<int>& phoneme_steps,
                               const TokenGrid& reference, const TokenGrid* target,
                               bool append_stop, const LipEmbeds* lips,
                               const DecoderConfig& cfg);

struct DecoderParams {
  std::vector<Tensor> level_tables;  // n_q tables, [V + 1, dim]
  Tensor phoneme_table;              // [vocab_p, dim]
  Tensor special_table;              // [2, dim]: separator, BOS
  Tensor segment_table;              // [kStepKinds, dim], added per step kind
  std::vector<TransformerBlock> global_blocks;
  LayerNormParams global_out;
  Linear h_in;  // context vector into local position 0
  std::vector<TransformerBlock> local_blocks;
  LayerNormParams local_out;
  std::vector<Linear> out_proj;      // n_q heads, dim -> V + 1
  std::optional<Linear> lip_in;      // lip_dim -> dim, prefix variant only
};

DecoderParams make_decoder(const DecoderConfig& cfg, Rng& rng);
void register_decoder_params(ParamSet& ps, const std::string& prefix,
                             const DecoderParams& params);

// Content embedding of one step, [1, dim]: token frames sum their level
// embeddings, phoneme steps contribute the embedding once per level slot,
// specials use their own rows. Position and segment terms are added by
// global_forward, not here.
Tensor step_embed(GradTape& tape, const PromptStep& step, const DecoderParams& params,
                  const DecoderConfig& cfg);

// Causal stack over the assembled sequence; row t of the result is the
// context vector for predicting step t + 1.
Tensor global_forward(GradTape& tape, const PromptSequence& seq,
                      const DecoderParams& params, const DecoderConfig& cfg);

// Logits for level i of the current frame given its lower levels, computed
// from a tiny causal pass over [projected h, embeddings of prev_levels].
// Width is V + 1; the last column is the stop symbol.
Tensor local_forward(GradTape& tape, const Tensor& h_row, const std::vector<int>& prev_levels,
                     const DecoderParams& params, const DecoderConfig& cfg);

// All-level teacher-forced logits for one frame, [n_q, V + 1].
Tensor local_forward_teacher(GradTape& tape, const Tensor& h_row,
                             const std::vector<int>& frame_tokens,
                             const DecoderParams& params, const DecoderConfig& cfg);

// Summed token cross-entropy over the target region (prompt steps carry no
// loss terms).
Tensor decoder_loss(GradTape& tape, const PromptSequence& seq, const DecoderParams& params,
                    const DecoderConfig& cfg);

}  // namespace vslm
