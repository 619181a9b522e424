#pragma once

#include "vslm/data.hpp"
#include "vslm/nn.hpp"

namespace vslm {

struct AlignerConfig {
  int vocab_p = 24;
  int lip_dim = 32;
  int dim_h = 64;
  int heads = 4;
};

// Two single-block encoders into a shared space: a phoneme embedding branch
// and a lip projection branch, both bidirectional.
struct AlignerParams {
  Tensor phoneme_table;  // [vocab_p, dim_h]
  TransformerBlock phoneme_block;
  LayerNormParams phoneme_out;
  Linear lip_in;  // [lip_dim, dim_h]
  TransformerBlock lip_block;
  LayerNormParams lip_out;
};

AlignerParams make_aligner(const AlignerConfig& cfg, Rng& rng);
void register_aligner_params(ParamSet& ps, const std::string& prefix,
                             const AlignerParams& params);

Tensor encode_phonemes(GradTape& tape, const PhonemeSeq& p, const AlignerParams& params,
                       const AlignerConfig& cfg);
Tensor encode_lips(GradTape& tape, const LipEmbeds& lips, const AlignerParams& params,
                   const AlignerConfig& cfg);

// Column-stochastic phoneme-vs-frame attention. probs[:, j] is a distribution
// over the phoneme positions for lip frame j; scores holds the pre-softmax
// scaled dot products for loss computation.
struct SimilarityMatrix {
  Tensor scores;  // [t_p, t_v]
  Tensor probs;   // [t_p, t_v]
};

SimilarityMatrix similarity(GradTape& tape, const Tensor& p_enc, const Tensor& l_enc);

struct ExpandedPhonemes {
  std::vector<int> ids;
};

// Per-frame phoneme choice by column argmax (ties to the lowest row).
ExpandedPhonemes expand(const PhonemeSeq& p, const SimilarityMatrix& sim);

// Summed cross-entropy of each frame column against the true phoneme
// position (row index) for that frame.
Tensor alignment_loss(GradTape& tape, const SimilarityMatrix& sim,
                      const std::vector<int>& frame_positions);

}  // namespace vslm
