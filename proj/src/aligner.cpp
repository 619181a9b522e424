#include "vslm/aligner.hpp"

#include <cmath>

namespace vslm {

AlignerParams make_aligner(const AlignerConfig& cfg, Rng& rng) {
  if (cfg.vocab_p < 2 || cfg.lip_dim < 1 || cfg.dim_h < 2) {
    throw ConfigError("aligner: bad dimensions");
  }
  AlignerParams p;
  std::vector<real> table(static_cast<size_t>(cfg.vocab_p) * cfg.dim_h);
  for (real& x : table) x = static_cast<real>(rng.normal(0.0, 0.02));
  p.phoneme_table = Tensor::from({cfg.vocab_p, cfg.dim_h}, std::move(table), true);
  p.phoneme_block = make_block(cfg.dim_h, 4, rng);
  p.phoneme_out = make_layer_norm(cfg.dim_h);
  p.lip_in = make_linear(cfg.lip_dim, cfg.dim_h, rng);
  p.lip_block = make_block(cfg.dim_h, 4, rng);
  p.lip_out = make_layer_norm(cfg.dim_h);
  return p;
}

void register_aligner_params(ParamSet& ps, const std::string& prefix,
                             const AlignerParams& params) {
  ps.add(prefix + ".phoneme_table", params.phoneme_table);
  register_block(ps, prefix + ".phoneme_block", params.phoneme_block);
  register_layer_norm(ps, prefix + ".phoneme_out", params.phoneme_out);
  register_linear(ps, prefix + ".lip_in", params.lip_in);
  register_block(ps, prefix + ".lip_block", params.lip_block);
  register_layer_norm(ps, prefix + ".lip_out", params.lip_out);
}

Tensor encode_phonemes(GradTape& tape, const PhonemeSeq& p, const AlignerParams& params,
                       const AlignerConfig& cfg) {
  if (p.ids.empty()) throw ShapeError("encode_phonemes: empty sequence");
  Tensor x = embedding_lookup(tape, params.phoneme_table, p.ids);
  x = add(tape, x, sinusoidal_encoding(static_cast<int>(p.ids.size()), cfg.dim_h));
  x = block_forward(tape, x, params.phoneme_block, cfg.heads, /*causal=*/false);
  return apply_layer_norm(tape, x, params.phoneme_out);
}

Tensor encode_lips(GradTape& tape, const LipEmbeds& lips, const AlignerParams& params,
                   const AlignerConfig& cfg) {
  if (lips.t_v < 1) throw ShapeError("encode_lips: empty sequence");
  if (lips.dim != cfg.lip_dim) throw ShapeError("encode_lips: lip width mismatch");
  std::vector<real> vals(lips.frames.size());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<real>(lips.frames[i]);
  Tensor x = Tensor::from({lips.t_v, lips.dim}, std::move(vals));
  x = linear(tape, x, params.lip_in);
  x = add(tape, x, sinusoidal_encoding(lips.t_v, cfg.dim_h));
  x = block_forward(tape, x, params.lip_block, cfg.heads, /*causal=*/false);
  return apply_layer_norm(tape, x, params.lip_out);
}

SimilarityMatrix similarity(GradTape& tape, const Tensor& p_enc, const Tensor& l_enc) {
  if (p_enc.cols() != l_enc.cols()) throw ShapeError("similarity: encoder widths differ");
  const real inv_sqrt = static_cast<real>(1.0 / std::sqrt(static_cast<double>(p_enc.cols())));
  SimilarityMatrix sim;
  sim.scores = scale(tape, matmul(tape, p_enc, transpose(tape, l_enc)), inv_sqrt);
  sim.probs = softmax(tape, sim.scores, /*axis=*/0);
  return sim;
}

ExpandedPhonemes expand(const PhonemeSeq& p, const SimilarityMatrix& sim) {
  const int t_p = sim.probs.rows(), t_v = sim.probs.cols();
  if (static_cast<int>(p.ids.size()) != t_p) {
    throw ShapeError("expand: row count differs from phoneme count");
  }
  ExpandedPhonemes out;
  out.ids.resize(t_v);
  for (int j = 0; j < t_v; ++j) {
    int best = 0;
    for (int i = 1; i < t_p; ++i) {
      if (sim.probs.at(i, j) > sim.probs.at(best, j)) best = i;
    }
    out.ids[j] = p.ids[best];
  }
  return out;
}

Tensor alignment_loss(GradTape& tape, const SimilarityMatrix& sim,
                      const std::vector<int>& frame_positions) {
  if (static_cast<int>(frame_positions.size()) != sim.scores.cols()) {
    throw ShapeError("alignment_loss: one target position per frame required");
  }
  // Cross-entropy over each frame's column; transposing makes columns rows.
  return cross_entropy(tape, transpose(tape, sim.scores), frame_positions);
}

}  // namespace vslm
