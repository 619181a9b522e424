#include "vslm/decoder.hpp"

namespace vslm {

namespace {

PromptStep make_step(StepKind kind) {
  PromptStep s;
  s.kind = kind;
  return s;
}

}  // namespace

PromptSequence assemble_prompt(const std::vector<int>& phoneme_steps,
                               const TokenGrid& reference, const TokenGrid* target,
                               bool append_stop, const LipEmbeds* lips,
                               const DecoderConfig& cfg) {
  if (phoneme_steps.empty()) throw ShapeError("assemble_prompt: no phoneme steps");
  if (reference.t_s < 1 || reference.n_q != cfg.n_q) {
    throw ShapeError("assemble_prompt: bad reference grid");
  }
  PromptSequence seq;
  for (size_t i = 0; i < phoneme_steps.size(); ++i) {
    PromptStep s = make_step(StepKind::Phoneme);
    s.phoneme = phoneme_steps[i];
    s.pos = static_cast<int>(i);
    seq.steps.push_back(std::move(s));
  }
  if (lips != nullptr) {
    if (cfg.lip_dim != lips->dim) throw ShapeError("assemble_prompt: lip width mismatch");
    for (int t = 0; t < lips->t_v; ++t) {
      PromptStep s = make_step(StepKind::Lip);
      s.lip = lips->row(t);
      s.pos = t;
      seq.steps.push_back(std::move(s));
    }
  }
  seq.steps.push_back(make_step(StepKind::Separator));
  for (int t = 0; t < reference.t_s; ++t) {
    PromptStep s = make_step(StepKind::Reference);
    s.tokens.resize(cfg.n_q);
    for (int i = 0; i < cfg.n_q; ++i) s.tokens[i] = reference.at(t, i);
    s.pos = t;
    seq.steps.push_back(std::move(s));
  }
  seq.steps.push_back(make_step(StepKind::Bos));
  if (target != nullptr) {
    if (target->t_s < 1 || target->n_q != cfg.n_q) {
      throw ShapeError("assemble_prompt: bad target grid");
    }
    seq.first_target = static_cast<int>(seq.steps.size());
    for (int t = 0; t < target->t_s; ++t) {
      PromptStep s = make_step(StepKind::Target);
      s.tokens.resize(cfg.n_q);
      for (int i = 0; i < cfg.n_q; ++i) s.tokens[i] = target->at(t, i);
      s.pos = t;
      seq.steps.push_back(std::move(s));
    }
    seq.n_targets = target->t_s;
    if (append_stop) {
      PromptStep s = make_step(StepKind::Target);
      s.tokens.assign(cfg.n_q, cfg.stop_id());
      s.pos = target->t_s;
      seq.steps.push_back(std::move(s));
      ++seq.n_targets;
    }
  }
  return seq;
}

DecoderParams make_decoder(const DecoderConfig& cfg, Rng& rng) {
  if (cfg.vocab_p < 2 || cfg.n_q < 1 || cfg.codebook_size < 2 || cfg.dim < 2) {
    throw ConfigError("decoder: bad dimensions");
  }
  DecoderParams p;
  auto table = [&](int rows) {
    std::vector<real> vals(static_cast<size_t>(rows) * cfg.dim);
    for (real& x : vals) x = static_cast<real>(rng.normal(0.0, 0.02));
    return Tensor::from({rows, cfg.dim}, std::move(vals), true);
  };
  for (int level = 0; level < cfg.n_q; ++level) {
    p.level_tables.push_back(table(cfg.codebook_size + 1));
  }
  p.phoneme_table = table(cfg.vocab_p);
  p.special_table = table(2);
  p.segment_table = table(kStepKinds);
  for (int i = 0; i < cfg.n_global; ++i) p.global_blocks.push_back(make_block(cfg.dim, 4, rng));
  p.global_out = make_layer_norm(cfg.dim);
  p.h_in = make_linear(cfg.dim, cfg.dim, rng);
  for (int i = 0; i < cfg.n_local; ++i) p.local_blocks.push_back(make_block(cfg.dim, 4, rng));
  p.local_out = make_layer_norm(cfg.dim);
  for (int level = 0; level < cfg.n_q; ++level) {
    p.out_proj.push_back(make_linear(cfg.dim, cfg.codebook_size + 1, rng));
  }
  if (cfg.lip_dim > 0) p.lip_in = make_linear(cfg.lip_dim, cfg.dim, rng);
  return p;
}

void register_decoder_params(ParamSet& ps, const std::string& prefix,
                             const DecoderParams& params) {
  for (size_t i = 0; i < params.level_tables.size(); ++i) {
    ps.add(prefix + ".level" + std::to_string(i) + ".table", params.level_tables[i]);
  }
  ps.add(prefix + ".phoneme_table", params.phoneme_table);
  ps.add(prefix + ".special_table", params.special_table);
  ps.add(prefix + ".segment_table", params.segment_table);
  for (size_t i = 0; i < params.global_blocks.size(); ++i) {
    register_block(ps, prefix + ".global" + std::to_string(i), params.global_blocks[i]);
  }
  register_layer_norm(ps, prefix + ".global_out", params.global_out);
  register_linear(ps, prefix + ".h_in", params.h_in);
  for (size_t i = 0; i < params.local_blocks.size(); ++i) {
    register_block(ps, prefix + ".local" + std::to_string(i), params.local_blocks[i]);
  }
  register_layer_norm(ps, prefix + ".local_out", params.local_out);
  for (size_t i = 0; i < params.out_proj.size(); ++i) {
    register_linear(ps, prefix + ".head" + std::to_string(i), params.out_proj[i]);
  }
  if (params.lip_in) register_linear(ps, prefix + ".lip_in", *params.lip_in);
}

Tensor step_embed(GradTape& tape, const PromptStep& step, const DecoderParams& params,
                  const DecoderConfig& cfg) {
  switch (step.kind) {
    case StepKind::Phoneme: {
      Tensor e = embedding_lookup(tape, params.phoneme_table, {step.phoneme});
      return scale(tape, e, static_cast<real>(cfg.n_q));
    }
    case StepKind::Separator:
      return embedding_lookup(tape, params.special_table, {0});
    case StepKind::Bos:
      return embedding_lookup(tape, params.special_table, {1});
    case StepKind::Reference:
    case StepKind::Target: {
      if (static_cast<int>(step.tokens.size()) != cfg.n_q) {
        throw ShapeError("step_embed: token slot count differs from n_q");
      }
      Tensor sum = embedding_lookup(tape, params.level_tables[0], {step.tokens[0]});
      for (int i = 1; i < cfg.n_q; ++i) {
        sum = add(tape, sum, embedding_lookup(tape, params.level_tables[i], {step.tokens[i]}));
      }
      return sum;
    }
    case StepKind::Lip: {
      if (!params.lip_in) throw ConfigError("step_embed: model has no lip projection");
      if (step.lip == nullptr) throw ShapeError("step_embed: lip step without data");
      std::vector<real> vals(cfg.lip_dim);
      for (int i = 0; i < cfg.lip_dim; ++i) vals[i] = static_cast<real>(step.lip[i]);
      return linear(tape, Tensor::from({1, cfg.lip_dim}, std::move(vals)), *params.lip_in);
    }
  }
  throw ConfigError("step_embed: unknown step kind");
}

// Rows are content + segment embedding + a positional term that restarts at
// each segment, so a target frame and its phoneme step share phase.
static Tensor assemble_rows(GradTape& tape, const PromptSequence& seq,
                            const DecoderParams& params, const DecoderConfig& cfg) {
  const int n = static_cast<int>(seq.steps.size());
  if (n < 1) throw ShapeError("global_forward: empty sequence");
  if (n > cfg.context_limit) throw ShapeError("global_forward: sequence exceeds context limit");
  int max_pos = 0;
  for (const PromptStep& s : seq.steps) max_pos = std::max(max_pos, s.pos);
  Tensor pe = sinusoidal_encoding(max_pos + 1, cfg.dim);

  std::vector<Tensor> rows;
  rows.reserve(n);
  std::vector<int> kinds(n), positions(n);
  for (int t = 0; t < n; ++t) {
    rows.push_back(step_embed(tape, seq.steps[t], params, cfg));
    kinds[t] = static_cast<int>(seq.steps[t].kind);
    positions[t] = seq.steps[t].pos;
  }
  Tensor x = concat_rows(tape, rows);
  x = add(tape, x, embedding_lookup(tape, params.segment_table, kinds));
  return add(tape, x, embedding_lookup(tape, pe, positions));
}

Tensor global_forward(GradTape& tape, const PromptSequence& seq,
                      const DecoderParams& params, const DecoderConfig& cfg) {
  Tensor x = assemble_rows(tape, seq, params, cfg);
  for (const TransformerBlock& blk : params.global_blocks) {
    x = block_forward(tape, x, blk, cfg.heads, /*causal=*/true);
  }
  return apply_layer_norm(tape, x, params.global_out);
}

// Shared local pass: rows = [projected h, level embeddings of the given
// tokens], causal; returns the normalized outputs.
static Tensor local_rows(GradTape& tape, const Tensor& h_row, const std::vector<int>& tokens,
                         const DecoderParams& params, const DecoderConfig& cfg) {
  if (h_row.rows() != 1 || h_row.cols() != cfg.dim) {
    throw ShapeError("local_forward: context vector must be [1, dim]");
  }
  std::vector<Tensor> rows;
  rows.push_back(linear(tape, h_row, params.h_in));
  for (size_t i = 0; i < tokens.size(); ++i) {
    rows.push_back(embedding_lookup(tape, params.level_tables[i], {tokens[i]}));
  }
  Tensor x = concat_rows(tape, rows);
  for (const TransformerBlock& blk : params.local_blocks) {
    x = block_forward(tape, x, blk, cfg.heads, /*causal=*/true);
  }
  return apply_layer_norm(tape, x, params.local_out);
}

Tensor local_forward(GradTape& tape, const Tensor& h_row, const std::vector<int>& prev_levels,
                     const DecoderParams& params, const DecoderConfig& cfg) {
  const int level = static_cast<int>(prev_levels.size());
  if (level >= cfg.n_q) throw ShapeError("local_forward: level index past n_q");
  Tensor out = local_rows(tape, h_row, prev_levels, params, cfg);
  Tensor last = slice_rows(tape, out, level, level + 1);
  return linear(tape, last, params.out_proj[level]);
}

Tensor local_forward_teacher(GradTape& tape, const Tensor& h_row,
                             const std::vector<int>& frame_tokens,
                             const DecoderParams& params, const DecoderConfig& cfg) {
  if (static_cast<int>(frame_tokens.size()) != cfg.n_q) {
    throw ShapeError("local_forward_teacher: n_q tokens required");
  }
  // Row i sees h plus levels < i, exactly what predicting level i may use.
  std::vector<int> prefix(frame_tokens.begin(), frame_tokens.end() - 1);
  Tensor out = local_rows(tape, h_row, prefix, params, cfg);
  std::vector<Tensor> logits;
  logits.reserve(cfg.n_q);
  for (int i = 0; i < cfg.n_q; ++i) {
    logits.push_back(linear(tape, slice_rows(tape, out, i, i + 1), params.out_proj[i]));
  }
  return concat_rows(tape, logits);
}

Tensor decoder_loss(GradTape& tape, const PromptSequence& seq, const DecoderParams& params,
                    const DecoderConfig& cfg) {
  if (seq.first_target < 1 || seq.n_targets < 1) {
    throw ShapeError("decoder_loss: sequence has no target region");
  }
  Tensor h_all = global_forward(tape, seq, params, cfg);
  std::vector<Tensor> logit_rows;
  std::vector<int> targets;
  logit_rows.reserve(seq.n_targets);
  targets.reserve(static_cast<size_t>(seq.n_targets) * cfg.n_q);
  for (int t = 0; t < seq.n_targets; ++t) {
    const int step_index = seq.first_target + t;
    const PromptStep& step = seq.steps[step_index];
    // Context vector for this step is the output at the preceding position.
    Tensor h = slice_rows(tape, h_all, step_index - 1, step_index);
    logit_rows.push_back(local_forward_teacher(tape, h, step.tokens, params, cfg));
    for (int token : step.tokens) targets.push_back(token);
  }
  return cross_entropy(tape, concat_rows(tape, logit_rows), targets);
}

}  // namespace vslm
