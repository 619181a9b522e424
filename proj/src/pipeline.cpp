#include "vslm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "vslm/config.hpp"

namespace vslm {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoVisual: return "no_visual";
    case Variant::VisualPrefix: return "visual_prefix";
  }
  throw ConfigError("unknown variant");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Scratch: return "scratch";
    case Stage::Pretrain: return "pretrain";
    case Stage::Adapt: return "adapt";
    case Stage::Frozen: return "frozen";
  }
  throw ConfigError("unknown stage");
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "no_visual") return Variant::NoVisual;
  if (s == "visual_prefix") return Variant::VisualPrefix;
  throw ConfigError("unknown variant: " + s);
}

Stage stage_from_string(const std::string& s) {
  if (s == "scratch") return Stage::Scratch;
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "adapt") return Stage::Adapt;
  if (s == "frozen") return Stage::Frozen;
  throw ConfigError("unknown stage: " + s);
}

AlignerConfig ModelConfig::aligner_config() const {
  AlignerConfig a;
  a.vocab_p = corpus.vocab_p;
  a.lip_dim = corpus.lip_dim;
  a.dim_h = dim_h;
  a.heads = heads;
  return a;
}

DecoderConfig ModelConfig::decoder_config() const {
  DecoderConfig d;
  d.vocab_p = corpus.vocab_p;
  d.n_q = corpus.n_q;
  d.codebook_size = corpus.codebook_size;
  d.lip_dim = variant == Variant::VisualPrefix ? corpus.lip_dim : 0;
  d.dim = dim_m;
  d.n_global = n_global;
  d.n_local = n_local;
  d.heads = heads;
  d.context_limit = context_limit;
  return d;
}

void ModelConfig::validate() const {
  corpus.validate();
  if (dim_h < 2 || dim_h % 2 != 0) throw ConfigError("model: dim_h must be even and >= 2");
  if (dim_m < 2 || dim_m % 2 != 0) throw ConfigError("model: dim_m must be even and >= 2");
  if (heads < 1 || dim_h % heads != 0 || dim_m % heads != 0) {
    throw ConfigError("model: heads must divide dim_h and dim_m");
  }
  if (n_global < 1 || n_local < 1) throw ConfigError("model: layer counts must be positive");
  if (context_limit < 8) throw ConfigError("model: context_limit too small");
}

ParamSet Model::params() const {
  ParamSet ps;
  if (aligner) register_aligner_params(ps, "aligner", *aligner);
  register_decoder_params(ps, "decoder", decoder);
  return ps;
}

Model make_model(const ModelConfig& cfg, uint64_t init_seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(init_seed);
  if (cfg.variant == Variant::Full) m.aligner = make_aligner(cfg.aligner_config(), rng);
  m.decoder = make_decoder(cfg.decoder_config(), rng);
  return m;
}

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("train: lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (eps <= 0) throw ConfigError("train: eps must be positive");
  if (weight_decay < 0) throw ConfigError("train: negative weight decay");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (steps < 1) throw ConfigError("train: steps must be positive");
  if (align_weight < 0 || dec_weight < 0) throw ConfigError("train: negative loss weight");
}

PromptSequence training_prompt(const Utterance& utt, Variant variant,
                               const DecoderConfig& cfg) {
  switch (variant) {
    case Variant::Full:
      return assemble_prompt(utt.expansion.ids, utt.reference, &utt.target,
                             /*append_stop=*/false, nullptr, cfg);
    case Variant::NoVisual:
      return assemble_prompt(utt.phonemes.ids, utt.reference, &utt.target,
                             /*append_stop=*/true, nullptr, cfg);
    case Variant::VisualPrefix:
      return assemble_prompt(utt.phonemes.ids, utt.reference, &utt.target,
                             /*append_stop=*/true, &utt.lips, cfg);
  }
  throw ConfigError("unknown variant");
}

static ParamSet stage_trainable(const Model& model, Stage stage) {
  ParamSet all = model.params();
  ParamSet out;
  for (auto& [name, t] : all.items) {
    const bool in_aligner = name.rfind("aligner.", 0) == 0;
    if (stage == Stage::Pretrain && in_aligner) continue;
    if (stage == Stage::Frozen && !in_aligner) continue;
    out.add(name, t);
  }
  if (out.items.empty()) {
    throw ConfigError("trainer: stage " + to_string(stage) + " leaves nothing trainable");
  }
  return out;
}

static AdamWConfig adamw_config(const TrainConfig& cfg) {
  AdamWConfig a;
  a.lr = static_cast<real>(cfg.lr);
  a.beta1 = static_cast<real>(cfg.beta1);
  a.beta2 = static_cast<real>(cfg.beta2);
  a.eps = static_cast<real>(cfg.eps);
  a.weight_decay = static_cast<real>(cfg.weight_decay);
  return a;
}

Trainer::Trainer(Model& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      trainable_(stage_trainable(model, cfg.stage)),
      opt_(trainable_.tensors(), adamw_config(cfg)),
      data_rng_(cfg.seed) {
  cfg_.validate();
  model_.cfg.validate();
}

StepLosses Trainer::train_step(const std::vector<const Utterance*>& batch) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  GradTape tape;
  const DecoderConfig dcfg = model_.cfg.decoder_config();
  const AlignerConfig acfg = model_.cfg.aligner_config();
  const bool with_align = model_.aligner.has_value() && cfg_.stage != Stage::Pretrain;
  const bool with_dec = cfg_.stage != Stage::Frozen;

  StepLosses losses;
  std::vector<Tensor> terms;
  for (const Utterance* utt : batch) {
    if (with_align) {
      Tensor p_enc = encode_phonemes(tape, utt->phonemes, *model_.aligner, acfg);
      Tensor l_enc = encode_lips(tape, utt->lips, *model_.aligner, acfg);
      Tensor la = alignment_loss(tape, similarity(tape, p_enc, l_enc),
                                 utt->expansion.positions);
      losses.align += la.item();
      terms.push_back(scale(tape, la, static_cast<real>(cfg_.align_weight)));
    }
    if (with_dec) {
      PromptSequence seq = training_prompt(*utt, model_.cfg.variant, dcfg);
      Tensor ld = decoder_loss(tape, seq, model_.decoder, dcfg);
      losses.dec += ld.item();
      terms.push_back(scale(tape, ld, static_cast<real>(cfg_.dec_weight)));
    }
  }
  Tensor loss = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) loss = add(tape, loss, terms[i]);
  loss = scale(tape, loss, static_cast<real>(1.0 / batch.size()));
  tape.backward(loss);
  opt_.step();
  opt_.zero_grad();
  ++steps_done_;
  losses.align /= static_cast<double>(batch.size());
  losses.dec /= static_cast<double>(batch.size());
  return losses;
}

void Trainer::run(const std::vector<Utterance>& corpus, int steps,
                  std::vector<StepLosses>* log) {
  if (corpus.empty()) throw ConfigError("trainer: empty corpus");
  std::vector<const Utterance*> batch(cfg_.batch_size);
  for (int s = 0; s < steps; ++s) {
    for (auto& slot : batch) slot = &corpus[data_rng_.uniform_int(corpus.size())];
    StepLosses l = train_step(batch);
    if (log) log->push_back(l);
  }
}

// ---- sampling ----------------------------------------------------------------

// Kept ids with their renormalized probabilities, sorted by descending logit
// (ties toward the lower id).
static std::vector<std::pair<int, double>> top_k_set(const std::vector<real>& logits,
                                                     int k, double temperature) {
  if (logits.empty()) throw ShapeError("top_k_sample: empty logits");
  check_finite("top_k_sample", logits);
  if (k < 1) throw ConfigError("top_k_sample: k must be at least 1");
  if (temperature <= 0) throw ConfigError("top_k_sample: temperature must be positive");
  const int n = static_cast<int>(logits.size());
  k = std::min(k, n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  order.resize(k);
  const double top = static_cast<double>(logits[order[0]]);
  std::vector<std::pair<int, double>> kept(k);
  double z = 0;
  for (int i = 0; i < k; ++i) {
    const double w = std::exp((static_cast<double>(logits[order[i]]) - top) / temperature);
    kept[i] = {order[i], w};
    z += w;
  }
  for (auto& [_, w] : kept) w /= z;
  return kept;
}

int top_k_sample(const std::vector<real>& logits, const SamplerConfig& cfg, Rng& rng) {
  if (cfg.k == 1) {
    if (logits.empty()) throw ShapeError("top_k_sample: empty logits");
    check_finite("top_k_sample", logits);
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    return best;
  }
  const auto kept = top_k_set(logits, cfg.k, cfg.temperature);
  const double u = rng.uniform();
  double cum = 0;
  for (const auto& [id, p] : kept) {
    cum += p;
    if (u < cum) return id;
  }
  return kept.back().first;
}

std::vector<double> top_k_probs(const std::vector<real>& logits, int k, double temperature) {
  std::vector<double> probs(logits.size(), 0.0);
  for (const auto& [id, p] : top_k_set(logits, k, temperature)) probs[id] = p;
  return probs;
}

// ---- generation --------------------------------------------------------------

TokenGrid generate(const Model& model, const std::vector<int>& phoneme_steps,
                   const LipEmbeds* lips, const TokenGrid& reference,
                   const GenerateOptions& opts, Rng& rng) {
  const DecoderConfig dcfg = model.cfg.decoder_config();
  GradTape tape(false);
  PromptSequence prompt = assemble_prompt(phoneme_steps, reference, nullptr,
                                          /*append_stop=*/false, lips, dcfg);
  const int max_new = opts.fixed_length ? static_cast<int>(phoneme_steps.size())
                                        : opts.max_frames;
  if (max_new < 1) throw ConfigError("generate: frame budget must be positive");
  if (static_cast<int>(prompt.steps.size()) + max_new > dcfg.context_limit) {
    throw ShapeError("generate: sequence would exceed the context limit");
  }

  int pe_len = max_new;
  for (const PromptStep& s : prompt.steps) pe_len = std::max(pe_len, s.pos + 1);
  Tensor pe = sinusoidal_encoding(pe_len, dcfg.dim);

  std::vector<BlockKVCache> caches(model.decoder.global_blocks.size());
  Tensor h;
  auto feed = [&](const PromptStep& step) {
    Tensor x = step_embed(tape, step, model.decoder, dcfg);
    x = add(tape, x, embedding_lookup(tape, model.decoder.segment_table,
                                      {static_cast<int>(step.kind)}));
    x = add(tape, x, embedding_lookup(tape, pe, {step.pos}));
    for (size_t b = 0; b < caches.size(); ++b) {
      x = block_step(tape, x, model.decoder.global_blocks[b], dcfg.heads, caches[b]);
    }
    h = apply_layer_norm(tape, x, model.decoder.global_out);
  };
  for (const PromptStep& s : prompt.steps) feed(s);

  TokenGrid grid;
  grid.n_q = dcfg.n_q;
  for (int t = 0; t < max_new; ++t) {
    std::vector<int> frame;
    bool stopped = false;
    for (int level = 0; level < dcfg.n_q; ++level) {
      Tensor logits = local_forward(tape, h, frame, model.decoder, dcfg);
      // The stop symbol is offered only where stopping is legal: stop-token
      // mode, level 0, not the first frame (no utterance is empty).
      const bool allow_stop = !opts.fixed_length && level == 0 && t > 0;
      std::vector<real> row(logits.v().begin(),
                            allow_stop ? logits.v().end()
                                       : logits.v().begin() + dcfg.codebook_size);
      const int token = top_k_sample(row, opts.sampler, rng);
      if (allow_stop && token == dcfg.stop_id()) {
        stopped = true;
        break;
      }
      frame.push_back(token);
    }
    if (stopped) break;
    grid.tokens.insert(grid.tokens.end(), frame.begin(), frame.end());
    ++grid.t_s;
    if (grid.t_s == max_new) break;
    PromptStep next;
    next.kind = StepKind::Target;
    next.tokens = std::move(frame);
    next.pos = t;
    feed(next);
  }
  return grid;
}

// ---- checkpoints -------------------------------------------------------------

static constexpr char kMagic[4] = {'V', 'S', 'L', 'M'};
static constexpr uint32_t kCkptVersion = 1;

static void write_f32_array(std::ofstream& out, const std::vector<real>& vals) {
  std::vector<float> buf(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) buf[i] = static_cast<float>(vals[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void write_checkpoint(const std::string& path, const Model& model, const Trainer* trainer) {
  ParamSet ps = model.params();
  nlohmann::json manifest;
  manifest["format"] = "vslm-checkpoint";
  manifest["version"] = kCkptVersion;
  manifest["model"] = model_config_to_json(model.cfg);
  manifest["step"] = trainer ? trainer->step_count() : 0;
  manifest["rng"] = trainer ? trainer->rng_state() : "";
  if (trainer) manifest["train"] = train_config_to_json(trainer->config());

  nlohmann::json arrays = nlohmann::json::array();
  for (auto& [name, t] : ps.items) {
    arrays.push_back({{"name", name}, {"size", t.numel()}});
  }
  if (trainer) {
    const ParamSet& tr = trainer->trainable();
    for (auto& [name, t] : tr.items) {
      arrays.push_back({{"name", "adamw.m." + name}, {"size", t.numel()}});
      arrays.push_back({{"name", "adamw.v." + name}, {"size", t.numel()}});
    }
  }
  manifest["arrays"] = arrays;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open " + path + " for writing");
  const std::string text = manifest.dump();
  const uint64_t len = text.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kCkptVersion), sizeof(kCkptVersion));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto& [name, t] : ps.items) write_f32_array(out, t.v());
  if (trainer) {
    const AdamW& opt = trainer->optimizer();
    for (size_t i = 0; i < opt.size(); ++i) {
      write_f32_array(out, opt.moment1(i));
      write_f32_array(out, opt.moment2(i));
    }
  }
  if (!out) throw FormatError("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic bytes");
  }
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kCkptVersion) throw FormatError("checkpoint: unsupported version");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw FormatError("checkpoint: truncated header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint: truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(text, nullptr, false);
  if (manifest.is_discarded()) throw FormatError("checkpoint: unparseable manifest");

  Checkpoint ck;
  try {
    ck.model_cfg = model_config_from_json(manifest.at("model"));
    if (manifest.contains("train")) {
      ck.train_cfg = train_config_from_json(manifest.at("train"));
    }
    ck.step = manifest.value("step", int64_t{0});
    ck.rng_state = manifest.value("rng", std::string());
    for (const auto& entry : manifest.at("arrays")) {
      const std::string name = entry.at("name").get<std::string>();
      const size_t size = entry.at("size").get<size_t>();
      std::vector<float> buf(size);
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(size * sizeof(float)));
      if (!in) throw FormatError("checkpoint: truncated array " + name);
      ck.arrays.emplace_back(name, std::move(buf));
    }
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model model = make_model(ck.model_cfg, 0);
  ParamSet ps = model.params();
  size_t filled = 0;
  for (const auto& [name, vals] : ck.arrays) {
    if (name.rfind("adamw.", 0) == 0) continue;
    Tensor t = [&] {
      try {
        return ps.find(name);
      } catch (const ConfigError&) {
        throw FormatError("checkpoint: unknown array " + name);
      }
    }();
    if (t.numel() != vals.size()) {
      throw FormatError("checkpoint: size mismatch for array " + name);
    }
    for (size_t i = 0; i < vals.size(); ++i) t.v()[i] = static_cast<real>(vals[i]);
    ++filled;
  }
  if (filled != ps.items.size()) {
    throw FormatError("checkpoint: parameter arrays missing");
  }
  return model;
}

void restore_trainer(const Checkpoint& ck, Trainer& trainer) {
  AdamW& opt = trainer.optimizer();
  const ParamSet& tr = trainer.trainable();
  for (const auto& [name, vals] : ck.arrays) {
    if (name.rfind("adamw.", 0) != 0) continue;
    const bool first = name.rfind("adamw.m.", 0) == 0;
    const std::string pname = name.substr(8);
    size_t slot = tr.items.size();
    for (size_t i = 0; i < tr.items.size(); ++i) {
      if (tr.items[i].first == pname) {
        slot = i;
        break;
      }
    }
    if (slot == tr.items.size()) {
      throw FormatError("checkpoint: optimizer state for unknown parameter " + pname);
    }
    std::vector<real>& m = first ? opt.moment1(slot) : opt.moment2(slot);
    if (m.size() != vals.size()) {
      throw FormatError("checkpoint: optimizer state size mismatch for " + pname);
    }
    for (size_t i = 0; i < vals.size(); ++i) m[i] = static_cast<real>(vals[i]);
  }
  opt.set_steps_taken(ck.step);
  trainer.set_step_count(ck.step);
  if (!ck.rng_state.empty()) trainer.set_rng_state(ck.rng_state);
}

// ---- evaluation --------------------------------------------------------------

HeldoutLosses heldout_losses(const Model& model, const std::vector<Utterance>& utts) {
  if (utts.empty()) throw ConfigError("heldout_losses: empty utterance list");
  const DecoderConfig dcfg = model.cfg.decoder_config();
  const AlignerConfig acfg = model.cfg.aligner_config();
  double align_sum = 0, dec_sum = 0;
  size_t frames = 0, tokens = 0;
  for (const Utterance& utt : utts) {
    GradTape tape(false);
    if (model.aligner) {
      Tensor p_enc = encode_phonemes(tape, utt.phonemes, *model.aligner, acfg);
      Tensor l_enc = encode_lips(tape, utt.lips, *model.aligner, acfg);
      align_sum += alignment_loss(tape, similarity(tape, p_enc, l_enc),
                                  utt.expansion.positions).item();
      frames += utt.expansion.ids.size();
    }
    PromptSequence seq = training_prompt(utt, model.cfg.variant, dcfg);
    dec_sum += decoder_loss(tape, seq, model.decoder, dcfg).item();
    tokens += static_cast<size_t>(seq.n_targets) * dcfg.n_q;
  }
  HeldoutLosses h;
  h.align = frames ? align_sum / static_cast<double>(frames) : 0.0;
  h.dec = tokens ? dec_sum / static_cast<double>(tokens) : 0.0;
  return h;
}

static double overlap_token_accuracy(const TokenGrid& gen, const TokenGrid& truth) {
  if (gen.n_q != truth.n_q) throw ShapeError("token accuracy: level counts differ");
  if (gen.t_s == truth.t_s) return token_accuracy(gen, truth);
  const int n = std::min(gen.t_s, truth.t_s);
  size_t hits = 0;
  for (int t = 0; t < n; ++t) {
    for (int i = 0; i < gen.n_q; ++i) hits += gen.at(t, i) == truth.at(t, i);
  }
  return static_cast<double>(hits) / (static_cast<double>(n) * gen.n_q);
}

UttEval evaluate_generated(const Utterance& utt, const TokenGrid& gen,
                           const std::vector<int>* predicted_expansion,
                           const CorpusTables& tables, const CorpusConfig& cfg) {
  UttEval row;
  row.id = utt.id;
  row.t_gen = gen.t_s;
  row.t_true = utt.target.t_s;
  if (predicted_expansion) {
    row.frame_accuracy = frame_alignment_accuracy(*predicted_expansion, utt.expansion.ids);
  }
  row.token_accuracy = overlap_token_accuracy(gen, utt.target);
  {
    const int n = std::min(gen.t_s, static_cast<int>(utt.expansion.ids.size()));
    TokenGrid head = gen;
    head.t_s = n;
    head.tokens.resize(static_cast<size_t>(n) * gen.n_q);
    std::vector<int> phons(utt.expansion.ids.begin(), utt.expansion.ids.begin() + n);
    row.speaker_accuracy = speaker_token_accuracy(head, phons, utt.speaker, cfg);
  }
  row.mcd = mcd_dtw(gen, utt.target, tables);
  row.mcd_sl = mcd_dtw_sl(gen, utt.target, tables);
  row.dur_err = duration_error(gen.t_s, utt.target.t_s);
  return row;
}

EvalSummary evaluate(const Model& model, const std::vector<Utterance>& utts,
                     const CorpusTables& tables, const SamplerConfig& sampler,
                     uint64_t seed) {
  if (utts.empty()) throw ConfigError("evaluate: empty utterance list");
  EvalSummary sum;
  sum.variant = model.cfg.variant;
  sum.has_aligner = model.aligner.has_value();
  const AlignerConfig acfg = model.cfg.aligner_config();

  for (size_t idx = 0; idx < utts.size(); ++idx) {
    const Utterance& utt = utts[idx];
    Rng rng(derive_seed(seed, idx));

    GenerateOptions opts;
    opts.sampler = sampler;
    std::vector<int> steps;
    const LipEmbeds* lips = nullptr;
    if (model.cfg.variant == Variant::Full) {
      GradTape tape(false);
      Tensor p_enc = encode_phonemes(tape, utt.phonemes, *model.aligner, acfg);
      Tensor l_enc = encode_lips(tape, utt.lips, *model.aligner, acfg);
      steps = expand(utt.phonemes, similarity(tape, p_enc, l_enc)).ids;
      opts.fixed_length = true;
    } else {
      steps = utt.phonemes.ids;
      opts.fixed_length = false;
      opts.max_frames = 2 * utt.target.t_s;
      if (model.cfg.variant == Variant::VisualPrefix) lips = &utt.lips;
    }

    TokenGrid gen = generate(model, steps, lips, utt.reference, opts, rng);
    sum.rows.push_back(evaluate_generated(
        utt, gen, model.cfg.variant == Variant::Full ? &steps : nullptr, tables,
        model.cfg.corpus));
  }

  sum.count = static_cast<int>(sum.rows.size());
  for (const UttEval& r : sum.rows) {
    if (sum.has_aligner) sum.frame_accuracy += r.frame_accuracy;
    sum.token_accuracy += r.token_accuracy;
    sum.speaker_accuracy += r.speaker_accuracy;
    sum.mcd_dtw += r.mcd;
    sum.mcd_dtw_sl += r.mcd_sl;
    sum.duration_err += r.dur_err;
  }
  const double n = sum.count;
  sum.frame_accuracy /= sum.has_aligner ? n : 1.0;
  sum.token_accuracy /= n;
  sum.speaker_accuracy /= n;
  sum.mcd_dtw /= n;
  sum.mcd_dtw_sl /= n;
  sum.duration_err /= n;

  HeldoutLosses hl = heldout_losses(model, utts);
  sum.align_loss_per_frame = hl.align;
  sum.dec_loss_per_token = hl.dec;
  return sum;
}

// ---- experiments -------------------------------------------------------------

static void copy_decoder_params(const Model& from, Model& to) {
  ParamSet src = from.params();
  ParamSet dst = to.params();
  for (auto& [name, t] : src.items) {
    if (name.rfind("decoder.", 0) != 0) continue;
    Tensor target = dst.find(name);
    if (target.numel() != t.numel()) {
      throw ConfigError("experiment: decoder shape mismatch for " + name);
    }
    target.v() = t.v();
  }
}

static nlohmann::json summary_to_json(const EvalSummary& s, Stage stage, int steps) {
  nlohmann::json m;
  m["count"] = s.count;
  if (s.has_aligner) m["alignment_frame_accuracy"] = s.frame_accuracy;
  m["token_accuracy"] = s.token_accuracy;
  m["speaker_token_accuracy"] = s.speaker_accuracy;
  m["mcd_dtw"] = s.mcd_dtw;
  m["mcd_dtw_sl"] = s.mcd_dtw_sl;
  m["duration_error"] = s.duration_err;
  m["heldout_align_loss_per_frame"] = s.align_loss_per_frame;
  m["heldout_dec_loss_per_token"] = s.dec_loss_per_token;
  nlohmann::json block;
  block["variant"] = to_string(s.variant);
  block["stage"] = to_string(stage);
  block["train_steps"] = steps;
  block["metrics"] = m;
  return block;
}

void write_eval_csv(const std::string& path, const EvalSummary& s) {
  std::ofstream out(path);
  if (!out) throw FormatError("experiment: cannot write " + path);
  out << "id,t_gen,t_true,alignment_frame_accuracy,token_accuracy,"
         "speaker_token_accuracy,mcd_dtw,mcd_dtw_sl,duration_error\n";
  char line[256];
  for (const UttEval& r : s.rows) {
    if (r.frame_accuracy >= 0) {
      std::snprintf(line, sizeof(line), "%s,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    r.id.c_str(), r.t_gen, r.t_true, r.frame_accuracy, r.token_accuracy,
                    r.speaker_accuracy, r.mcd, r.mcd_sl, r.dur_err);
    } else {
      std::snprintf(line, sizeof(line), "%s,%d,%d,,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    r.id.c_str(), r.t_gen, r.t_true, r.token_accuracy,
                    r.speaker_accuracy, r.mcd, r.mcd_sl, r.dur_err);
    }
    out << line;
  }
}

nlohmann::json run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.model.validate();
  cfg.train.validate();
  if (cfg.n_train < 1 || cfg.n_heldout < 1) {
    throw ConfigError("experiment: corpus sizes must be positive");
  }
  if (cfg.pretrain_steps < 1 || cfg.pretrain_factor < 1) {
    throw ConfigError("experiment: pretraining sizes must be positive");
  }
  std::filesystem::create_directories(out_dir);

  const CorpusConfig& corpus = cfg.model.corpus;
  const CorpusTables tables = make_tables(corpus);
  const std::vector<Utterance> train_set =
      gen_corpus(derive_seed(cfg.seed, 1), cfg.n_train, corpus, tables);
  const std::vector<Utterance> heldout =
      gen_corpus(derive_seed(cfg.seed, 2), cfg.n_heldout, corpus, tables);
  const uint64_t init_seed = derive_seed(cfg.seed, 5);

  // Decoder pretrained on a corpus whose stored-id convention is remapped,
  // standing in for out-of-domain TTS pretraining. Built once, on demand.
  std::optional<Model> pretrained;
  auto pretrain_decoder = [&]() -> Model& {
    if (!pretrained) {
      CorpusConfig pre_corpus = corpus;
      pre_corpus.phoneme_remap_seed = derive_seed(cfg.seed, 3);
      const std::vector<Utterance> pre_set = gen_corpus(
          derive_seed(cfg.seed, 4), cfg.n_train * cfg.pretrain_factor, pre_corpus, tables);
      ModelConfig mc = cfg.model;
      mc.variant = Variant::Full;
      pretrained = make_model(mc, init_seed);
      TrainConfig tc = cfg.train;
      tc.stage = Stage::Pretrain;
      tc.steps = cfg.pretrain_steps;
      Trainer trainer(*pretrained, tc);
      trainer.run(pre_set, cfg.pretrain_steps);
    }
    return *pretrained;
  };

  nlohmann::json report;
  report["runs"] = nlohmann::json::object();
  std::map<std::string, EvalSummary> results;

  for (const std::string& run : cfg.runs) {
    Variant variant;
    Stage stage;
    bool from_pretrained = false;
    if (run == "full") {
      variant = Variant::Full;
      stage = Stage::Scratch;
    } else if (run == "no_visual") {
      variant = Variant::NoVisual;
      stage = Stage::Scratch;
    } else if (run == "visual_prefix") {
      variant = Variant::VisualPrefix;
      stage = Stage::Scratch;
    } else if (run == "full_pretrain_adapt") {
      variant = Variant::Full;
      stage = Stage::Adapt;
      from_pretrained = true;
    } else if (run == "full_frozen") {
      variant = Variant::Full;
      stage = Stage::Frozen;
      from_pretrained = true;
    } else {
      throw ConfigError("experiment: unknown run " + run);
    }

    ModelConfig mc = cfg.model;
    mc.variant = variant;
    Model model = make_model(mc, init_seed);
    if (from_pretrained) copy_decoder_params(pretrain_decoder(), model);

    TrainConfig tc = cfg.train;
    tc.stage = stage;
    Trainer trainer(model, tc);
    trainer.run(train_set, tc.steps);

    EvalSummary s = evaluate(model, heldout, tables, cfg.sampler, derive_seed(cfg.seed, 6));
    write_eval_csv(out_dir + "/eval_" + run + ".csv", s);
    report["runs"][run] = summary_to_json(s, stage, tc.steps);
    results[run] = std::move(s);
  }

  nlohmann::json checks;
  if (results.count("full")) {
    checks["full_duration_error"] = results["full"].duration_err;
    checks["full_duration_error_zero"] = results["full"].duration_err == 0.0;
  }
  if (results.count("full") && results.count("no_visual")) {
    checks["full_mcd_dtw_sl"] = results["full"].mcd_dtw_sl;
    checks["no_visual_mcd_dtw_sl"] = results["no_visual"].mcd_dtw_sl;
    checks["full_sl_below_no_visual"] =
        results["full"].mcd_dtw_sl < results["no_visual"].mcd_dtw_sl;
    checks["no_visual_duration_error_positive"] = results["no_visual"].duration_err > 0.0;
  }
  if (results.count("full") && results.count("full_pretrain_adapt")) {
    const double ratio = results["full_pretrain_adapt"].dec_loss_per_token /
                         results["full"].dec_loss_per_token;
    checks["pretrain_adapt_loss_ratio"] = ratio;
    checks["pretrain_adapt_beats_scratch"] = ratio <= 0.8;
  }
  if (results.count("full_frozen")) {
    const double chance = 1.0 / corpus.codebook_size;
    checks["frozen_token_accuracy"] = results["full_frozen"].token_accuracy;
    checks["frozen_at_chance"] = results["full_frozen"].token_accuracy <= chance + 0.1;
  }
  report["checks"] = checks;
  report["config"] = experiment_to_json(cfg);

  {
    std::ofstream out(out_dir + "/report.json");
    out << report.dump(2) << "\n";
    if (!out) throw FormatError("experiment: cannot write report.json");
  }
  {
    std::ofstream out(out_dir + "/config.json");
    out << experiment_to_json(cfg).dump(2) << "\n";
  }
  {
    std::ofstream out(out_dir + "/summary.csv");
    out << "run,variant,stage,count,alignment_frame_accuracy,token_accuracy,"
           "speaker_token_accuracy,mcd_dtw,mcd_dtw_sl,duration_error,"
           "heldout_dec_loss_per_token\n";
    for (const std::string& run : cfg.runs) {
      const EvalSummary& s = results[run];
      char line[512];
      if (s.has_aligner) {
        std::snprintf(line, sizeof(line), "%s,%s,%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      run.c_str(), to_string(s.variant).c_str(),
                      report["runs"][run]["stage"].get<std::string>().c_str(), s.count,
                      s.frame_accuracy, s.token_accuracy, s.speaker_accuracy, s.mcd_dtw,
                      s.mcd_dtw_sl, s.duration_err, s.dec_loss_per_token);
      } else {
        std::snprintf(line, sizeof(line), "%s,%s,%s,%d,,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      run.c_str(), to_string(s.variant).c_str(),
                      report["runs"][run]["stage"].get<std::string>().c_str(), s.count,
                      s.token_accuracy, s.speaker_accuracy, s.mcd_dtw, s.mcd_dtw_sl,
                      s.duration_err, s.dec_loss_per_token);
      }
      out << line;
    }
  }
  {
    std::ofstream out(out_dir + "/summary.txt");
    char line[512];
    std::snprintf(line, sizeof(line), "%-20s %-14s %-8s %10s %10s %10s %10s %10s\n", "run",
                  "variant", "stage", "tok_acc", "spk_acc", "mcd_dtw", "mcd_sl", "dur_err");
    out << line;
    for (const std::string& run : cfg.runs) {
      const EvalSummary& s = results[run];
      std::snprintf(line, sizeof(line), "%-20s %-14s %-8s %10.4f %10.4f %10.4f %10.4f %10.4f\n",
                    run.c_str(), to_string(s.variant).c_str(),
                    report["runs"][run]["stage"].get<std::string>().c_str(), s.token_accuracy,
                    s.speaker_accuracy, s.mcd_dtw, s.mcd_dtw_sl, s.duration_err);
      out << line;
    }
  }
  return report;
}

}  // namespace vslm
