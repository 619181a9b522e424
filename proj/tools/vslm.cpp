// Command-line front end: dataset generation, training, inference,
// evaluation, and the ablation driver. One JSON run config feeds every
// subcommand; each writes its resolved effective config next to its outputs.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "vslm/config.hpp"
#include "vslm/pipeline.hpp"

using namespace vslm;

namespace {

RunConfig load_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

void emit_effective_config(const std::string& out_path, const std::string& command,
                           const RunConfig& rc, nlohmann::json extras) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = run_config_to_json(rc);
  for (auto& [k, v] : extras.items()) j[k] = v;
  write_json_file(out_path + ".config.json", j);
}

// ---- gen-data ------------------------------------------------------------

struct GenDataArgs {
  std::string config, out;
  int n = 200;
  uint64_t seed = 0;
  bool seed_given = false;
};

void cmd_gen_data(const GenDataArgs& a) {
  RunConfig rc = load_or_default(a.config);
  if (a.n < 1) throw ConfigError("gen-data: --n must be positive");
  const uint64_t seed = a.seed_given ? a.seed : rc.seed;
  const CorpusConfig& corpus = rc.model.corpus;
  corpus.validate();
  const CorpusTables tables = make_tables(corpus);
  const std::vector<Utterance> utts = gen_corpus(seed, a.n, corpus, tables);
  write_dataset(a.out, corpus, seed, utts);
  emit_effective_config(a.out, "gen-data", rc, {{"n", a.n}, {"seed", seed}, {"out", a.out}});
  std::cout << "wrote " << utts.size() << " utterances to " << a.out << "\n";
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out_ckpt, init_ckpt, variant, stage;
};

nlohmann::json strip_steps(const TrainConfig& cfg) {
  nlohmann::json j = train_config_to_json(cfg);
  j.erase("steps");
  return j;
}

void cmd_train(const TrainArgs& a) {
  RunConfig rc = load_or_default(a.config);
  if (!a.variant.empty()) rc.model.variant = variant_from_string(a.variant);
  if (!a.stage.empty()) rc.train.stage = stage_from_string(a.stage);
  const Dataset ds = read_dataset(a.data);
  // The dataset is the source of truth for corpus geometry.
  rc.model.corpus = ds.config;
  rc.model.validate();
  rc.train.validate();

  Model model;
  std::optional<Trainer> trainer;
  if (!a.init_ckpt.empty()) {
    const Checkpoint ck = read_checkpoint(a.init_ckpt);
    if (model_config_to_json(ck.model_cfg) != model_config_to_json(rc.model)) {
      throw FormatError("train: checkpoint model config differs from the requested one");
    }
    if (strip_steps(ck.train_cfg) != strip_steps(rc.train)) {
      throw FormatError("train: checkpoint training config differs from the requested one");
    }
    model = model_from_checkpoint(ck);
    trainer.emplace(model, rc.train);
    restore_trainer(ck, *trainer);
  } else {
    model = make_model(rc.model, derive_seed(rc.seed, 5));
    trainer.emplace(model, rc.train);
  }

  const int64_t start = trainer->step_count();
  const int remaining = static_cast<int>(std::max<int64_t>(0, rc.train.steps - start));
  std::vector<StepLosses> log;
  if (remaining > 0) trainer->run(ds.utts, remaining, &log);
  write_checkpoint(a.out_ckpt, model, &*trainer);

  {
    std::ofstream out(a.out_ckpt + ".log.csv");
    if (!out) throw FormatError("train: cannot write " + a.out_ckpt + ".log.csv");
    out << "step,align_loss,dec_loss\n";
    char line[128];
    for (size_t i = 0; i < log.size(); ++i) {
      std::snprintf(line, sizeof(line), "%lld,%.6f,%.6f\n",
                    static_cast<long long>(start + 1 + static_cast<int64_t>(i)),
                    log[i].align, log[i].dec);
      out << line;
    }
  }
  emit_effective_config(a.out_ckpt, "train", rc,
                        {{"data", a.data},
                         {"out_ckpt", a.out_ckpt},
                         {"init_ckpt", a.init_ckpt},
                         {"steps_run", remaining}});
  std::cout << "trained " << remaining << " steps (total " << trainer->step_count()
            << "), checkpoint at " << a.out_ckpt << "\n";
}

// ---- infer -----------------------------------------------------------------

struct InferArgs {
  std::string ckpt, data, out;
  int k = 30;
  double temperature = 1.0;
  uint64_t seed = 1;
};

void check_geometry(const CorpusConfig& a, const CorpusConfig& b) {
  if (a.vocab_p != b.vocab_p || a.n_q != b.n_q || a.codebook_size != b.codebook_size ||
      a.lip_dim != b.lip_dim) {
    throw FormatError("infer: checkpoint and dataset disagree on corpus geometry");
  }
}

void cmd_infer(const InferArgs& a) {
  const Checkpoint ck = read_checkpoint(a.ckpt);
  const Model model = model_from_checkpoint(ck);
  const Dataset ds = read_dataset(a.data);
  check_geometry(model.cfg.corpus, ds.config);

  SamplerConfig sampler;
  sampler.k = a.k;
  sampler.temperature = a.temperature;
  const AlignerConfig acfg = model.cfg.aligner_config();

  std::ofstream out(a.out);
  if (!out) throw FormatError("infer: cannot write " + a.out);
  nlohmann::json header = {{"format", "vslm-generated"},
                           {"version", 1},
                           {"count", ds.utts.size()},
                           {"variant", to_string(model.cfg.variant)},
                           {"sampler", sampler_to_json(sampler)},
                           {"seed", a.seed}};
  out << header.dump() << "\n";

  for (size_t i = 0; i < ds.utts.size(); ++i) {
    const Utterance& utt = ds.utts[i];
    Rng rng(derive_seed(a.seed, i));
    GenerateOptions opts;
    opts.sampler = sampler;
    std::vector<int> steps;
    const LipEmbeds* lips = nullptr;
    if (model.cfg.variant == Variant::Full) {
      GradTape tape(false);
      Tensor p_enc = encode_phonemes(tape, utt.phonemes, *model.aligner, acfg);
      Tensor l_enc = encode_lips(tape, utt.lips, *model.aligner, acfg);
      steps = expand(utt.phonemes, similarity(tape, p_enc, l_enc)).ids;
    } else {
      steps = utt.phonemes.ids;
      opts.fixed_length = false;
      opts.max_frames = 2 * utt.target.t_s;
      if (model.cfg.variant == Variant::VisualPrefix) lips = &utt.lips;
    }
    const TokenGrid gen = generate(model, steps, lips, utt.reference, opts, rng);

    nlohmann::json row;
    row["id"] = utt.id;
    row["t_s"] = gen.t_s;
    row["n_q"] = gen.n_q;
    nlohmann::json frames = nlohmann::json::array();
    for (int t = 0; t < gen.t_s; ++t) {
      nlohmann::json frame = nlohmann::json::array();
      for (int l = 0; l < gen.n_q; ++l) frame.push_back(gen.at(t, l));
      frames.push_back(std::move(frame));
    }
    row["tokens"] = std::move(frames);
    if (model.cfg.variant == Variant::Full) row["expansion"] = steps;
    out << row.dump() << "\n";
  }
  if (!out) throw FormatError("infer: write failed for " + a.out);

  RunConfig rc;
  rc.seed = a.seed;
  rc.model = model.cfg;
  rc.train = ck.train_cfg;
  rc.sampler = sampler;
  emit_effective_config(a.out, "infer", rc,
                        {{"ckpt", a.ckpt}, {"data", a.data}, {"out", a.out}});
  std::cout << "generated " << ds.utts.size() << " grids to " << a.out << "\n";
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string generated, data, out;
};

struct GeneratedUtt {
  std::string id;
  TokenGrid grid;
  std::vector<int> expansion;  // empty when the variant predicts no alignment
};

std::vector<GeneratedUtt> read_generated(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("generated: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("generated: missing header line");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "vslm-generated") {
    throw FormatError("generated: unrecognized header");
  }
  if (header.value("version", 0) != 1) throw FormatError("generated: unsupported version");

  std::vector<GeneratedUtt> rows;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw FormatError("generated: malformed line");
      GeneratedUtt g;
      g.id = j.at("id").get<std::string>();
      g.grid.t_s = j.at("t_s").get<int>();
      g.grid.n_q = j.at("n_q").get<int>();
      for (const auto& frame : j.at("tokens")) {
        if (static_cast<int>(frame.size()) != g.grid.n_q) {
          throw FormatError("generated: ragged token row for " + g.id);
        }
        for (const auto& tok : frame) g.grid.tokens.push_back(tok.get<int>());
      }
      if (static_cast<int>(g.grid.tokens.size()) != g.grid.t_s * g.grid.n_q) {
        throw FormatError("generated: frame count mismatch for " + g.id);
      }
      if (j.contains("expansion")) g.expansion = j.at("expansion").get<std::vector<int>>();
      rows.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("generated: missing or mistyped field: ") + e.what());
  }
  if (header.value("count", size_t{0}) != rows.size()) {
    throw FormatError("generated: row count differs from header");
  }
  return rows;
}

void cmd_eval(const EvalArgs& a) {
  const std::vector<GeneratedUtt> gens = read_generated(a.generated);
  const Dataset ds = read_dataset(a.data);
  const CorpusTables tables = make_tables(ds.config);

  std::map<std::string, const Utterance*> by_id;
  for (const Utterance& u : ds.utts) by_id[u.id] = &u;
  std::vector<std::string> unmatched;
  for (const GeneratedUtt& g : gens) {
    if (!by_id.count(g.id)) unmatched.push_back(g.id);
  }
  if (!unmatched.empty() || gens.empty()) {
    std::string msg = "eval: no matching utterances";
    if (!unmatched.empty()) {
      msg = "eval: generated ids missing from the dataset:";
      for (const std::string& id : unmatched) msg += " " + id;
    }
    throw ConfigError(msg);
  }

  EvalSummary sum;
  sum.has_aligner = !gens.front().expansion.empty();
  for (const GeneratedUtt& g : gens) {
    const Utterance& utt = *by_id[g.id];
    sum.rows.push_back(evaluate_generated(
        utt, g.grid, g.expansion.empty() ? nullptr : &g.expansion, tables, ds.config));
  }
  sum.count = static_cast<int>(sum.rows.size());
  int with_frames = 0;
  for (const UttEval& r : sum.rows) {
    if (r.frame_accuracy >= 0) {
      sum.frame_accuracy += r.frame_accuracy;
      ++with_frames;
    }
    sum.token_accuracy += r.token_accuracy;
    sum.speaker_accuracy += r.speaker_accuracy;
    sum.mcd_dtw += r.mcd;
    sum.mcd_dtw_sl += r.mcd_sl;
    sum.duration_err += r.dur_err;
  }
  const double n = sum.count;
  if (with_frames) sum.frame_accuracy /= with_frames;
  sum.token_accuracy /= n;
  sum.speaker_accuracy /= n;
  sum.mcd_dtw /= n;
  sum.mcd_dtw_sl /= n;
  sum.duration_err /= n;

  write_eval_csv(a.out + ".csv", sum);
  nlohmann::json agg;
  agg["count"] = sum.count;
  if (with_frames) agg["alignment_frame_accuracy"] = sum.frame_accuracy;
  agg["token_accuracy"] = sum.token_accuracy;
  agg["speaker_token_accuracy"] = sum.speaker_accuracy;
  agg["mcd_dtw"] = sum.mcd_dtw;
  agg["mcd_dtw_sl"] = sum.mcd_dtw_sl;
  agg["duration_error"] = sum.duration_err;
  write_json_file(a.out + ".json", agg);

  RunConfig rc;
  emit_effective_config(a.out, "eval", rc,
                        {{"generated", a.generated}, {"data", a.data}, {"out", a.out}});
  std::cout << "evaluated " << sum.count << " utterances; aggregate in " << a.out
            << ".json\n";
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string config, out_dir;
};

void cmd_ablate(const AblateArgs& a) {
  RunConfig rc = load_or_default(a.config);
  const nlohmann::json report = run_experiment(rc.experiment(), a.out_dir);
  std::cout << "checks:\n";
  for (const auto& [key, value] : report.at("checks").items()) {
    if (value.is_boolean()) {
      std::cout << "  " << key << ": " << (value.get<bool>() ? "pass" : "FAIL") << "\n";
    } else {
      std::cout << "  " << key << ": " << value.dump() << "\n";
    }
  }
  std::cout << "report written to " << a.out_dir << "/report.json\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic visual text-to-speech: data, training, inference, evaluation"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", gen_args.config, "run config JSON (defaults when omitted)");
  gen->add_option("--out", gen_args.out, "output dataset path")->required();
  gen->add_option("--n", gen_args.n, "utterance count")->capture_default_str();
  CLI::Option* gen_seed = gen->add_option("--seed", gen_args.seed,
                                          "corpus seed (default: config seed)");
  gen->callback([&] {
    gen_args.seed_given = gen_seed->count() > 0;
    cmd_gen_data(gen_args);
  });

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--config", train_args.config, "run config JSON (defaults when omitted)");
  train->add_option("--data", train_args.data, "training dataset")->required();
  train->add_option("--out-ckpt", train_args.out_ckpt, "checkpoint output path")->required();
  train->add_option("--init-ckpt", train_args.init_ckpt, "checkpoint to resume from");
  train->add_option("--variant", train_args.variant,
                    "model variant override: full | no_visual | visual_prefix");
  train->add_option("--stage", train_args.stage,
                    "training stage override: scratch | pretrain | adapt | frozen");
  train->callback([&] { cmd_train(train_args); });

  InferArgs infer_args;
  CLI::App* infer = app.add_subcommand("infer", "generate token grids from a checkpoint");
  infer->add_option("--ckpt", infer_args.ckpt, "model checkpoint")->required();
  infer->add_option("--data", infer_args.data, "dataset with prompts")->required();
  infer->add_option("--out", infer_args.out, "output JSONL path")->required();
  infer->add_option("--k", infer_args.k, "top-k cutoff (1 = greedy)")->capture_default_str();
  infer->add_option("--temperature", infer_args.temperature, "softmax temperature")
      ->capture_default_str();
  infer->add_option("--seed", infer_args.seed, "sampling seed")->capture_default_str();
  infer->callback([&] { cmd_infer(infer_args); });

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "score generated grids against a dataset");
  eval->add_option("--generated", eval_args.generated, "JSONL from infer")->required();
  eval->add_option("--data", eval_args.data, "reference dataset")->required();
  eval->add_option("--out", eval_args.out,
                   "output stem; writes <out>.csv and <out>.json")->required();
  eval->callback([&] { cmd_eval(eval_args); });

  AblateArgs ablate_args;
  CLI::App* ablate = app.add_subcommand("ablate", "run the variant/stage comparison suite");
  ablate->add_option("--config", ablate_args.config, "run config JSON (defaults when omitted)");
  ablate->add_option("--out-dir", ablate_args.out_dir, "report directory")->required();
  ablate->callback([&] { cmd_ablate(ablate_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return 4;
  } catch (const ShapeError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
