// Model assembly, staged training, sampling, generation, checkpoints, and
// evaluation plumbing.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vslm/pipeline.hpp"

using namespace vslm;
namespace fs = std::filesystem;

namespace {

CorpusConfig tiny_corpus() {
  CorpusConfig cfg;
  cfg.vocab_p = 8;
  cfg.lip_dim = 6;
  cfg.len_max = 6;
  cfg.dur_max = 3;
  cfg.ref_frames = 4;
  cfg.feat_dim = 8;
  return cfg;
}

ModelConfig tiny_model(Variant variant) {
  ModelConfig cfg;
  cfg.corpus = tiny_corpus();
  cfg.dim_h = 16;
  cfg.dim_m = 16;
  cfg.n_global = 1;
  cfg.n_local = 1;
  cfg.heads = 2;
  cfg.context_limit = 256;
  cfg.variant = variant;
  return cfg;
}

std::vector<const Utterance*> batch_of(const std::vector<Utterance>& utts, size_t n) {
  std::vector<const Utterance*> out;
  for (size_t i = 0; i < n; ++i) out.push_back(&utts[i % utts.size()]);
  return out;
}

std::vector<std::vector<real>> snapshot(const ParamSet& ps, const std::string& prefix) {
  std::vector<std::vector<real>> vals;
  for (const auto& [name, t] : ps.items) {
    if (name.rfind(prefix, 0) == 0) vals.push_back(t.v());
  }
  return vals;
}

fs::path temp_file(const char* stem) {
  return fs::temp_directory_path() / (std::string("vslm_pipe_") + stem);
}

}  // namespace

TEST_CASE("model variants carry the right parameter groups") {
  Model full = make_model(tiny_model(Variant::Full), 3);
  CHECK(full.aligner.has_value());
  ParamSet fp = full.params();
  CHECK_NOTHROW(fp.find("aligner.phoneme_table"));
  CHECK_NOTHROW(fp.find("decoder.phoneme_table"));
  CHECK_THROWS_AS(fp.find("decoder.lip_in.w"), ConfigError);

  Model no_visual = make_model(tiny_model(Variant::NoVisual), 3);
  CHECK_FALSE(no_visual.aligner.has_value());
  ParamSet np = no_visual.params();
  CHECK_THROWS_AS(np.find("aligner.phoneme_table"), ConfigError);
  CHECK_THROWS_AS(np.find("decoder.lip_in.w"), ConfigError);

  Model prefix = make_model(tiny_model(Variant::VisualPrefix), 3);
  CHECK_FALSE(prefix.aligner.has_value());
  CHECK_NOTHROW(prefix.params().find("decoder.lip_in.w"));

  // same seed, same weights
  Model again = make_model(tiny_model(Variant::Full), 3);
  CHECK(again.decoder.phoneme_table.v() == full.decoder.phoneme_table.v());
  Model other = make_model(tiny_model(Variant::Full), 4);
  CHECK(other.decoder.phoneme_table.v() != full.decoder.phoneme_table.v());
}

TEST_CASE("model and train configs validate") {
  ModelConfig cfg = tiny_model(Variant::Full);
  cfg.dim_h = 15;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_model(Variant::Full);
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_model(Variant::Full);
  cfg.context_limit = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(tiny_model(Variant::Full).validate());

  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.lr = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.beta2 = 1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("variant names round-trip") {
  for (Variant v : {Variant::Full, Variant::NoVisual, Variant::VisualPrefix}) {
    CHECK(variant_from_string(to_string(v)) == v);
  }
  for (Stage s : {Stage::Scratch, Stage::Pretrain, Stage::Adapt, Stage::Frozen}) {
    CHECK(stage_from_string(to_string(s)) == s);
  }
  CHECK_THROWS_AS(variant_from_string("none"), ConfigError);
  CHECK_THROWS_AS(stage_from_string("warmup"), ConfigError);
}

TEST_CASE("training prompts differ by variant") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  Utterance utt = gen_utterance(5, corpus, tables);
  const int t_p = static_cast<int>(utt.phonemes.ids.size());
  const int t_v = utt.lips.t_v;
  const int t_r = corpus.ref_frames;

  ModelConfig mc = tiny_model(Variant::Full);
  DecoderConfig dc = mc.decoder_config();
  PromptSequence full = training_prompt(utt, Variant::Full, dc);
  CHECK(static_cast<int>(full.steps.size()) == t_v + 1 + t_r + 1 + t_v);
  CHECK(full.n_targets == t_v);  // no stop frame: length is known
  CHECK(full.steps[0].kind == StepKind::Phoneme);
  CHECK(full.steps[0].phoneme == utt.expansion.ids[0]);
  CHECK(full.steps[t_v - 1].phoneme == utt.expansion.ids[t_v - 1]);

  PromptSequence no_visual = training_prompt(utt, Variant::NoVisual, dc);
  CHECK(static_cast<int>(no_visual.steps.size()) == t_p + 1 + t_r + 1 + t_v + 1);
  CHECK(no_visual.n_targets == t_v + 1);
  CHECK(no_visual.steps[0].phoneme == utt.phonemes.ids[0]);
  for (int tok : no_visual.steps.back().tokens) CHECK(tok == dc.stop_id());

  ModelConfig pc = tiny_model(Variant::VisualPrefix);
  PromptSequence prefix = training_prompt(utt, Variant::VisualPrefix, pc.decoder_config());
  CHECK(static_cast<int>(prefix.steps.size()) == t_p + t_v + 1 + t_r + 1 + t_v + 1);
  CHECK(prefix.steps[t_p].kind == StepKind::Lip);
}

TEST_CASE("train steps move only the stage's parameter group") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  std::vector<Utterance> utts = gen_corpus(17, 12, corpus, tables);

  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 1e-3;

  SUBCASE("scratch trains everything and reports both losses") {
    Model model = make_model(tiny_model(Variant::Full), 1);
    Trainer trainer(model, tc);
    StepLosses losses = trainer.train_step(batch_of(utts, 4));
    CHECK(std::isfinite(losses.align));
    CHECK(std::isfinite(losses.dec));
    CHECK(losses.align > 0);
    CHECK(losses.dec > 0);
    CHECK(trainer.step_count() == 1);
  }

  SUBCASE("frozen leaves the decoder untouched") {
    Model model = make_model(tiny_model(Variant::Full), 1);
    TrainConfig frozen = tc;
    frozen.stage = Stage::Frozen;
    Trainer trainer(model, frozen);
    for (const auto& [name, _] : trainer.trainable().items) {
      CHECK(name.rfind("aligner.", 0) == 0);
    }
    auto dec_before = snapshot(model.params(), "decoder.");
    auto align_before = snapshot(model.params(), "aligner.");
    StepLosses losses = trainer.train_step(batch_of(utts, 4));
    CHECK(losses.dec == 0.0);
    CHECK(losses.align > 0);
    CHECK(snapshot(model.params(), "decoder.") == dec_before);
    CHECK(snapshot(model.params(), "aligner.") != align_before);
  }

  SUBCASE("pretrain leaves the aligner untouched") {
    Model model = make_model(tiny_model(Variant::Full), 1);
    TrainConfig pre = tc;
    pre.stage = Stage::Pretrain;
    Trainer trainer(model, pre);
    auto align_before = snapshot(model.params(), "aligner.");
    auto dec_before = snapshot(model.params(), "decoder.");
    StepLosses losses = trainer.train_step(batch_of(utts, 4));
    CHECK(losses.align == 0.0);
    CHECK(losses.dec > 0);
    CHECK(snapshot(model.params(), "aligner.") == align_before);
    CHECK(snapshot(model.params(), "decoder.") != dec_before);
  }

  SUBCASE("frozen without an aligner is a configuration error") {
    Model model = make_model(tiny_model(Variant::NoVisual), 1);
    TrainConfig frozen = tc;
    frozen.stage = Stage::Frozen;
    CHECK_THROWS_AS(Trainer(model, frozen), ConfigError);
  }

  SUBCASE("a poisoned parameter aborts the step without side effects") {
    Model model = make_model(tiny_model(Variant::Full), 1);
    Trainer trainer(model, tc);
    model.decoder.phoneme_table.v()[0] = std::numeric_limits<real>::quiet_NaN();
    auto before = snapshot(model.params(), "decoder.h_in");
    CHECK_THROWS_AS(trainer.train_step(batch_of(utts, 4)), NumericError);
    CHECK(snapshot(model.params(), "decoder.h_in") == before);
    CHECK(trainer.step_count() == 0);
  }
}

TEST_CASE("top-k sampling") {
  SUBCASE("k = 1 is a pure argmax and draws nothing") {
    Rng rng(9);
    const std::string before = rng.state();
    std::vector<real> logits = {static_cast<real>(0.5), static_cast<real>(2.0),
                                static_cast<real>(2.0)};
    CHECK(top_k_sample(logits, SamplerConfig{1, 1.0}, rng) == 1);  // tie: lowest id
    CHECK(rng.state() == before);
  }

  SUBCASE("the sampling distribution is exact on two logits") {
    std::vector<real> logits = {static_cast<real>(std::log(3.0)), 0};
    std::vector<double> p = top_k_probs(logits, 2, 1.0);
    REQUIRE(p.size() == 2);
    CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-6));
  }

  SUBCASE("ids outside the kept set get zero probability") {
    std::vector<real> logits = {5, 1, 0, -1};
    std::vector<double> p = top_k_probs(logits, 2, 1.0);
    CHECK(p[2] == 0.0);
    CHECK(p[3] == 0.0);
    CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
      const int id = top_k_sample(logits, SamplerConfig{2, 1.0}, rng);
      CHECK(id <= 1);
    }
  }

  SUBCASE("a cold temperature collapses onto the argmax") {
    std::vector<real> logits = {static_cast<real>(0.5), static_cast<real>(0.1),
                                static_cast<real>(0.2)};
    std::vector<double> p = top_k_probs(logits, 3, 1e-6);
    CHECK(p[0] >= 1.0 - 1e-9);
  }

  SUBCASE("k past the vocabulary size is clamped") {
    std::vector<real> logits = {0, 0};
    std::vector<double> p = top_k_probs(logits, 99, 1.0);
    CHECK(p[0] == doctest::Approx(0.5));
    Rng rng(5);
    CHECK_NOTHROW(top_k_sample(logits, SamplerConfig{99, 1.0}, rng));
  }

  SUBCASE("bad sampler settings and values are rejected") {
    Rng rng(6);
    std::vector<real> logits = {1, 2};
    CHECK_THROWS_AS(top_k_sample(logits, SamplerConfig{0, 1.0}, rng), ConfigError);
    CHECK_THROWS_AS(top_k_sample(logits, SamplerConfig{2, 0.0}, rng), ConfigError);
    CHECK_THROWS_AS(top_k_sample({}, SamplerConfig{1, 1.0}, rng), ShapeError);
    std::vector<real> inf_logits = {1, std::numeric_limits<real>::infinity()};
    CHECK_THROWS_AS(top_k_sample(inf_logits, SamplerConfig{1, 1.0}, rng), NumericError);
  }
}

TEST_CASE("generation honours the length contract of each variant") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  Utterance utt = gen_utterance(21, corpus, tables);

  SUBCASE("fixed length emits one frame per phoneme step") {
    Model model = make_model(tiny_model(Variant::Full), 2);
    GenerateOptions opts;
    opts.sampler.k = 4;
    Rng rng(3);
    TokenGrid gen = generate(model, utt.expansion.ids, nullptr, utt.reference, opts, rng);
    CHECK(gen.t_s == static_cast<int>(utt.expansion.ids.size()));
    CHECK(gen.n_q == corpus.n_q);
    for (int tok : gen.tokens) {
      CHECK(tok >= 0);
      CHECK(tok < corpus.codebook_size);  // stop is unreachable here
    }
    Rng rng2(3);
    TokenGrid again = generate(model, utt.expansion.ids, nullptr, utt.reference, opts, rng2);
    CHECK(again == gen);
    Rng rng3(4);
    TokenGrid other = generate(model, utt.expansion.ids, nullptr, utt.reference, opts, rng3);
    CHECK(other.t_s == gen.t_s);
  }

  SUBCASE("stop-token generation stays within the frame budget") {
    Model model = make_model(tiny_model(Variant::NoVisual), 2);
    GenerateOptions opts;
    opts.fixed_length = false;
    opts.max_frames = 6;
    opts.sampler.k = 8;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      Rng rng(seed);
      TokenGrid gen = generate(model, utt.phonemes.ids, nullptr, utt.reference, opts, rng);
      CHECK(gen.t_s >= 1);
      CHECK(gen.t_s <= 6);
      for (int tok : gen.tokens) CHECK(tok < corpus.codebook_size);
    }
  }

  SUBCASE("the lip prefix variant consumes lip frames") {
    Model model = make_model(tiny_model(Variant::VisualPrefix), 2);
    GenerateOptions opts;
    opts.fixed_length = false;
    opts.max_frames = 4;
    Rng rng(5);
    TokenGrid gen = generate(model, utt.phonemes.ids, &utt.lips, utt.reference, opts, rng);
    CHECK(gen.t_s >= 1);
    CHECK(gen.t_s <= 4);
  }

  SUBCASE("budget and context violations throw") {
    Model model = make_model(tiny_model(Variant::NoVisual), 2);
    GenerateOptions opts;
    opts.fixed_length = false;
    opts.max_frames = 0;
    Rng rng(6);
    CHECK_THROWS_AS(generate(model, utt.phonemes.ids, nullptr, utt.reference, opts, rng),
                    ConfigError);
    opts.max_frames = 1000;
    CHECK_THROWS_AS(generate(model, utt.phonemes.ids, nullptr, utt.reference, opts, rng),
                    ShapeError);
  }
}

TEST_CASE("checkpoints round-trip bit for bit") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  std::vector<Utterance> utts = gen_corpus(23, 10, corpus, tables);

  Model model = make_model(tiny_model(Variant::Full), 6);
  TrainConfig tc;
  tc.batch_size = 2;
  tc.steps = 4;
  Trainer trainer(model, tc);
  trainer.run(utts, 4);

  const fs::path p1 = temp_file("ck1.bin");
  const fs::path p2 = temp_file("ck2.bin");
  write_checkpoint(p1.string(), model, &trainer);

  Checkpoint ck = read_checkpoint(p1.string());
  CHECK(ck.step == 4);
  CHECK(ck.model_cfg.variant == Variant::Full);
  CHECK(ck.train_cfg.batch_size == 2);

  Model restored = model_from_checkpoint(ck);
  ParamSet a = model.params(), b = restored.params();
  REQUIRE(a.items.size() == b.items.size());
  for (size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].first == b.items[i].first);
    CHECK(a.items[i].second.v() == b.items[i].second.v());
  }

  Trainer resumed(restored, ck.train_cfg);
  restore_trainer(ck, resumed);
  CHECK(resumed.step_count() == 4);
  CHECK(resumed.rng_state() == trainer.rng_state());
  write_checkpoint(p2.string(), restored, &resumed);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK_FALSE(b1.empty());
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const fs::path path = temp_file("ck_bad.bin");
  CHECK_THROWS_AS(read_checkpoint((path / "missing").string()), FormatError);

  Model model = make_model(tiny_model(Variant::NoVisual), 1);
  write_checkpoint(path.string(), model, nullptr);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(0);
  f.write("XXXX", 4);  // clobber the magic
  f.close();
  CHECK_THROWS_AS(read_checkpoint(path.string()), FormatError);

  write_checkpoint(path.string(), model, nullptr);
  fs::resize_file(path, fs::file_size(path) - 16);  // drop the array tail
  CHECK_THROWS_AS(read_checkpoint(path.string()), FormatError);
  fs::remove(path);
}

TEST_CASE("a resumed run reproduces straight-through training exactly") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  std::vector<Utterance> utts = gen_corpus(29, 16, corpus, tables);
  TrainConfig tc;
  tc.batch_size = 2;
  tc.lr = 1e-3;

  Model straight = make_model(tiny_model(Variant::Full), 8);
  Trainer straight_tr(straight, tc);
  straight_tr.run(utts, 20);

  Model half = make_model(tiny_model(Variant::Full), 8);
  Trainer half_tr(half, tc);
  half_tr.run(utts, 10);
  const fs::path path = temp_file("ck_resume.bin");
  write_checkpoint(path.string(), half, &half_tr);

  Checkpoint ck = read_checkpoint(path.string());
  Model resumed = model_from_checkpoint(ck);
  Trainer resumed_tr(resumed, ck.train_cfg);
  restore_trainer(ck, resumed_tr);
  resumed_tr.run(utts, 10);
  CHECK(resumed_tr.step_count() == 20);

  ParamSet a = straight.params(), b = resumed.params();
  REQUIRE(a.items.size() == b.items.size());
  for (size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].second.v() == b.items[i].second.v());
  }
  fs::remove(path);
}

TEST_CASE("held-out losses are finite and variant aware") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  std::vector<Utterance> utts = gen_corpus(31, 6, corpus, tables);

  Model full = make_model(tiny_model(Variant::Full), 2);
  HeldoutLosses hl = heldout_losses(full, utts);
  CHECK(hl.align > 0);
  CHECK(hl.dec > 0);
  CHECK(std::isfinite(hl.align));
  CHECK(std::isfinite(hl.dec));

  Model no_visual = make_model(tiny_model(Variant::NoVisual), 2);
  HeldoutLosses nv = heldout_losses(no_visual, utts);
  CHECK(nv.align == 0.0);
  CHECK(nv.dec > 0);

  CHECK_THROWS_AS(heldout_losses(full, {}), ConfigError);
}

TEST_CASE("per-utterance scoring of a generated grid") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  Utterance utt = gen_utterance(37, corpus, tables);

  UttEval perfect = evaluate_generated(utt, utt.target, &utt.expansion.ids, tables, corpus);
  CHECK(perfect.token_accuracy == doctest::Approx(1.0));
  CHECK(perfect.speaker_accuracy == doctest::Approx(1.0));
  CHECK(perfect.frame_accuracy == doctest::Approx(1.0));
  CHECK(perfect.mcd == doctest::Approx(0.0));
  CHECK(perfect.dur_err == doctest::Approx(0.0));
  CHECK(perfect.t_gen == utt.target.t_s);

  // one duplicated frame: warping still matches, the length penalty shows up
  TokenGrid longer = utt.target;
  longer.t_s += 1;
  for (int i = 0; i < longer.n_q; ++i) {
    longer.tokens.push_back(utt.target.at(utt.target.t_s - 1, i));
  }
  UttEval dup = evaluate_generated(utt, longer, nullptr, tables, corpus);
  CHECK(dup.mcd == doctest::Approx(0.0));
  CHECK(dup.mcd_sl >= dup.mcd);
  CHECK(dup.dur_err > 0.0);
  CHECK(dup.token_accuracy == doctest::Approx(1.0));  // prefix comparison
  CHECK(dup.frame_accuracy == doctest::Approx(-1.0));
}

TEST_CASE("evaluation aggregates per-utterance rows") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  std::vector<Utterance> utts = gen_corpus(41, 5, corpus, tables);

  Model full = make_model(tiny_model(Variant::Full), 9);
  SamplerConfig sampler;
  sampler.k = 1;
  EvalSummary s = evaluate(full, utts, tables, sampler, 11);
  CHECK(s.count == 5);
  CHECK(s.has_aligner);
  REQUIRE(s.rows.size() == 5);
  CHECK(s.duration_err == doctest::Approx(0.0));  // expansion sets the length
  for (const UttEval& row : s.rows) {
    CHECK(row.t_gen == row.t_true);
    CHECK(row.frame_accuracy >= 0.0);
    CHECK(row.token_accuracy >= 0.0);
    CHECK(row.token_accuracy <= 1.0);
    CHECK(row.mcd_sl >= row.mcd - 1e-12);
    CHECK(std::isfinite(row.mcd));
  }
  CHECK(s.align_loss_per_frame > 0);
  CHECK(s.dec_loss_per_token > 0);

  EvalSummary again = evaluate(full, utts, tables, sampler, 11);
  CHECK(again.mcd_dtw == doctest::Approx(s.mcd_dtw));

  Model no_visual = make_model(tiny_model(Variant::NoVisual), 9);
  EvalSummary nv = evaluate(no_visual, utts, tables, sampler, 11);
  CHECK_FALSE(nv.has_aligner);
  CHECK(nv.rows[0].frame_accuracy == doctest::Approx(-1.0));
}

TEST_CASE("evaluation rows serialize to csv") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  std::vector<Utterance> utts = gen_corpus(43, 3, corpus, tables);
  Model model = make_model(tiny_model(Variant::NoVisual), 1);
  EvalSummary s = evaluate(model, utts, tables, SamplerConfig{1, 1.0}, 2);

  const fs::path path = temp_file("eval.csv");
  write_eval_csv(path.string(), s);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "id,t_gen,t_true,alignment_frame_accuracy,token_accuracy,speaker_token_accuracy,"
        "mcd_dtw,mcd_dtw_sl,duration_error");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(line.find("utt_") == 0);
    // no aligner: the frame accuracy field stays empty
    CHECK(line.find(",,") != std::string::npos);
  }
  CHECK(rows == 3);
  fs::remove(path);
}

TEST_CASE("losses trend down over a short run") {
  CorpusConfig corpus = tiny_corpus();
  CorpusTables tables = make_tables(corpus);
  std::vector<Utterance> utts = gen_corpus(47, 60, corpus, tables);

  Model model = make_model(tiny_model(Variant::Full), 12);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  Trainer trainer(model, tc);
  std::vector<StepLosses> log;
  trainer.run(utts, 150, &log);
  REQUIRE(log.size() == 150);

  auto mean_over = [&](size_t begin, size_t end, bool dec) {
    double acc = 0;
    for (size_t i = begin; i < end; ++i) acc += dec ? log[i].dec : log[i].align;
    return acc / static_cast<double>(end - begin);
  };
  CHECK(mean_over(120, 150, true) < mean_over(0, 30, true));
  CHECK(mean_over(120, 150, false) < mean_over(0, 30, false));
}
