// Text-video aligner: the two encoders, the column-stochastic similarity,
// argmax expansion, the alignment loss, and a small end-to-end training run.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vslm/aligner.hpp"
#include "vslm/metrics.hpp"
#include "vslm/optim.hpp"

using namespace vslm;

namespace {

AlignerConfig small_cfg() {
  AlignerConfig cfg;
  cfg.vocab_p = 10;
  cfg.lip_dim = 6;
  cfg.dim_h = 16;
  cfg.heads = 2;
  return cfg;
}

LipEmbeds random_lips(Rng& rng, int t_v, int dim) {
  LipEmbeds lips;
  lips.t_v = t_v;
  lips.dim = dim;
  lips.frames.resize(static_cast<size_t>(t_v) * dim);
  for (float& f : lips.frames) f = static_cast<float>(rng.normal());
  return lips;
}

SimilarityMatrix sim_from_probs(const std::vector<int>& shape, std::vector<real> probs) {
  SimilarityMatrix sim;
  sim.probs = Tensor::from(shape, std::move(probs));
  sim.scores = sim.probs;  // expansion never reads the scores
  return sim;
}

}  // namespace

TEST_CASE("encoders produce one row per input step, deterministically") {
  AlignerConfig cfg = small_cfg();
  Rng rng(3);
  AlignerParams params = make_aligner(cfg, rng);
  GradTape tape(false);

  PhonemeSeq p{{1, 4, 4, 9}};
  Tensor pe = encode_phonemes(tape, p, params, cfg);
  CHECK(pe.rows() == 4);
  CHECK(pe.cols() == cfg.dim_h);

  Rng lip_rng(4);
  LipEmbeds lips = random_lips(lip_rng, 7, cfg.lip_dim);
  Tensor le = encode_lips(tape, lips, params, cfg);
  CHECK(le.rows() == 7);
  CHECK(le.cols() == cfg.dim_h);

  Tensor pe2 = encode_phonemes(tape, p, params, cfg);
  for (size_t i = 0; i < pe.numel(); ++i) CHECK(pe.v()[i] == pe2.v()[i]);
}

TEST_CASE("position encoding distinguishes the same ids in different order") {
  AlignerConfig cfg = small_cfg();
  Rng rng(5);
  AlignerParams params = make_aligner(cfg, rng);
  GradTape tape(false);
  Tensor ab = encode_phonemes(tape, PhonemeSeq{{2, 7}}, params, cfg);
  Tensor ba = encode_phonemes(tape, PhonemeSeq{{7, 2}}, params, cfg);
  // row 0 of [a, b] against row 1 of [b, a]: same id, different position
  double diff = 0;
  for (int c = 0; c < cfg.dim_h; ++c) {
    diff = std::max(diff, std::abs(static_cast<double>(ab.at(0, c)) - ba.at(1, c)));
  }
  CHECK(diff > 1e-4);
}

TEST_CASE("encoder input validation") {
  AlignerConfig cfg = small_cfg();
  Rng rng(6);
  AlignerParams params = make_aligner(cfg, rng);
  GradTape tape(false);
  CHECK_THROWS_AS(encode_phonemes(tape, PhonemeSeq{{}}, params, cfg), ShapeError);
  CHECK_THROWS_AS(encode_phonemes(tape, PhonemeSeq{{cfg.vocab_p}}, params, cfg),
                  std::out_of_range);
  Rng lip_rng(7);
  LipEmbeds bad = random_lips(lip_rng, 3, cfg.lip_dim + 1);
  CHECK_THROWS_AS(encode_lips(tape, bad, params, cfg), ShapeError);
  LipEmbeds empty;
  empty.dim = cfg.lip_dim;
  CHECK_THROWS_AS(encode_lips(tape, empty, params, cfg), ShapeError);
}

TEST_CASE("similarity columns are distributions over phoneme positions") {
  GradTape tape(false);
  Rng rng(8);
  std::vector<real> pv(5 * 16), lv(9 * 16);
  for (real& v : pv) v = static_cast<real>(rng.normal());
  for (real& v : lv) v = static_cast<real>(rng.normal());
  SimilarityMatrix sim = similarity(tape, Tensor::from({5, 16}, std::move(pv)),
                                    Tensor::from({9, 16}, std::move(lv)));
  CHECK(sim.probs.rows() == 5);
  CHECK(sim.probs.cols() == 9);
  for (int j = 0; j < 9; ++j) {
    double col = 0;
    for (int i = 0; i < 5; ++i) {
      col += sim.probs.at(i, j);
      CHECK(sim.probs.at(i, j) >= 0);
    }
    CHECK(col == doctest::Approx(1.0).epsilon(1e-6));
  }

  CHECK_THROWS_AS(similarity(tape, Tensor::zeros({2, 4}), Tensor::zeros({3, 6})), ShapeError);
}

TEST_CASE("a single phoneme takes every frame with probability one") {
  GradTape tape(false);
  SimilarityMatrix sim = similarity(tape, Tensor::from({1, 8}, std::vector<real>(8, 1)),
                                    Tensor::from({5, 8}, std::vector<real>(40, 1)));
  for (int j = 0; j < 5; ++j) CHECK(sim.probs.at(0, j) == doctest::Approx(1.0));
}

TEST_CASE("all-zero encodings spread columns uniformly") {
  GradTape tape(false);
  SimilarityMatrix sim = similarity(tape, Tensor::zeros({3, 8}), Tensor::zeros({4, 8}));
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 3; ++i) {
      CHECK(sim.probs.at(i, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("two-phoneme similarity matches the frozen softmax value") {
  GradTape tape(false);
  Tensor p_enc = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor l_enc = Tensor::from({1, 2}, {2, 0});
  SimilarityMatrix sim = similarity(tape, p_enc, l_enc);
  // score column is (2 / sqrt 2, 0) = (sqrt 2, 0)
  CHECK(sim.scores.at(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(2e-7));
  CHECK(sim.probs.at(0, 0) == doctest::Approx(0.8044296825069569).epsilon(2e-5));
  CHECK(sim.probs.at(1, 0) == doctest::Approx(0.1955703174930431).epsilon(2e-5));
}

TEST_CASE("expansion picks the argmax row of each frame column") {
  PhonemeSeq p{{4, 9}};
  SimilarityMatrix sim = sim_from_probs(
      {2, 3}, {static_cast<real>(0.7), static_cast<real>(0.2), static_cast<real>(0.4),
               static_cast<real>(0.3), static_cast<real>(0.8), static_cast<real>(0.6)});
  CHECK(expand(p, sim).ids == std::vector<int>{4, 9, 9});

  SimilarityMatrix tie = sim_from_probs({2, 1}, {static_cast<real>(0.5), static_cast<real>(0.5)});
  CHECK(expand(p, tie).ids == std::vector<int>{4});  // ties keep the earliest

  CHECK_THROWS_AS(expand(PhonemeSeq{{1, 2, 3}}, sim), ShapeError);
}

TEST_CASE("expansion covers every frame and ignores positive rescaling") {
  AlignerConfig cfg = small_cfg();
  Rng rng(11);
  AlignerParams params = make_aligner(cfg, rng);
  GradTape tape(false);
  for (int trial = 0; trial < 50; ++trial) {
    const int t_p = 1 + static_cast<int>(rng.uniform_int(6));
    const int t_v = 1 + static_cast<int>(rng.uniform_int(12));
    PhonemeSeq p;
    p.ids.resize(t_p);
    for (int& id : p.ids) id = static_cast<int>(rng.uniform_int(cfg.vocab_p));
    LipEmbeds lips = random_lips(rng, t_v, cfg.lip_dim);

    Tensor p_enc = encode_phonemes(tape, p, params, cfg);
    Tensor l_enc = encode_lips(tape, lips, params, cfg);
    SimilarityMatrix sim = similarity(tape, p_enc, l_enc);
    ExpandedPhonemes out = expand(p, sim);
    REQUIRE(static_cast<int>(out.ids.size()) == t_v);
    for (int id : out.ids) {
      CHECK(std::count(p.ids.begin(), p.ids.end(), id) > 0);
    }

    SimilarityMatrix scaled = similarity(tape, scale(tape, p_enc, static_cast<real>(2.5)), l_enc);
    CHECK(expand(p, scaled).ids == out.ids);
  }
}

TEST_CASE("alignment loss rewards mass on the true positions") {
  GradTape tape(false);
  // 50 on the target row of each column: near-zero loss
  SimilarityMatrix sharp;
  sharp.scores = Tensor::from({2, 3}, {50, 0, 50, 0, 50, 0});
  sharp.probs = sharp.scores;
  CHECK(alignment_loss(tape, sharp, {0, 1, 0}).item() < 1e-4);

  SimilarityMatrix flat;
  flat.scores = Tensor::zeros({4, 10});
  flat.probs = flat.scores;
  const double loss = alignment_loss(tape, flat, std::vector<int>(10, 2)).item();
  CHECK(loss == doctest::Approx(13.8629436111989061).epsilon(1e-3));

  CHECK_THROWS_AS(alignment_loss(tape, flat, {0, 1}), ShapeError);
  CHECK_THROWS_AS(alignment_loss(tape, flat, std::vector<int>(10, 4)), std::out_of_range);
}

TEST_CASE("the aligner learns a noiseless synthetic corpus") {
  CorpusConfig corpus;
  corpus.noise_sigma = 0.0;
  corpus.len_max = 8;
  CorpusTables tables = make_tables(corpus);
  std::vector<Utterance> utts = gen_corpus(31, 200, corpus, tables);

  AlignerConfig cfg;
  cfg.vocab_p = corpus.vocab_p;
  cfg.lip_dim = corpus.lip_dim;
  cfg.dim_h = 32;
  cfg.heads = 2;
  Rng init(1);
  AlignerParams params = make_aligner(cfg, init);
  ParamSet ps;
  register_aligner_params(ps, "aligner", params);
  AdamWConfig opt_cfg;
  opt_cfg.lr = static_cast<real>(1e-3);
  AdamW opt(ps.tensors(), opt_cfg);

  auto batch_loss = [&](Rng& order, bool learn) {
    GradTape tape(learn);
    Tensor total = Tensor::scalar(0);
    const int batch = 8;
    for (int b = 0; b < batch; ++b) {
      const Utterance& u = utts[order.uniform_int(utts.size())];
      SimilarityMatrix sim = similarity(tape, encode_phonemes(tape, u.phonemes, params, cfg),
                                        encode_lips(tape, u.lips, params, cfg));
      total = add(tape, total, alignment_loss(tape, sim, u.expansion.positions));
    }
    total = scale(tape, total, static_cast<real>(1.0 / batch));
    if (learn) {
      tape.backward(total);
      opt.step();
      opt.zero_grad();
    }
    return total.item();
  };

  Rng order(2);
  double first = 0, last = 0;
  const int steps = 400;
  for (int s = 0; s < steps; ++s) {
    const double loss = batch_loss(order, true);
    if (s < 20) first += loss / 20;
    if (s >= steps - 20) last += loss / 20;
  }
  CHECK(last < 0.1 * first);

  double acc = 0;
  const int n_eval = 50;
  GradTape frozen(false);
  for (int i = 0; i < n_eval; ++i) {
    const Utterance& u = utts[i];
    SimilarityMatrix sim = similarity(frozen, encode_phonemes(frozen, u.phonemes, params, cfg),
                                      encode_lips(frozen, u.lips, params, cfg));
    acc += frame_alignment_accuracy(expand(u.phonemes, sim).ids, u.expansion.ids) / n_eval;
  }
  CHECK(acc > 0.95);
}
