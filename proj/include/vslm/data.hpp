#pragma once

#include <cstdint>
#include <string>

#include "vslm/common.hpp"

namespace vslm {

// Synthetic corpus geometry and generation knobs. Field names double as the
// JSON keys in run configs and dataset headers.
struct CorpusConfig {
  int vocab_p = 24;
  int n_speakers = 4;
  int n_q = 4;
  int codebook_size = 64;  // V
  int lip_dim = 32;
  int fps = 25;
  int dur_min = 1;  // frames per phoneme, inclusive range
  int dur_max = 6;
  int len_min = 3;  // phonemes per utterance, inclusive range
  int len_max = 12;
  double noise_sigma = 0.1;
  int ref_frames = 12;
  int feat_dim = 16;  // synthetic decoder feature channels
  uint64_t feature_seed = 9001;
  // Nonzero: stored phoneme ids pass through a seeded derangement while lips
  // and tokens keep following the original ids. This yields a corpus whose
  // id-to-acoustics convention differs from the default one, used as the
  // out-of-domain pretraining corpus in ablations.
  uint64_t phoneme_remap_seed = 0;

  void validate() const;  // throws ConfigError
};

struct PhonemeSeq {
  std::vector<int> ids;  // each in [0, vocab_p)
};

// Row-major [t_v, dim] frames at a nominal fps.
struct LipEmbeds {
  int t_v = 0;
  int dim = 0;
  int fps = 25;
  std::vector<float> frames;
  const float* row(int t) const { return frames.data() + static_cast<size_t>(t) * dim; }
};

// Row-major [t_s, n_q] grid of codec tokens.
struct TokenGrid {
  int t_s = 0;
  int n_q = 0;
  std::vector<int> tokens;
  int at(int t, int level) const { return tokens[static_cast<size_t>(t) * n_q + level]; }
  int& at(int t, int level) { return tokens[static_cast<size_t>(t) * n_q + level]; }
  bool operator==(const TokenGrid& o) const = default;
};

// Frame-level alignment truth: for every video frame, the phoneme id spoken
// there and the position within the phoneme sequence it came from.
struct GroundTruthExpansion {
  std::vector<int> ids;
  std::vector<int> positions;
};

struct Utterance {
  std::string id;
  int speaker = 0;
  PhonemeSeq phonemes;
  std::vector<int> durations;
  GroundTruthExpansion expansion;
  LipEmbeds lips;
  TokenGrid target;
  TokenGrid reference;  // from a companion utterance of the same speaker
};

// Fixed per-corpus feature tables, a pure function of the config.
struct CorpusTables {
  int lip_dim = 0;
  int feat_dim = 0;
  int codebook_size = 0;
  std::vector<float> prototypes;   // [vocab_p, lip_dim], unit-norm rows
  std::vector<float> decode_vecs;  // [n_q, V, feat_dim]
  const float* prototype(int phoneme) const;
  const float* decode_vec(int level, int token) const;
};

CorpusTables make_tables(const CorpusConfig& cfg);

// Index map from the longer of the two sequences onto the shorter, monotone
// non-decreasing and surjective, by nearest-position rounding. Equal lengths
// give the identity map.
std::vector<int> align_rates(int speech_len, int video_len);

// Deterministic codec stand-in. Level 0 mixes phoneme and speaker; higher
// levels depend on the phoneme only.
int synth_codec(int phoneme, int speaker, int level, const CorpusConfig& cfg);

// Expands a token grid into a [t_s, feat_dim] row-major feature sequence by
// summing the per-level table vectors of each frame's tokens.
std::vector<double> synth_decode(const TokenGrid& grid, const CorpusTables& tables);

// Expansion of a phoneme sequence by per-phoneme durations.
GroundTruthExpansion expand_by_durations(const std::vector<int>& ids,
                                         const std::vector<int>& durations);

// Stored-id permutation for this config: identity when phoneme_remap_seed is
// zero, otherwise a seeded derangement.
std::vector<int> remap_table(const CorpusConfig& cfg);

Utterance gen_utterance(uint64_t seed, const CorpusConfig& cfg, const CorpusTables& tables);

// count utterances with per-item seeds derived from the corpus seed.
std::vector<Utterance> gen_corpus(uint64_t seed, int count, const CorpusConfig& cfg,
                                  const CorpusTables& tables);

void write_dataset(const std::string& path, const CorpusConfig& cfg, uint64_t seed,
                   const std::vector<Utterance>& utts);

struct Dataset {
  CorpusConfig config;
  uint64_t seed = 0;
  std::vector<Utterance> utts;
};

Dataset read_dataset(const std::string& path);

}  // namespace vslm
