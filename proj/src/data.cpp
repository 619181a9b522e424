#include "vslm/data.hpp"

#include <cmath>
#include <fstream>

#include "vslm/config.hpp"

namespace vslm {

void CorpusConfig::validate() const {
  if (vocab_p < 2) throw ConfigError("corpus: vocab_p must be at least 2");
  if (n_speakers < 1) throw ConfigError("corpus: n_speakers must be positive");
  if (n_q < 1) throw ConfigError("corpus: n_q must be positive");
  if (codebook_size < 2) throw ConfigError("corpus: codebook_size must be at least 2");
  if (lip_dim < 1) throw ConfigError("corpus: lip_dim must be positive");
  if (fps < 1) throw ConfigError("corpus: fps must be positive");
  if (dur_min < 1 || dur_max < dur_min) throw ConfigError("corpus: bad duration range");
  if (len_min < 1 || len_max < len_min) throw ConfigError("corpus: bad length range");
  if (noise_sigma < 0) throw ConfigError("corpus: negative noise_sigma");
  if (ref_frames < 1) throw ConfigError("corpus: ref_frames must be positive");
  if (ref_frames > len_max * dur_max) {
    throw ConfigError("corpus: ref_frames exceeds the longest possible utterance");
  }
  if (feat_dim < 1) throw ConfigError("corpus: feat_dim must be positive");
}

const float* CorpusTables::prototype(int phoneme) const {
  return prototypes.data() + static_cast<size_t>(phoneme) * lip_dim;
}

const float* CorpusTables::decode_vec(int level, int token) const {
  if (token < 0 || token >= codebook_size) {
    throw std::out_of_range("decode_vec: token outside the codebook");
  }
  return decode_vecs.data() +
         (static_cast<size_t>(level) * codebook_size + token) * feat_dim;
}

CorpusTables make_tables(const CorpusConfig& cfg) {
  cfg.validate();
  CorpusTables t;
  t.lip_dim = cfg.lip_dim;
  t.feat_dim = cfg.feat_dim;
  t.codebook_size = cfg.codebook_size;

  Rng proto_rng(derive_seed(cfg.feature_seed, 0));
  t.prototypes.resize(static_cast<size_t>(cfg.vocab_p) * cfg.lip_dim);
  for (int p = 0; p < cfg.vocab_p; ++p) {
    float* row = t.prototypes.data() + static_cast<size_t>(p) * cfg.lip_dim;
    double norm_sq = 0;
    for (int c = 0; c < cfg.lip_dim; ++c) {
      row[c] = static_cast<float>(proto_rng.normal());
      norm_sq += static_cast<double>(row[c]) * row[c];
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
    for (int c = 0; c < cfg.lip_dim; ++c) row[c] *= inv;
  }

  Rng dec_rng(derive_seed(cfg.feature_seed, 1));
  t.decode_vecs.resize(static_cast<size_t>(cfg.n_q) * cfg.codebook_size * cfg.feat_dim);
  for (float& x : t.decode_vecs) x = static_cast<float>(dec_rng.normal());
  return t;
}

std::vector<int> align_rates(int speech_len, int video_len) {
  if (speech_len < 1 || video_len < 1) {
    throw ConfigError("align_rates: lengths must be positive");
  }
  const int longer = std::max(speech_len, video_len);
  const int shorter = std::min(speech_len, video_len);
  std::vector<int> map(longer);
  for (int i = 0; i < longer; ++i) {
    // round(i * shorter / longer) with half-down rounding, clamped
    const long long num = 2ll * i * shorter + longer - 1;
    map[i] = std::min<int>(static_cast<int>(num / (2ll * longer)), shorter - 1);
  }
  return map;
}

int synth_codec(int phoneme, int speaker, int level, const CorpusConfig& cfg) {
  if (phoneme < 0 || phoneme >= cfg.vocab_p) {
    throw std::out_of_range("synth_codec: phoneme out of range");
  }
  if (speaker < 0 || speaker >= cfg.n_speakers) {
    throw std::out_of_range("synth_codec: speaker out of range");
  }
  if (level < 0 || level >= cfg.n_q) {
    throw std::out_of_range("synth_codec: level out of range");
  }
  if (level == 0) {
    return (phoneme * cfg.n_speakers + speaker) % cfg.codebook_size;
  }
  // Odd multipliers stay coprime with the (power-of-two) codebook sizes used
  // in practice, spreading phonemes across the whole table.
  const int multiplier = 2 * level + 3;
  return (phoneme * multiplier + level) % cfg.codebook_size;
}

std::vector<double> synth_decode(const TokenGrid& grid, const CorpusTables& tables) {
  if (grid.t_s < 1) throw ShapeError("synth_decode: empty grid");
  std::vector<double> out(static_cast<size_t>(grid.t_s) * tables.feat_dim, 0.0);
  for (int t = 0; t < grid.t_s; ++t) {
    double* row = out.data() + static_cast<size_t>(t) * tables.feat_dim;
    for (int level = 0; level < grid.n_q; ++level) {
      const float* vec = tables.decode_vec(level, grid.at(t, level));
      for (int c = 0; c < tables.feat_dim; ++c) row[c] += vec[c];
    }
  }
  return out;
}

GroundTruthExpansion expand_by_durations(const std::vector<int>& ids,
                                         const std::vector<int>& durations) {
  if (ids.size() != durations.size()) {
    throw ShapeError("expand_by_durations: one duration per phoneme required");
  }
  GroundTruthExpansion g;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (durations[i] < 1) throw ConfigError("expand_by_durations: nonpositive duration");
    for (int k = 0; k < durations[i]; ++k) {
      g.ids.push_back(ids[i]);
      g.positions.push_back(static_cast<int>(i));
    }
  }
  return g;
}

std::vector<int> remap_table(const CorpusConfig& cfg) {
  std::vector<int> map(cfg.vocab_p);
  for (int i = 0; i < cfg.vocab_p; ++i) map[i] = i;
  if (cfg.phoneme_remap_seed == 0) return map;
  Rng rng(cfg.phoneme_remap_seed);
  while (true) {
    for (int i = cfg.vocab_p - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(i) + 1));
      std::swap(map[i], map[j]);
    }
    bool fixed_point = false;
    for (int i = 0; i < cfg.vocab_p; ++i) fixed_point = fixed_point || map[i] == i;
    if (!fixed_point) return map;
  }
}

static TokenGrid codec_grid(const std::vector<int>& frame_phonemes, int speaker,
                            const CorpusConfig& cfg) {
  TokenGrid grid;
  grid.t_s = static_cast<int>(frame_phonemes.size());
  grid.n_q = cfg.n_q;
  grid.tokens.reserve(static_cast<size_t>(grid.t_s) * cfg.n_q);
  for (int p : frame_phonemes) {
    for (int level = 0; level < cfg.n_q; ++level) {
      grid.tokens.push_back(synth_codec(p, speaker, level, cfg));
    }
  }
  return grid;
}

// Draw order is frozen: speaker, phoneme count, ids, durations, lip noise
// (frame-major), then companion draws for the reference. Changing it would
// silently change every seeded corpus.
Utterance gen_utterance(uint64_t seed, const CorpusConfig& cfg, const CorpusTables& tables) {
  cfg.validate();
  Rng rng(seed);
  Utterance utt;
  utt.speaker = static_cast<int>(rng.uniform_int(cfg.n_speakers));

  auto draw_phrase = [&](std::vector<int>& ids, std::vector<int>& durations) {
    const int t_p = cfg.len_min + static_cast<int>(rng.uniform_int(cfg.len_max - cfg.len_min + 1));
    ids.resize(t_p);
    durations.resize(t_p);
    for (int& id : ids) id = static_cast<int>(rng.uniform_int(cfg.vocab_p));
    for (int& d : durations) {
      d = cfg.dur_min + static_cast<int>(rng.uniform_int(cfg.dur_max - cfg.dur_min + 1));
    }
  };

  draw_phrase(utt.phonemes.ids, utt.durations);
  GroundTruthExpansion true_g = expand_by_durations(utt.phonemes.ids, utt.durations);
  const int t_v = static_cast<int>(true_g.ids.size());

  utt.lips.t_v = t_v;
  utt.lips.dim = cfg.lip_dim;
  utt.lips.fps = cfg.fps;
  utt.lips.frames.resize(static_cast<size_t>(t_v) * cfg.lip_dim);
  for (int t = 0; t < t_v; ++t) {
    const float* proto = tables.prototype(true_g.ids[t]);
    float* row = utt.lips.frames.data() + static_cast<size_t>(t) * cfg.lip_dim;
    for (int c = 0; c < cfg.lip_dim; ++c) {
      row[c] = proto[c] + static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
    }
  }

  utt.target = codec_grid(true_g.ids, utt.speaker, cfg);

  // Companion utterance of the same speaker; redraw until it is long enough
  // to cut a reference prompt from.
  std::vector<int> comp_ids, comp_durs;
  std::vector<int> comp_frames;
  while (true) {
    draw_phrase(comp_ids, comp_durs);
    comp_frames = expand_by_durations(comp_ids, comp_durs).ids;
    if (static_cast<int>(comp_frames.size()) >= cfg.ref_frames) break;
  }
  comp_frames.resize(cfg.ref_frames);
  utt.reference = codec_grid(comp_frames, utt.speaker, cfg);

  // Stored ids (and therefore the stored expansion) pass through the remap;
  // lips and tokens above were built from the true ids.
  const std::vector<int> remap = remap_table(cfg);
  for (int& id : utt.phonemes.ids) id = remap[id];
  utt.expansion = expand_by_durations(utt.phonemes.ids, utt.durations);
  return utt;
}

std::vector<Utterance> gen_corpus(uint64_t seed, int count, const CorpusConfig& cfg,
                                  const CorpusTables& tables) {
  if (count < 1) throw ConfigError("gen_corpus: count must be positive");
  std::vector<Utterance> utts;
  utts.reserve(count);
  char name[32];
  for (int i = 0; i < count; ++i) {
    Utterance u = gen_utterance(derive_seed(seed, static_cast<uint64_t>(i)), cfg, tables);
    std::snprintf(name, sizeof(name), "utt_%06d", i);
    u.id = name;
    utts.push_back(std::move(u));
  }
  return utts;
}

static nlohmann::json grid_to_json(const TokenGrid& grid) {
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < grid.t_s; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int i = 0; i < grid.n_q; ++i) row.push_back(grid.at(t, i));
    rows.push_back(std::move(row));
  }
  return rows;
}

static TokenGrid grid_from_json(const nlohmann::json& rows, int n_q) {
  TokenGrid grid;
  grid.n_q = n_q;
  grid.t_s = static_cast<int>(rows.size());
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != n_q) {
      throw FormatError("dataset: token row width differs from n_q");
    }
    for (const auto& tok : row) grid.tokens.push_back(tok.get<int>());
  }
  return grid;
}

void write_dataset(const std::string& path, const CorpusConfig& cfg, uint64_t seed,
                   const std::vector<Utterance>& utts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("dataset: cannot open " + path + " for writing");
  nlohmann::json header = {
      {"format", "vslm-dataset"},
      {"version", 1},
      {"seed", seed},
      {"count", utts.size()},
      {"config", corpus_to_json(cfg)},
  };
  out << header.dump() << "\n";
  for (const Utterance& u : utts) {
    nlohmann::json line = {
        {"id", u.id},
        {"speaker", u.speaker},
        {"phonemes", u.phonemes.ids},
        {"durations", u.durations},
        {"target", grid_to_json(u.target)},
        {"reference", grid_to_json(u.reference)},
        {"lips", base64_encode(reinterpret_cast<const uint8_t*>(u.lips.frames.data()),
                               u.lips.frames.size() * sizeof(float))},
    };
    out << line.dump() << "\n";
  }
  if (!out) throw FormatError("dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset: missing header line");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "vslm-dataset") {
    throw FormatError("dataset: unrecognized header");
  }
  if (header.value("version", 0) != 1) throw FormatError("dataset: unsupported version");

  Dataset ds;
  try {
    ds.config = corpus_from_json(header.at("config"));
    ds.config.validate();
    ds.seed = header.value("seed", 0ull);
    const size_t count = header.value("count", size_t{0});

    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw FormatError("dataset: malformed utterance line");
      Utterance u;
      u.id = j.at("id").get<std::string>();
      u.speaker = j.at("speaker").get<int>();
      u.phonemes.ids = j.at("phonemes").get<std::vector<int>>();
      u.durations = j.at("durations").get<std::vector<int>>();
      u.expansion = expand_by_durations(u.phonemes.ids, u.durations);
      u.target = grid_from_json(j.at("target"), ds.config.n_q);
      u.reference = grid_from_json(j.at("reference"), ds.config.n_q);
      std::vector<uint8_t> raw = base64_decode(j.at("lips").get<std::string>());
      if (raw.size() != static_cast<size_t>(u.expansion.ids.size()) * ds.config.lip_dim * sizeof(float)) {
        throw FormatError("dataset: lip frame byte count mismatch for " + u.id);
      }
      u.lips.t_v = static_cast<int>(u.expansion.ids.size());
      u.lips.dim = ds.config.lip_dim;
      u.lips.fps = ds.config.fps;
      u.lips.frames.resize(raw.size() / sizeof(float));
      std::memcpy(u.lips.frames.data(), raw.data(), raw.size());
      ds.utts.push_back(std::move(u));
    }
    if (count != ds.utts.size()) throw FormatError("dataset: utterance count mismatch");
  } catch (const ConfigError& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: missing or mistyped field: ") + e.what());
  }
  return ds;
}

}  // namespace vslm
