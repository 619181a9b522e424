#include "vslm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vslm {

double frame_alignment_accuracy(const std::vector<int>& predicted,
                                const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw ShapeError("frame_alignment_accuracy: length mismatch");
  }
  size_t hits = 0;
  for (size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double euclidean_frame_cost(const double* a, const double* b, int dim) {
  double s = 0;
  for (int i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double mcd_frame_cost(const double* a, const double* b, int dim) {
  double s = 0;
  for (int i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return 10.0 / std::log(10.0) * std::sqrt(2.0 * s);
}

DtwResult dtw_distance(const std::vector<double>& x, int tx,
                       const std::vector<double>& y, int ty, int dim,
                       const FrameCost& cost) {
  if (tx < 1 || ty < 1 || dim < 1) throw ShapeError("dtw_distance: empty input");
  if (x.size() != static_cast<size_t>(tx) * dim || y.size() != static_cast<size_t>(ty) * dim) {
    throw ShapeError("dtw_distance: buffer size does not match frame counts");
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(static_cast<size_t>(tx) * ty, inf);
  auto frame = [&](const std::vector<double>& seq, int t) {
    return seq.data() + static_cast<size_t>(t) * dim;
  };
  for (int i = 0; i < tx; ++i) {
    for (int j = 0; j < ty; ++j) {
      const double c = cost(frame(x, i), frame(y, j), dim);
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = inf;
        if (i > 0 && j > 0) best = std::min(best, d[static_cast<size_t>(i - 1) * ty + j - 1]);
        if (i > 0) best = std::min(best, d[static_cast<size_t>(i - 1) * ty + j]);
        if (j > 0) best = std::min(best, d[static_cast<size_t>(i) * ty + j - 1]);
      }
      d[static_cast<size_t>(i) * ty + j] = c + best;
    }
  }

  DtwResult r;
  r.total_cost = d[static_cast<size_t>(tx - 1) * ty + ty - 1];
  int i = tx - 1, j = ty - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    const double diag = (i > 0 && j > 0) ? d[static_cast<size_t>(i - 1) * ty + j - 1] : inf;
    const double up = i > 0 ? d[static_cast<size_t>(i - 1) * ty + j] : inf;
    const double left = j > 0 ? d[static_cast<size_t>(i) * ty + j - 1] : inf;
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

static double mcd_of_features(const std::vector<double>& fx, int tx,
                              const std::vector<double>& fy, int ty, int dim) {
  DtwResult r = dtw_distance(fx, tx, fy, ty, dim, mcd_frame_cost);
  return r.total_cost / static_cast<double>(r.path.size());
}

double mcd_dtw(const TokenGrid& gen, const TokenGrid& truth, const CorpusTables& tables) {
  const std::vector<double> fg = synth_decode(gen, tables);
  const std::vector<double> ft = synth_decode(truth, tables);
  return mcd_of_features(fg, gen.t_s, ft, truth.t_s, tables.feat_dim);
}

double mcd_dtw_sl(const TokenGrid& gen, const TokenGrid& truth, const CorpusTables& tables) {
  const double ratio = static_cast<double>(std::max(gen.t_s, truth.t_s)) /
                       static_cast<double>(std::min(gen.t_s, truth.t_s));
  return mcd_dtw(gen, truth, tables) * ratio;
}

double token_accuracy(const TokenGrid& gen, const TokenGrid& oracle) {
  if (gen.t_s != oracle.t_s || gen.n_q != oracle.n_q || gen.t_s < 1) {
    throw ShapeError("token_accuracy: grid shapes differ");
  }
  size_t hits = 0;
  for (size_t i = 0; i < gen.tokens.size(); ++i) hits += gen.tokens[i] == oracle.tokens[i];
  return static_cast<double>(hits) / static_cast<double>(gen.tokens.size());
}

double speaker_token_accuracy(const TokenGrid& gen, const std::vector<int>& frame_phonemes,
                              int speaker, const CorpusConfig& cfg) {
  if (static_cast<size_t>(gen.t_s) != frame_phonemes.size() || gen.t_s < 1) {
    throw ShapeError("speaker_token_accuracy: one phoneme per frame required");
  }
  if (speaker < 0 || speaker >= cfg.n_speakers) {
    throw std::out_of_range("speaker_token_accuracy: speaker out of range");
  }
  size_t hits = 0;
  for (int t = 0; t < gen.t_s; ++t) {
    hits += gen.at(t, 0) == synth_codec(frame_phonemes[t], speaker, 0, cfg);
  }
  return static_cast<double>(hits) / static_cast<double>(gen.t_s);
}

double duration_error(int gen_len, int truth_len) {
  if (gen_len < 1 || truth_len < 1) throw ShapeError("duration_error: empty sequence");
  return std::abs(gen_len - truth_len) / static_cast<double>(truth_len);
}

}  // namespace vslm
