#pragma once

#include <functional>
#include <utility>

#include "vslm/data.hpp"

namespace vslm {

// Fraction of frames where the predicted phoneme id equals the true one.
double frame_alignment_accuracy(const std::vector<int>& predicted,
                                const std::vector<int>& truth);

using FrameCost = std::function<double(const double*, const double*, int)>;

double euclidean_frame_cost(const double* a, const double* b, int dim);
// Mel-cepstral distortion form: (10 / ln 10) * sqrt(2 * sum of squared diffs).
double mcd_frame_cost(const double* a, const double* b, int dim);

struct DtwResult {
  double total_cost = 0.0;
  // (x index, y index) pairs from (0, 0) to (tx-1, ty-1) inclusive.
  std::vector<std::pair<int, int>> path;
};

// Classic boundary-anchored dynamic time warping with moves down, right, and
// diagonal. On ties the traceback prefers diagonal, then the x-advance.
DtwResult dtw_distance(const std::vector<double>& x, int tx,
                       const std::vector<double>& y, int ty, int dim,
                       const FrameCost& cost);

// Path-mean MCD over synthetically decoded features of the two grids.
double mcd_dtw(const TokenGrid& gen, const TokenGrid& truth, const CorpusTables& tables);
// mcd_dtw scaled by the length ratio max/min, penalizing duration mismatch.
double mcd_dtw_sl(const TokenGrid& gen, const TokenGrid& truth, const CorpusTables& tables);

// Fraction of equal entries between two grids of identical shape.
double token_accuracy(const TokenGrid& gen, const TokenGrid& oracle);

// Fraction of frames whose level-0 token carries the right speaker for the
// frame's true phoneme, i.e. equals synth_codec(phoneme, speaker, 0).
double speaker_token_accuracy(const TokenGrid& gen, const std::vector<int>& frame_phonemes,
                              int speaker, const CorpusConfig& cfg);

double duration_error(int gen_len, int truth_len);

}  // namespace vslm
