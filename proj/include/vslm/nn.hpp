#pragma once

#include <string>

#include "vslm/tensor.hpp"

namespace vslm {

// Ordered name -> tensor registry. Registration order is the canonical
// parameter order used by optimizers and checkpoints.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;
  void add(const std::string& name, const Tensor& t);
  Tensor find(const std::string& name) const;  // throws if absent
  std::vector<Tensor> tensors() const;
};

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

Linear make_linear(int in, int out, Rng& rng, double w_std = 0.02);
Tensor linear(GradTape& tape, const Tensor& x, const Linear& lin);
void register_linear(ParamSet& ps, const std::string& prefix, const Linear& lin);

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

LayerNormParams make_layer_norm(int dim);
Tensor apply_layer_norm(GradTape& tape, const Tensor& x, const LayerNormParams& ln);
void register_layer_norm(ParamSet& ps, const std::string& prefix, const LayerNormParams& ln);

// Pre-norm transformer block: multi-head self-attention and a GELU MLP, each
// behind a residual connection.
struct TransformerBlock {
  LayerNormParams ln1, ln2;
  Linear q, k, v, o;
  Linear ff1, ff2;
};

TransformerBlock make_block(int dim, int ff_mult, Rng& rng);
void register_block(ParamSet& ps, const std::string& prefix, const TransformerBlock& blk);

Tensor block_forward(GradTape& tape, const Tensor& x, const TransformerBlock& blk,
                     int heads, bool causal);

// Per-block key/value memory for incremental decoding.
struct BlockKVCache {
  Tensor keys;    // [t, dim]
  Tensor values;  // [t, dim]
};

// Feeds one new row through the block, attending to everything cached so far
// plus itself. Produces bit-identical rows to a causal block_forward over the
// same prefix, because every reduction runs in the same order.
Tensor block_step(GradTape& tape, const Tensor& x_row, const TransformerBlock& blk,
                  int heads, BlockKVCache& cache);

// Fixed sine/cosine position table, [len, dim], no gradient.
Tensor sinusoidal_encoding(int len, int dim);

}  // namespace vslm
