#include "vslm/nn.hpp"

#include <cmath>

namespace vslm {

void ParamSet::add(const std::string& name, const Tensor& t) {
  for (auto& [n, _] : items) {
    if (n == name) throw ConfigError("param registry: duplicate name " + name);
  }
  if (!t.defined()) throw ConfigError("param registry: undefined tensor " + name);
  items.emplace_back(name, t);
}

Tensor ParamSet::find(const std::string& name) const {
  for (auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw ConfigError("param registry: unknown name " + name);
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items.size());
  for (auto& [_, t] : items) out.push_back(t);
  return out;
}

Linear make_linear(int in, int out, Rng& rng, double w_std) {
  Linear lin;
  std::vector<real> w(static_cast<size_t>(in) * out);
  for (real& x : w) x = static_cast<real>(rng.normal(0.0, w_std));
  lin.w = Tensor::from({in, out}, std::move(w), true);
  lin.b = Tensor::zeros({out}, true);
  return lin;
}

Tensor linear(GradTape& tape, const Tensor& x, const Linear& lin) {
  return add_bias(tape, matmul(tape, x, lin.w), lin.b);
}

void register_linear(ParamSet& ps, const std::string& prefix, const Linear& lin) {
  ps.add(prefix + ".w", lin.w);
  ps.add(prefix + ".b", lin.b);
}

LayerNormParams make_layer_norm(int dim) {
  LayerNormParams ln;
  ln.gamma = Tensor::from({dim}, std::vector<real>(dim, static_cast<real>(1)), true);
  ln.beta = Tensor::zeros({dim}, true);
  return ln;
}

Tensor apply_layer_norm(GradTape& tape, const Tensor& x, const LayerNormParams& ln) {
  return layer_norm(tape, x, ln.gamma, ln.beta);
}

void register_layer_norm(ParamSet& ps, const std::string& prefix, const LayerNormParams& ln) {
  ps.add(prefix + ".gamma", ln.gamma);
  ps.add(prefix + ".beta", ln.beta);
}

TransformerBlock make_block(int dim, int ff_mult, Rng& rng) {
  TransformerBlock blk;
  blk.ln1 = make_layer_norm(dim);
  blk.ln2 = make_layer_norm(dim);
  blk.q = make_linear(dim, dim, rng);
  blk.k = make_linear(dim, dim, rng);
  blk.v = make_linear(dim, dim, rng);
  blk.o = make_linear(dim, dim, rng);
  blk.ff1 = make_linear(dim, dim * ff_mult, rng);
  blk.ff2 = make_linear(dim * ff_mult, dim, rng);
  return blk;
}

void register_block(ParamSet& ps, const std::string& prefix, const TransformerBlock& blk) {
  register_layer_norm(ps, prefix + ".ln1", blk.ln1);
  register_linear(ps, prefix + ".q", blk.q);
  register_linear(ps, prefix + ".k", blk.k);
  register_linear(ps, prefix + ".v", blk.v);
  register_linear(ps, prefix + ".o", blk.o);
  register_layer_norm(ps, prefix + ".ln2", blk.ln2);
  register_linear(ps, prefix + ".ff1", blk.ff1);
  register_linear(ps, prefix + ".ff2", blk.ff2);
}

static void check_heads(int dim, int heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention: head count must divide the model width");
  }
}

Tensor block_forward(GradTape& tape, const Tensor& x, const TransformerBlock& blk,
                     int heads, bool causal) {
  const int dim = x.cols();
  check_heads(dim, heads);
  const int hd = dim / heads;
  const real inv_sqrt = static_cast<real>(1.0 / std::sqrt(static_cast<double>(hd)));

  Tensor h = apply_layer_norm(tape, x, blk.ln1);
  Tensor q = linear(tape, h, blk.q);
  Tensor k = linear(tape, h, blk.k);
  Tensor v = linear(tape, h, blk.v);

  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int hh = 0; hh < heads; ++hh) {
    Tensor qh = slice_cols(tape, q, hh * hd, (hh + 1) * hd);
    Tensor kh = slice_cols(tape, k, hh * hd, (hh + 1) * hd);
    Tensor vh = slice_cols(tape, v, hh * hd, (hh + 1) * hd);
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    if (causal) scores = causal_mask_fill(tape, scores);
    Tensor weights = softmax(tape, scores, 1);
    head_outs.push_back(matmul(tape, weights, vh));
  }
  Tensor att = linear(tape, concat_cols(tape, head_outs), blk.o);
  Tensor x1 = add(tape, x, att);

  Tensor h2 = apply_layer_norm(tape, x1, blk.ln2);
  Tensor ff = linear(tape, gelu(tape, linear(tape, h2, blk.ff1)), blk.ff2);
  return add(tape, x1, ff);
}

Tensor block_step(GradTape& tape, const Tensor& x_row, const TransformerBlock& blk,
                  int heads, BlockKVCache& cache) {
  if (x_row.rows() != 1) throw ShapeError("block_step: single row expected");
  const int dim = x_row.cols();
  check_heads(dim, heads);
  const int hd = dim / heads;
  const real inv_sqrt = static_cast<real>(1.0 / std::sqrt(static_cast<double>(hd)));

  Tensor h = apply_layer_norm(tape, x_row, blk.ln1);
  Tensor q = linear(tape, h, blk.q);
  Tensor k = linear(tape, h, blk.k);
  Tensor v = linear(tape, h, blk.v);

  if (cache.keys.defined()) {
    cache.keys = concat_rows(tape, {cache.keys, k});
    cache.values = concat_rows(tape, {cache.values, v});
  } else {
    cache.keys = k;
    cache.values = v;
  }

  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int hh = 0; hh < heads; ++hh) {
    Tensor qh = slice_cols(tape, q, hh * hd, (hh + 1) * hd);
    Tensor kh = slice_cols(tape, cache.keys, hh * hd, (hh + 1) * hd);
    Tensor vh = slice_cols(tape, cache.values, hh * hd, (hh + 1) * hd);
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    Tensor weights = softmax(tape, scores, 1);
    head_outs.push_back(matmul(tape, weights, vh));
  }
  Tensor att = linear(tape, concat_cols(tape, head_outs), blk.o);
  Tensor x1 = add(tape, x_row, att);

  Tensor h2 = apply_layer_norm(tape, x1, blk.ln2);
  Tensor ff = linear(tape, gelu(tape, linear(tape, h2, blk.ff1)), blk.ff2);
  return add(tape, x1, ff);
}

Tensor sinusoidal_encoding(int len, int dim) {
  if (len <= 0 || dim <= 0 || dim % 2 != 0) {
    throw ConfigError("sinusoidal_encoding: positive length and even width required");
  }
  Tensor pe = Tensor::zeros({len, dim});
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / dim);
      pe.at(pos, 2 * i) = static_cast<real>(std::sin(pos * freq));
      pe.at(pos, 2 * i + 1) = static_cast<real>(std::cos(pos * freq));
    }
  }
  return pe;
}

}  // namespace vslm
