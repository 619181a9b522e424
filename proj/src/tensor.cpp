#include "vslm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vslm {

static size_t shape_numel(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw ShapeError("tensor: rank must be 1 or 2");
  }
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor: dimensions must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.node_ = std::make_shared<TensorNode>();
  t.node_->v.assign(shape_numel(shape), static_cast<real>(0));
  t.node_->shape = std::move(shape);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: value count does not match shape");
  }
  Tensor t;
  t.node_ = std::make_shared<TensorNode>();
  t.node_->shape = std::move(shape);
  t.node_->v = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(real value) { return from({1}, {value}); }

int Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows: rank-2 tensor required");
  return node_->shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols: rank-2 tensor required");
  return node_->shape[1];
}

std::vector<real>& Tensor::g() {
  if (node_->g.empty()) node_->g.assign(node_->v.size(), static_cast<real>(0));
  return node_->g;
}

const std::vector<real>& Tensor::g() const {
  if (node_->g.empty()) throw NumericError("grad: no gradient present");
  return node_->g;
}

void Tensor::zero_grad() {
  if (!node_->g.empty()) {
    std::fill(node_->g.begin(), node_->g.end(), static_cast<real>(0));
  }
}

real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor is not a scalar");
  return node_->v[0];
}

real& Tensor::at(int i, int j) {
  return node_->v[static_cast<size_t>(i) * cols() + j];
}

real Tensor::at(int i, int j) const {
  return node_->v[static_cast<size_t>(i) * cols() + j];
}

void GradTape::record(std::function<void()> fn) {
  entries_.push_back(std::move(fn));
}

void GradTape::backward(Tensor loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;
  loss.g()[0] = static_cast<real>(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

void check_finite(const char* op, const std::vector<real>& values) {
  for (real x : values) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value");
    }
  }
}

static void ensure_grad(TensorNode& n) {
  if (n.g.empty()) n.g.assign(n.v.size(), static_cast<real>(0));
}

static bool wants_tape(const GradTape& tape, std::initializer_list<const Tensor*> ins) {
  if (!tape.recording()) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// ---- matmul -----------------------------------------------------------------

Tensor matmul(GradTape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: rank-2 inputs required");
  const int m = a.shape()[0], k = a.shape()[1];
  const int n = b.shape()[1];
  if (b.shape()[0] != k) throw ShapeError("matmul: inner dimensions differ");
  Tensor out = Tensor::zeros({m, n});
  {
    const real* av = a.v().data();
    const real* bv = b.v().data();
    real* ov = out.v().data();
    for (int i = 0; i < m; ++i) {
      const real* arow = av + static_cast<size_t>(i) * k;
      real* orow = ov + static_cast<size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const real aik = arow[kk];
        const real* brow = bv + static_cast<size_t>(kk) * n;
        for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  check_finite("matmul", out.v());
  if (wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    tape.record([an, bn, on, m, k, n] {
      if (on->g.empty()) return;
      const real* og = on->g.data();
      if (an->requires_grad) {
        ensure_grad(*an);
        real* ag = an->g.data();
        const real* bv = bn->v.data();
        // row-dot with fixed-width lane accumulators: the summation order is
        // a function of n alone, so results stay identical run to run, and
        // the independent lanes vectorize where a serial reduction cannot
        constexpr int L = 16;
        for (int i = 0; i < m; ++i) {
          const real* ogrow = og + static_cast<size_t>(i) * n;
          real* agrow = ag + static_cast<size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const real* brow = bv + static_cast<size_t>(kk) * n;
            real lanes[L] = {};
            int j = 0;
            for (; j + L <= n; j += L) {
              for (int l = 0; l < L; ++l) lanes[l] += ogrow[j + l] * brow[j + l];
            }
            real acc = 0;
            for (int l = 0; l < L; ++l) acc += lanes[l];
            for (; j < n; ++j) acc += ogrow[j] * brow[j];
            agrow[kk] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        real* bg = bn->g.data();
        const real* av = an->v.data();
        for (int i = 0; i < m; ++i) {
          const real* arow = av + static_cast<size_t>(i) * k;
          const real* ogrow = og + static_cast<size_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const real aik = arow[kk];
            real* bgrow = bg + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) bgrow[j] += aik * ogrow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(GradTape& tape, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank-2 input required");
  const int m = a.shape()[0], n = a.shape()[1];
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  }
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    tape.record([an, on, m, n] {
      if (on->g.empty()) return;
      ensure_grad(*an);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          an->g[static_cast<size_t>(i) * n + j] += on->g[static_cast<size_t>(j) * m + i];
        }
      }
    });
  }
  return out;
}

Tensor add(GradTape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shapes differ");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.v()[i] = a.v()[i] + b.v()[i];
  check_finite("add", out.v());
  if (wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    tape.record([an, bn, on, n] {
      if (on->g.empty()) return;
      if (an->requires_grad) {
        ensure_grad(*an);
        for (size_t i = 0; i < n; ++i) an->g[i] += on->g[i];
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        for (size_t i = 0; i < n; ++i) bn->g[i] += on->g[i];
      }
    });
  }
  return out;
}

Tensor add_bias(GradTape& tape, const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1) throw ShapeError("add_bias: matrix and vector required");
  const int m = a.shape()[0], n = a.shape()[1];
  if (bias.shape()[0] != n) throw ShapeError("add_bias: bias length differs from columns");
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i) {
    const real* arow = a.v().data() + static_cast<size_t>(i) * n;
    real* orow = out.v().data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = arow[j] + bias.v()[j];
  }
  check_finite("add_bias", out.v());
  if (wants_tape(tape, {&a, &bias})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = bias.node(), on = out.node();
    tape.record([an, bn, on, m, n] {
      if (on->g.empty()) return;
      if (an->requires_grad) {
        ensure_grad(*an);
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) an->g[i] += on->g[i];
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        for (int i = 0; i < m; ++i) {
          const real* ogrow = on->g.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) bn->g[j] += ogrow[j];
        }
      }
    });
  }
  return out;
}

Tensor scale(GradTape& tape, const Tensor& a, real s) {
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.v()[i] = a.v()[i] * s;
  check_finite("scale", out.v());
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    tape.record([an, on, n, s] {
      if (on->g.empty()) return;
      ensure_grad(*an);
      for (size_t i = 0; i < n; ++i) an->g[i] += on->g[i] * s;
    });
  }
  return out;
}

Tensor gelu(GradTape& tape, const Tensor& a) {
  // tanh approximation
  const real c = static_cast<real>(0.7978845608028654);  // sqrt(2/pi)
  const real q = static_cast<real>(0.044715);
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) {
    const real x = a.v()[i];
    const real u = c * (x + q * x * x * x);
    out.v()[i] = static_cast<real>(0.5) * x * (static_cast<real>(1) + std::tanh(u));
  }
  check_finite("gelu", out.v());
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    tape.record([an, on, n, c, q] {
      if (on->g.empty()) return;
      ensure_grad(*an);
      for (size_t i = 0; i < n; ++i) {
        const real x = an->v[i];
        const real u = c * (x + q * x * x * x);
        const real t = std::tanh(u);
        const real du = c * (static_cast<real>(1) + static_cast<real>(3) * q * x * x);
        const real d = static_cast<real>(0.5) * (static_cast<real>(1) + t) +
                       static_cast<real>(0.5) * x * (static_cast<real>(1) - t * t) * du;
        an->g[i] += on->g[i] * d;
      }
    });
  }
  return out;
}

// Softmax over contiguous (axis 1) or strided (axis 0) slices of a matrix;
// rank-1 tensors are treated as a single slice.
Tensor softmax(GradTape& tape, const Tensor& a, int axis) {
  int slices, len, stride_slice, stride_elem;
  if (a.rank() == 1) {
    if (axis != 0) throw ShapeError("softmax: rank-1 input uses axis 0");
    slices = 1;
    len = a.shape()[0];
    stride_slice = 0;
    stride_elem = 1;
  } else if (axis == 1) {
    slices = a.shape()[0];
    len = a.shape()[1];
    stride_slice = a.shape()[1];
    stride_elem = 1;
  } else if (axis == 0) {
    slices = a.shape()[1];
    len = a.shape()[0];
    stride_slice = 1;
    stride_elem = a.shape()[1];
  } else {
    throw ShapeError("softmax: axis must be 0 or 1");
  }
  check_finite("softmax input", a.v());
  Tensor out = Tensor::zeros(a.shape());
  for (int s = 0; s < slices; ++s) {
    const real* in = a.v().data() + static_cast<size_t>(s) * stride_slice;
    real* o = out.v().data() + static_cast<size_t>(s) * stride_slice;
    real mx = in[0];
    for (int i = 1; i < len; ++i) mx = std::max(mx, in[static_cast<size_t>(i) * stride_elem]);
    real z = 0;
    for (int i = 0; i < len; ++i) {
      const real e = std::exp(in[static_cast<size_t>(i) * stride_elem] - mx);
      o[static_cast<size_t>(i) * stride_elem] = e;
      z += e;
    }
    for (int i = 0; i < len; ++i) o[static_cast<size_t>(i) * stride_elem] /= z;
  }
  check_finite("softmax", out.v());
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    tape.record([an, on, slices, len, stride_slice, stride_elem] {
      if (on->g.empty()) return;
      ensure_grad(*an);
      for (int s = 0; s < slices; ++s) {
        const size_t base = static_cast<size_t>(s) * stride_slice;
        real dot = 0;
        for (int i = 0; i < len; ++i) {
          const size_t idx = base + static_cast<size_t>(i) * stride_elem;
          dot += on->g[idx] * on->v[idx];
        }
        for (int i = 0; i < len; ++i) {
          const size_t idx = base + static_cast<size_t>(i) * stride_elem;
          an->g[idx] += on->v[idx] * (on->g[idx] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(GradTape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, real eps) {
  if (x.rank() != 2) throw ShapeError("layer_norm: rank-2 input required");
  const int m = x.shape()[0], n = x.shape()[1];
  if (gamma.rank() != 1 || gamma.shape()[0] != n || beta.rank() != 1 || beta.shape()[0] != n) {
    throw ShapeError("layer_norm: gamma/beta must match columns");
  }
  Tensor out = Tensor::zeros({m, n});
  std::vector<real> inv_sigma(m);
  for (int i = 0; i < m; ++i) {
    const real* row = x.v().data() + static_cast<size_t>(i) * n;
    real* orow = out.v().data() + static_cast<size_t>(i) * n;
    real mu = 0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<real>(n);
    real var = 0;
    for (int j = 0; j < n; ++j) {
      const real d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<real>(n);
    const real is = static_cast<real>(1) / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < n; ++j) {
      orow[j] = (row[j] - mu) * is * gamma.v()[j] + beta.v()[j];
    }
  }
  check_finite("layer_norm", out.v());
  if (wants_tape(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    tape.record([xn, gn, bn, on, m, n, inv_sigma = std::move(inv_sigma)] {
      if (on->g.empty()) return;
      for (int i = 0; i < m; ++i) {
        const real* row = xn->v.data() + static_cast<size_t>(i) * n;
        const real* og = on->g.data() + static_cast<size_t>(i) * n;
        real mu = 0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<real>(n);
        const real is = inv_sigma[i];
        // xhat reconstructed on the fly; gy = dy * gamma
        real mean_gy = 0, mean_gy_xhat = 0;
        for (int j = 0; j < n; ++j) {
          const real xhat = (row[j] - mu) * is;
          const real gy = og[j] * gn->v[j];
          mean_gy += gy;
          mean_gy_xhat += gy * xhat;
        }
        mean_gy /= static_cast<real>(n);
        mean_gy_xhat /= static_cast<real>(n);
        if (xn->requires_grad) {
          ensure_grad(*xn);
          real* xg = xn->g.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const real xhat = (row[j] - mu) * is;
            const real gy = og[j] * gn->v[j];
            xg[j] += (gy - mean_gy - xhat * mean_gy_xhat) * is;
          }
        }
        if (gn->requires_grad) {
          ensure_grad(*gn);
          for (int j = 0; j < n; ++j) {
            const real xhat = (row[j] - mu) * is;
            gn->g[j] += og[j] * xhat;
          }
        }
        if (bn->requires_grad) {
          ensure_grad(*bn);
          for (int j = 0; j < n; ++j) bn->g[j] += og[j];
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(GradTape& tape, const Tensor& table,
                        const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: rank-2 table required");
  const int rows = table.shape()[0], dim = table.shape()[1];
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  for (int id : ids) {
    if (id < 0 || id >= rows) throw std::out_of_range("embedding_lookup: id out of range");
  }
  const int n = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({n, dim});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.v().data() + static_cast<size_t>(i) * dim,
                table.v().data() + static_cast<size_t>(ids[i]) * dim,
                sizeof(real) * dim);
  }
  if (wants_tape(tape, {&table})) {
    out.set_requires_grad(true);
    auto tn = table.node(), on = out.node();
    tape.record([tn, on, ids, n, dim] {
      if (on->g.empty()) return;
      ensure_grad(*tn);
      for (int i = 0; i < n; ++i) {
        const real* og = on->g.data() + static_cast<size_t>(i) * dim;
        real* tg = tn->g.data() + static_cast<size_t>(ids[i]) * dim;
        for (int j = 0; j < dim; ++j) tg[j] += og[j];
      }
    });
  }
  return out;
}

Tensor cross_entropy(GradTape& tape, const Tensor& logits,
                     const std::vector<int>& targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: rank-2 logits required");
  const int m = logits.shape()[0], n = logits.shape()[1];
  if (static_cast<int>(targets.size()) != m) {
    throw ShapeError("cross_entropy: one target per row required");
  }
  for (int t : targets) {
    if (t < 0 || t >= n) throw std::out_of_range("cross_entropy: target out of range");
  }
  check_finite("cross_entropy input", logits.v());
  std::vector<real> probs(static_cast<size_t>(m) * n);
  real loss = 0;
  for (int i = 0; i < m; ++i) {
    const real* row = logits.v().data() + static_cast<size_t>(i) * n;
    real* prow = probs.data() + static_cast<size_t>(i) * n;
    real mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    real z = 0;
    for (int j = 0; j < n; ++j) {
      const real e = std::exp(row[j] - mx);
      prow[j] = e;
      z += e;
    }
    for (int j = 0; j < n; ++j) prow[j] /= z;
    loss += std::log(z) + mx - row[targets[i]];
  }
  Tensor out = Tensor::scalar(loss);
  check_finite("cross_entropy", out.v());
  if (wants_tape(tape, {&logits})) {
    out.set_requires_grad(true);
    auto ln = logits.node(), on = out.node();
    tape.record([ln, on, targets, m, n, probs = std::move(probs)] {
      if (on->g.empty()) return;
      ensure_grad(*ln);
      const real g0 = on->g[0];
      for (int i = 0; i < m; ++i) {
        const real* prow = probs.data() + static_cast<size_t>(i) * n;
        real* lg = ln->g.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) lg[j] += g0 * prow[j];
        lg[targets[i]] -= g0;
      }
    });
  }
  return out;
}

Tensor slice_rows(GradTape& tape, const Tensor& a, int begin, int end) {
  if (a.rank() != 2) throw ShapeError("slice_rows: rank-2 input required");
  const int m = a.shape()[0], n = a.shape()[1];
  if (begin < 0 || end > m || begin >= end) throw ShapeError("slice_rows: bad range");
  Tensor out = Tensor::zeros({end - begin, n});
  std::memcpy(out.v().data(), a.v().data() + static_cast<size_t>(begin) * n,
              sizeof(real) * out.numel());
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    tape.record([an, on, begin, n, count = end - begin] {
      if (on->g.empty()) return;
      ensure_grad(*an);
      real* ag = an->g.data() + static_cast<size_t>(begin) * n;
      for (size_t i = 0; i < static_cast<size_t>(count) * n; ++i) ag[i] += on->g[i];
    });
  }
  return out;
}

Tensor slice_cols(GradTape& tape, const Tensor& a, int begin, int end) {
  if (a.rank() != 2) throw ShapeError("slice_cols: rank-2 input required");
  const int m = a.shape()[0], n = a.shape()[1];
  if (begin < 0 || end > n || begin >= end) throw ShapeError("slice_cols: bad range");
  const int w = end - begin;
  Tensor out = Tensor::zeros({m, w});
  for (int i = 0; i < m; ++i) {
    std::memcpy(out.v().data() + static_cast<size_t>(i) * w,
                a.v().data() + static_cast<size_t>(i) * n + begin, sizeof(real) * w);
  }
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    tape.record([an, on, m, n, begin, w] {
      if (on->g.empty()) return;
      ensure_grad(*an);
      for (int i = 0; i < m; ++i) {
        const real* og = on->g.data() + static_cast<size_t>(i) * w;
        real* ag = an->g.data() + static_cast<size_t>(i) * n + begin;
        for (int j = 0; j < w; ++j) ag[j] += og[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(GradTape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int n = parts[0].cols();
  int m = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    m += p.rows();
  }
  Tensor out = Tensor::zeros({m, n});
  size_t offset = 0;
  for (const Tensor& p : parts) {
    std::memcpy(out.v().data() + offset, p.v().data(), sizeof(real) * p.numel());
    offset += p.numel();
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape.recording() && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    tape.record([nodes, on] {
      if (on->g.empty()) return;
      size_t offset = 0;
      for (auto& pn : nodes) {
        if (pn->requires_grad) {
          ensure_grad(*pn);
          for (size_t i = 0; i < pn->v.size(); ++i) pn->g[i] += on->g[offset + i];
        }
        offset += pn->v.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(GradTape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int m = parts[0].rows();
  int n = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    n += p.cols();
  }
  Tensor out = Tensor::zeros({m, n});
  int col = 0;
  for (const Tensor& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < m; ++i) {
      std::memcpy(out.v().data() + static_cast<size_t>(i) * n + col,
                  p.v().data() + static_cast<size_t>(i) * w, sizeof(real) * w);
    }
    col += w;
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape.recording() && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    tape.record([nodes, on, m, n] {
      if (on->g.empty()) return;
      int col = 0;
      for (auto& pn : nodes) {
        const int w = static_cast<int>(pn->v.size()) / m;
        if (pn->requires_grad) {
          ensure_grad(*pn);
          for (int i = 0; i < m; ++i) {
            const real* og = on->g.data() + static_cast<size_t>(i) * n + col;
            real* pg = pn->g.data() + static_cast<size_t>(i) * w;
            for (int j = 0; j < w; ++j) pg[j] += og[j];
          }
        }
        col += w;
      }
    });
  }
  return out;
}

Tensor causal_mask_fill(GradTape& tape, const Tensor& scores) {
  if (scores.rank() != 2 || scores.shape()[0] != scores.shape()[1]) {
    throw ShapeError("causal_mask_fill: square score matrix required");
  }
  const int n = scores.shape()[0];
  const real sentinel = static_cast<real>(-1e9);
  Tensor out = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out.at(i, j) = j > i ? sentinel : scores.at(i, j);
    }
  }
  if (wants_tape(tape, {&scores})) {
    out.set_requires_grad(true);
    auto sn = scores.node(), on = out.node();
    tape.record([sn, on, n] {
      if (on->g.empty()) return;
      ensure_grad(*sn);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
          sn->g[static_cast<size_t>(i) * n + j] += on->g[static_cast<size_t>(i) * n + j];
        }
      }
    });
  }
  return out;
}

Tensor sum_all(GradTape& tape, const Tensor& a) {
  real s = 0;
  for (real x : a.v()) s += x;
  Tensor out = Tensor::scalar(s);
  check_finite("sum_all", out.v());
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    tape.record([an, on] {
      if (on->g.empty()) return;
      ensure_grad(*an);
      for (real& g : an->g) g += on->g[0];
    });
  }
  return out;
}

Tensor mean_all(GradTape& tape, const Tensor& a) {
  Tensor s = sum_all(tape, a);
  return scale(tape, s, static_cast<real>(1) / static_cast<real>(a.numel()));
}

}  // namespace vslm
