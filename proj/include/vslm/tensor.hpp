#pragma once

#include <functional>
#include <memory>

#include "vslm/common.hpp"

namespace vslm {

// Dense row-major tensor of rank 1 or 2. Value and gradient buffers live in a
// shared node so copies of a Tensor alias the same storage; the gradient
// buffer is allocated lazily and always matches the value shape.
struct TensorNode {
  std::vector<int> shape;
  std::vector<real> v;
  std::vector<real> g;
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<real> values,
                     bool requires_grad = false);
  static Tensor scalar(real value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  size_t numel() const { return node_->v.size(); }
  int rows() const;
  int cols() const;

  std::vector<real>& v() { return node_->v; }
  const std::vector<real>& v() const { return node_->v; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  bool has_grad() const { return !node_->g.empty(); }
  std::vector<real>& g();              // allocates zeros on first use
  const std::vector<real>& g() const;  // throws if absent
  void zero_grad();

  real item() const;  // single-element read
  real& at(int i, int j);
  real at(int i, int j) const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Records backward closures during the forward pass and replays them in
// reverse. A tape constructed with recording=false turns every op into plain
// inference arithmetic.
class GradTape {
 public:
  explicit GradTape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void record(std::function<void()> fn);
  size_t size() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs all closures in reverse order.
  void backward(Tensor loss);

 private:
  bool recording_;
  std::vector<std::function<void()>> entries_;
};

void check_finite(const char* op, const std::vector<real>& values);

// ---- differentiable ops ----------------------------------------------------

Tensor matmul(GradTape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(GradTape& tape, const Tensor& a);
Tensor add(GradTape& tape, const Tensor& a, const Tensor& b);
// Adds a rank-1 bias to every row of a.
Tensor add_bias(GradTape& tape, const Tensor& a, const Tensor& bias);
Tensor scale(GradTape& tape, const Tensor& a, real s);
Tensor gelu(GradTape& tape, const Tensor& a);
// axis 0 normalizes each column, axis 1 each row. Rank-1 input uses axis 0.
Tensor softmax(GradTape& tape, const Tensor& a, int axis);
// Row-wise normalization over the last axis with affine gamma/beta.
Tensor layer_norm(GradTape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, real eps = static_cast<real>(1e-5));
Tensor embedding_lookup(GradTape& tape, const Tensor& table,
                        const std::vector<int>& ids);
// Summed negative log-likelihood of targets under row-wise softmax(logits).
Tensor cross_entropy(GradTape& tape, const Tensor& logits,
                     const std::vector<int>& targets);
Tensor slice_rows(GradTape& tape, const Tensor& a, int begin, int end);
Tensor slice_cols(GradTape& tape, const Tensor& a, int begin, int end);
Tensor concat_rows(GradTape& tape, const std::vector<Tensor>& parts);
Tensor concat_cols(GradTape& tape, const std::vector<Tensor>& parts);
// Sets entries above the main diagonal of a square score matrix to a large
// negative sentinel so their post-softmax weight underflows to zero.
Tensor causal_mask_fill(GradTape& tape, const Tensor& scores);
Tensor sum_all(GradTape& tape, const Tensor& a);
Tensor mean_all(GradTape& tape, const Tensor& a);

}  // namespace vslm
