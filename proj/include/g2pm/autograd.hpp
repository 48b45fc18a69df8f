#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "g2pm/rng.hpp"
#include "g2pm/tensor.hpp"

namespace g2pm::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(const Tensor& grad_out, const std::vector<NodePtr>& parents)>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  BackwardFn backward;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

// Handle to a node of the dynamic computation graph. Copies share the node, so
// a parameter Var held by a ParameterStore and one captured by an op are the
// same tensor.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  static Var from_node(NodePtr node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

  explicit operator bool() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  // Resets the gradient to a zero tensor of the value's shape.
  void zero_grad();
  void clear_grad();
  Var detach() const { return Var(node_->value, false); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Disables graph recording in the current thread for its lifetime; used for
// stop-gradient targets and evaluation.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// In checked mode every op verifies its output is finite and throws
// NumericError naming the op otherwise.
void set_checked_mode(bool on);
bool checked_mode();

// Reverse-mode sweep from a scalar. Gradients accumulate into every reachable
// node that requires grad. Throws ContractError for a non-scalar loss.
void backward(const Var& loss);

// ---- ops ------------------------------------------------------------------
// All ops throw ShapeError (quoting both shapes) on incompatible inputs.

Var matmul(const Var& a, const Var& b);
// x[m x in] * w[in x out] + b[out]; `b` may be an empty Var.
Var linear(const Var& x, const Var& w, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);
Var broadcast_rows(const Var& row, std::size_t rows);
Var scale(const Var& a, Real s);
Var concat_cols(const Var& a, const Var& b);
Var row_softmax(const Var& a);
Var gelu(const Var& a);
// Inverted dropout; identity when !training or p == 0.
Var dropout(const Var& a, Real p, Rng& rng, bool training);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = 1e-5);
Var mean_rows(const Var& a);
Var segment_mean(const Var& a, std::span<const std::size_t> offsets);
Var sum(const Var& a);
Var l2_sq(const Var& a);
// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);
Var gather_rows(const Var& a, std::span<const std::size_t> index);
// Copy of `base` with row dst[i] replaced by row i of `src`.
Var scatter_rows(const Var& base, const Var& src, std::span<const std::size_t> dst);
// Multi-head scaled dot-product attention within row segments (see kernels).
Var segment_attention(const Var& q, const Var& k, const Var& v, std::span<const std::size_t> offsets,
                      std::size_t heads);
// sum_r w[r] * ||a_r - target_r||^2; the target carries no gradient.
Var weighted_sq_error(const Var& a, const Tensor& target, std::span<const Real> row_weights);

}  // namespace g2pm::nn
