#pragma once

// Define-by-run reverse-mode differentiation.
//
// A Tape owns every node produced while it is alive. Ops append nodes in
// execution order, so the node list is already topologically sorted and
// backward() is a single reverse sweep. The tape is rebuilt for every
// training step because masking changes the graph.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "famt/tensor.hpp"

namespace famt::ag {

class Tape;

struct Node {
  Tensor value;
  Tensor grad;  // allocated by backward() for nodes that require grad
  bool requires_grad = false;
  std::function<void(Node&)> backward;
  Tensor* sink = nullptr;  // parameter leaves: grad is accumulated here
};

// Non-owning handle to a node on a tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Dims& dims() const { return node_->value.dims(); }
  bool requires_grad() const { return node_->requires_grad; }
  Tape& tape() const { return *tape_; }
  Node* node() const { return node_; }
  bool valid() const { return node_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, Node* node) : tape_(tape), node_(node) {}
  Tape* tape_ = nullptr;
  Node* node_ = nullptr;
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  // Leaf whose gradient is added into *grad_sink when backward() finishes
  // (an empty sink receives a copy).
  Var parameter(const Tensor& value, Tensor* grad_sink);

  // Used by ops: appends a node; the backward closure is dropped when no
  // input tracks gradients or the tape is in inference mode.
  Var record(Tensor value, bool requires_grad, std::function<void(Node&)> backward);

  // Root must hold exactly one element. A second call without reset() throws.
  void backward(const Var& root);
  void reset();

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// ---- primitives ----

Var matmul(const Var& a, const Var& b);
// x (T x in) * w (in x out) + bias (1 x out); bias may be an invalid Var.
Var linear(const Var& x, const Var& w, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// x (T x n) + row (1 x n) broadcast over rows.
Var add_row(const Var& x, const Var& row);
Var scale(const Var& a, double s);
Var abs(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var transpose(const Var& a);
Var softmax(const Var& x, std::size_t axis);
// Per-row normalization over the last dim; eps sits inside the square root.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
// Exact erf form.
Var gelu(const Var& x);
// Row gather; repeated indices accumulate in the backward pass.
Var gather_rows(const Var& x, std::span<const std::size_t> rows);
Var concat_rows(const Var& a, const Var& b);
// Fused multi-head self-attention on a packed [q | k | v] input of shape
// T x 3d. Heads split each of q, k, v into contiguous column blocks of d/h.
// Scores are scaled by 1/sqrt(d/h). If `probs` is non-null it receives the
// attention matrices, shape h x T x T.
Var attention(const Var& qkv, std::size_t heads, Tensor* probs = nullptr);
// Mean negative log-likelihood of integer labels under row softmax.
Var cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace famt::ag
