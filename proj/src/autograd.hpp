#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "parameter.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace retriever {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  size_t id_ = 0;
};

// Records a forward computation and replays it in reverse. A tape is built
// for one forward pass and supports exactly one backward call.
class Tape {
 public:
  // `self` is the id of the node whose gradient `out_grad` is.
  using Backward =
      std::function<void(Tape&, size_t self, const std::vector<double>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  // Leaf bound to a parameter; repeated calls return the same node. After
  // backward the gradient is accumulated into Parameter::grad (zero-filled
  // when the loss does not depend on it).
  Var param(Parameter& p);

  // Reverse pass from a scalar. Traversal is reverse recording order.
  void backward(Var loss);

  const Tensor& value(size_t id) const { return nodes_[id].value; }
  bool requires_grad(size_t id) const { return nodes_[id].requires_grad; }
  // Gradient of a recorded value after backward; nullptr when none flowed.
  const std::vector<double>* grad(Var v) const;
  Tensor grad_tensor(Var v) const;
  size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Used by primitives.
  Var record(Tensor value, bool requires_grad, Backward backward);
  std::vector<double>& grad_buffer(size_t id);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backward backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, size_t> param_nodes_;
  bool backward_done_ = false;
};

// Primitives. Binary elementwise ops broadcast a right-aligned operand over
// leading axes: its shape must be a suffix of the other's (or size 1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
Var neg(Var a);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sqrt(Var a);
Var square(Var a);
Var relu(Var a);
Var gelu(Var a);
// x log x with 0 log 0 = 0 (gradient taken as 0 there).
Var xlogx(Var a);

// a: [..., n, k], b: [k, m] -> [..., n, m]
Var matmul(Var a, Var b);
// 2-D transpose.
Var transpose(Var a);

Var softmax(Var a);
Var log_softmax(Var a);
// Normalizes each row over the last axis; no affine part.
Var layer_norm(Var a, double eps = 1e-8);

// x: [n, c], w: [k, c], k odd; zero padding, stride 1.
Var depthwise_conv1d(Var x, Var w);
// x: [H, W, c], w: [kh, kw, c]; odd kernel, zero padding, stride 1.
Var depthwise_conv2d(Var x, Var w);
// x: [H, W, cin], w: [kh, kw, cin, cout]; odd kernel, zero padding, stride 1.
Var conv2d(Var x, Var w);

Var sum(Var a, size_t axis);
Var mean(Var a, size_t axis);
Var sum_all(Var a);
Var mean_all(Var a);

Var concat_last(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_last(Var a, size_t start, size_t len);
Var gather_rows(Var a, const std::vector<size_t>& rows);
Var reshape(Var a, Shape shape);

// Forward value is `hard`; the gradient passes to `soft` unchanged.
Var straight_through(Var soft, const Tensor& hard);

// Inverted dropout; identity when p == 0.
Var dropout(Var a, double p, Rng& rng);

}  // namespace retriever
