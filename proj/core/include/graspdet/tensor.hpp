#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "graspdet/rng.hpp"

namespace grasp::ad {

// Element type of the engine. Double keeps finite-difference gradient
// checks and long EMA chains well inside their tolerances.
using real = double;

namespace detail {
struct Node;
}

// Dense row-major tensor with reverse-mode gradient support. A Tensor is a
// cheap handle onto a shared node; copies alias the same storage. Forward
// primitives record the graph define-by-run, so the tape is rebuilt on every
// forward pass. Values are immutable after construction except through
// data() on leaves and the grad buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, real fill, bool requires_grad = false);

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<real> values, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);
  // i.i.d. N(0, stddev^2) entries.
  static Tensor randn(std::vector<int> shape, real stddev, Rng& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const;
  int size() const;  // element count

  real* data();
  const real* data() const;
  real item() const;  // value of a 1-element tensor

  bool requires_grad() const;
  void set_requires_grad(bool v);

  // Gradient buffer; null until the first backward pass touches this tensor.
  const real* grad() const;
  real grad_at(int i) const;
  void zero_grad();

  // Reverse sweep from a scalar produced by a taped forward pass. Grads
  // accumulate additively across calls; reset them with zero_grad().
  void backward() const;

  Tensor clone() const;  // deep copy, detached from any graph

  detail::Node* node() const { return node_.get(); }

 private:
  friend Tensor make_op(std::vector<int>, std::vector<real>, std::vector<Tensor>,
                        std::function<void(detail::Node&)>);
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// While alive, forward primitives do not record graph edges; backward through
// values produced under the guard is impossible. Used for inference.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Elementwise primitives. Binary ops require equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// a: [m x k], b: [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Adds a length-n bias vector to every row of an [m x n] matrix.
Tensor add_row_bias(const Tensor& a, const Tensor& bias);

// Cross-correlation with zero "same" padding. x: [Cin x H x W],
// k: [Cout x Cin x K x K] with K odd (1 or 3), stride 1 or 2.
// Output spatial size is ceil(H/stride) x ceil(W/stride).
// bias may be undefined; otherwise shape [Cout].
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride);

// Nearest-neighbour [C x H x W] -> [C x 2H x 2W].
Tensor upsample2x(const Tensor& x);

// Window copy out of a [C x H x W] map; gradient scatters back into the
// window. The window must lie fully inside the map.
Tensor crop2d(const Tensor& x, int row0, int col0, int rows, int cols);

Tensor reshape(const Tensor& x, std::vector<int> shape);
// Contiguous [offset, offset+len) window of the flattened elements; returns
// a 1-D tensor, gradient scatters back.
Tensor slice(const Tensor& x, int offset, int len);
Tensor concat(const std::vector<Tensor>& parts);  // 1-D concatenation

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over elements of the Huber loss with transition point 1:
// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

// Mean binary cross-entropy; pred is clamped to [1e-7, 1 - 1e-7] first.
Tensor bce(const Tensor& pred, const Tensor& target);

std::string shape_str(const std::vector<int>& shape);

}  // namespace grasp::ad
