#include "graspdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "graspdet/errors.hpp"

namespace grasp::ad {

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<real> value;
  std::vector<real> grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  int size() const { return static_cast<int>(value.size()); }
  real* grad_data() {
    if (grad.empty()) grad.assign(value.size(), real(0));
    return grad.data();
  }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

int shape_size(const std::vector<int>& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return static_cast<int>(n);
}

std::shared_ptr<Node> make_leaf(std::vector<int> shape, std::vector<real> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor::Tensor(std::vector<int> shape, real fill, bool requires_grad) {
  int n = shape_size(shape);
  node_ = make_leaf(std::move(shape), std::vector<real>(n, fill), requires_grad);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(std::move(shape), real(0), requires_grad);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> values, bool requires_grad) {
  int n = shape_size(shape);
  if (n != static_cast<int>(values.size()))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, real stddev, Rng& rng, bool requires_grad) {
  int n = shape_size(shape);
  std::vector<real> v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal() * stddev;
  return from(std::move(shape), std::move(v), requires_grad);
}

const std::vector<int>& Tensor::shape() const {
  if (!node_) throw Error("operation on an empty tensor");
  return node_->shape;
}

int Tensor::dim(int i) const {
  const auto& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw DimensionError("dimension index " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[i];
}

int Tensor::size() const {
  if (!node_) throw Error("operation on an empty tensor");
  return node_->size();
}

real* Tensor::data() {
  if (!node_) throw Error("operation on an empty tensor");
  return node_->value.data();
}

const real* Tensor::data() const {
  if (!node_) throw Error("operation on an empty tensor");
  return node_->value.data();
}

real Tensor::item() const {
  if (size() != 1) throw DimensionError("item() requires a 1-element tensor, got " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw Error("operation on an empty tensor");
  if (v && !node_->parents.empty())
    throw Error("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = v;
}

const real* Tensor::grad() const {
  if (!node_) throw Error("operation on an empty tensor");
  return node_->grad.empty() ? nullptr : node_->grad.data();
}

real Tensor::grad_at(int i) const {
  if (!node_) throw Error("operation on an empty tensor");
  if (i < 0 || i >= node_->size()) throw DimensionError("grad index out of range");
  return node_->grad.empty() ? real(0) : node_->grad[i];
}

void Tensor::zero_grad() {
  if (!node_) throw Error("operation on an empty tensor");
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), real(0));
}

Tensor Tensor::clone() const {
  if (!node_) throw Error("operation on an empty tensor");
  return from(node_->shape, node_->value, false);
}

void Tensor::backward() const {
  if (!node_) throw Error("operation on an empty tensor");
  if (node_->size() != 1)
    throw DimensionError("backward() requires a scalar, got " + shape_str(node_->shape));
  if (!node_->requires_grad)
    throw Error("backward() on a value with no gradient tape; it was computed under "
                "NoGradGuard or does not depend on any parameter");

  // Post-order DFS lists parents before their consumers, so the reversed
  // list hands every node its full incoming gradient before that node
  // pushes to its own parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      Node* p = top.first->parents[top.second].get();
      ++top.second;
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }

  // Interior nodes get a fresh buffer each sweep; only leaf grads accumulate
  // across calls (and are cleared only by zero_grad).
  for (Node* n : order)
    if (!n->parents.empty() && !n->grad.empty())
      std::fill(n->grad.begin(), n->grad.end(), real(0));
  node_->grad_data()[0] += real(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// Wires a new graph node. Under NoGradGuard, or when no parent carries a
// tape, the edges and closure are dropped and the result is a detached
// constant.
Tensor make_op(std::vector<int> shape, std::vector<real> value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node_);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(n));
}

namespace {

// Grad buffer of parent i, allocated on demand.
real* pgrad(Node& self, int i) { return self.parents[static_cast<size_t>(i)]->grad_data(); }
const real* pval(Node& self, int i) { return self.parents[static_cast<size_t>(i)]->value.data(); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  int n = a.size();
  std::vector<real> out(n);
  const real* av = a.data();
  const real* bv = b.data();
  for (int i = 0; i < n; ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [n](Node& self) {
    const real* g = self.grad_data();
    if (self.parents[0]->requires_grad) {
      real* ga = pgrad(self, 0);
      for (int i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (self.parents[1]->requires_grad) {
      real* gb = pgrad(self, 1);
      for (int i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  int n = a.size();
  std::vector<real> out(n);
  const real* av = a.data();
  const real* bv = b.data();
  for (int i = 0; i < n; ++i) out[i] = av[i] - bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [n](Node& self) {
    const real* g = self.grad_data();
    if (self.parents[0]->requires_grad) {
      real* ga = pgrad(self, 0);
      for (int i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (self.parents[1]->requires_grad) {
      real* gb = pgrad(self, 1);
      for (int i = 0; i < n; ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  int n = a.size();
  std::vector<real> out(n);
  const real* av = a.data();
  const real* bv = b.data();
  for (int i = 0; i < n; ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [n](Node& self) {
    const real* g = self.grad_data();
    const real* av = pval(self, 0);
    const real* bv = pval(self, 1);
    if (self.parents[0]->requires_grad) {
      real* ga = pgrad(self, 0);
      for (int i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      real* gb = pgrad(self, 1);
      for (int i = 0; i < n; ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, real s) {
  int n = a.size();
  std::vector<real> out(n);
  const real* av = a.data();
  for (int i = 0; i < n; ++i) out[i] = av[i] * s;
  return make_op(a.shape(), std::move(out), {a}, [n, s](Node& self) {
    const real* g = self.grad_data();
    real* ga = pgrad(self, 0);
    for (int i = 0; i < n; ++i) ga[i] += g[i] * s;
  });
}

Tensor relu(const Tensor& a) {
  int n = a.size();
  std::vector<real> out(n);
  const real* av = a.data();
  for (int i = 0; i < n; ++i) out[i] = av[i] > 0 ? av[i] : real(0);
  return make_op(a.shape(), std::move(out), {a}, [n](Node& self) {
    const real* g = self.grad_data();
    const real* av = pval(self, 0);
    real* ga = pgrad(self, 0);
    for (int i = 0; i < n; ++i)
      if (av[i] > 0) ga[i] += g[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  int n = a.size();
  std::vector<real> out(n);
  const real* av = a.data();
  for (int i = 0; i < n; ++i) out[i] = real(1) / (real(1) + std::exp(-av[i]));
  return make_op(a.shape(), std::move(out), {a}, [n](Node& self) {
    const real* g = self.grad_data();
    const real* y = self.value.data();
    real* ga = pgrad(self, 0);
    for (int i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (real(1) - y[i]);
  });
}

Tensor tanh(const Tensor& a) {
  int n = a.size();
  std::vector<real> out(n);
  const real* av = a.data();
  for (int i = 0; i < n; ++i) out[i] = std::tanh(av[i]);
  return make_op(a.shape(), std::move(out), {a}, [n](Node& self) {
    const real* g = self.grad_data();
    const real* y = self.value.data();
    real* ga = pgrad(self, 0);
    for (int i = 0; i < n; ++i) ga[i] += g[i] * (real(1) - y[i] * y[i]);
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw DimensionError("matmul requires rank-2 tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::vector<real> out(static_cast<size_t>(m) * n, real(0));
  const real* av = a.data();
  const real* bv = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      real aip = av[i * k + p];
      for (int j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const real* g = self.grad_data();
    const real* av = pval(self, 0);
    const real* bv = pval(self, 1);
    if (self.parents[0]->requires_grad) {
      real* ga = pgrad(self, 0);  // G . B^T
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          real gij = g[i * n + j];
          for (int p = 0; p < k; ++p) ga[i * k + p] += gij * bv[p * n + j];
        }
    }
    if (self.parents[1]->requires_grad) {
      real* gb = pgrad(self, 1);  // A^T . G
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          real aip = av[i * k + p];
          for (int j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  if (a.shape().size() != 2 || bias.shape().size() != 1)
    throw DimensionError("add_row_bias requires a matrix and a vector, got " +
                         shape_str(a.shape()) + " and " + shape_str(bias.shape()));
  int m = a.dim(0), n = a.dim(1);
  if (bias.dim(0) != n)
    throw DimensionError("bias length " + std::to_string(bias.dim(0)) +
                         " does not match column count " + std::to_string(n));
  std::vector<real> out(static_cast<size_t>(m) * n);
  const real* av = a.data();
  const real* bv = bias.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
  return make_op({m, n}, std::move(out), {a, bias}, [m, n](Node& self) {
    const real* g = self.grad_data();
    if (self.parents[0]->requires_grad) {
      real* ga = pgrad(self, 0);
      for (int i = 0; i < m * n; ++i) ga[i] += g[i];
    }
    if (self.parents[1]->requires_grad) {
      real* gb = pgrad(self, 1);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride) {
  if (x.shape().size() != 3)
    throw DimensionError("conv2d input must be [C x H x W], got " + shape_str(x.shape()));
  if (k.shape().size() != 4)
    throw DimensionError("conv2d kernel must be [Cout x Cin x K x K], got " + shape_str(k.shape()));
  if (stride != 1 && stride != 2)
    throw ArgumentError("conv2d stride must be 1 or 2, got " + std::to_string(stride));
  int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  int cout = k.dim(0), kcin = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  if (kcin != cin)
    throw DimensionError("conv2d kernel expects " + std::to_string(kcin) +
                         " input channels, input has " + std::to_string(cin));
  if (kh != kw || (kh != 1 && kh != 3))
    throw ArgumentError("conv2d kernel must be square of size 1 or 3, got " + shape_str(k.shape()));
  bool has_bias = bias.defined();
  if (has_bias && (bias.shape().size() != 1 || bias.dim(0) != cout))
    throw DimensionError("conv2d bias must be [Cout], got " + shape_str(bias.shape()));

  int pad = kh / 2;
  int ho = (h + stride - 1) / stride;
  int wo = (w + stride - 1) / stride;
  std::vector<real> out(static_cast<size_t>(cout) * ho * wo, real(0));
  const real* xv = x.data();
  const real* kv = k.data();
  const real* bv = has_bias ? bias.data() : nullptr;
  for (int co = 0; co < cout; ++co) {
    const real* kc = kv + static_cast<size_t>(co) * cin * kh * kw;
    real b = has_bias ? bv[co] : real(0);
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        real acc = b;
        for (int ci = 0; ci < cin; ++ci) {
          const real* xc = xv + static_cast<size_t>(ci) * h * w;
          const real* kk = kc + static_cast<size_t>(ci) * kh * kw;
          for (int u = 0; u < kh; ++u) {
            int iy = oy * stride + u - pad;
            if (iy < 0 || iy >= h) continue;
            for (int v = 0; v < kw; ++v) {
              int ix = ox * stride + v - pad;
              if (ix < 0 || ix >= w) continue;
              acc += xc[iy * w + ix] * kk[u * kw + v];
            }
          }
        }
        out[(static_cast<size_t>(co) * ho + oy) * wo + ox] = acc;
      }
  }

  std::vector<Tensor> parents = {x, k};
  if (has_bias) parents.push_back(bias);
  auto bwd = [cin, h, w, cout, kh, kw, pad, stride, ho, wo, has_bias](Node& self) {
    const real* g = self.grad_data();
    const real* xv = pval(self, 0);
    const real* kv = pval(self, 1);
    bool need_x = self.parents[0]->requires_grad;
    bool need_k = self.parents[1]->requires_grad;
    bool need_b = has_bias && self.parents[2]->requires_grad;
    real* gx = need_x ? pgrad(self, 0) : nullptr;
    real* gk = need_k ? pgrad(self, 1) : nullptr;
    real* gb = need_b ? pgrad(self, 2) : nullptr;
    for (int co = 0; co < cout; ++co) {
      const real* kc = kv + static_cast<size_t>(co) * cin * kh * kw;
      real* gkc = need_k ? gk + static_cast<size_t>(co) * cin * kh * kw : nullptr;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          real go = g[(static_cast<size_t>(co) * ho + oy) * wo + ox];
          if (go == real(0)) continue;
          if (need_b) gb[co] += go;
          if (!need_x && !need_k) continue;
          for (int ci = 0; ci < cin; ++ci) {
            const real* xc = xv + static_cast<size_t>(ci) * h * w;
            real* gxc = need_x ? gx + static_cast<size_t>(ci) * h * w : nullptr;
            const real* kk = kc + static_cast<size_t>(ci) * kh * kw;
            real* gkk = need_k ? gkc + static_cast<size_t>(ci) * kh * kw : nullptr;
            for (int u = 0; u < kh; ++u) {
              int iy = oy * stride + u - pad;
              if (iy < 0 || iy >= h) continue;
              for (int v = 0; v < kw; ++v) {
                int ix = ox * stride + v - pad;
                if (ix < 0 || ix >= w) continue;
                if (need_x) gxc[iy * w + ix] += go * kk[u * kw + v];
                if (need_k) gkk[u * kw + v] += go * xc[iy * w + ix];
              }
            }
          }
        }
    }
  };
  return make_op({cout, ho, wo}, std::move(out), std::move(parents), std::move(bwd));
}

Tensor upsample2x(const Tensor& x) {
  if (x.shape().size() != 3)
    throw DimensionError("upsample2x input must be [C x H x W], got " + shape_str(x.shape()));
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  int ho = 2 * h, wo = 2 * w;
  std::vector<real> out(static_cast<size_t>(c) * ho * wo);
  const real* xv = x.data();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xo = 0; xo < wo; ++xo)
        out[(static_cast<size_t>(ci) * ho + y) * wo + xo] =
            xv[(static_cast<size_t>(ci) * h + y / 2) * w + xo / 2];
  return make_op({c, ho, wo}, std::move(out), {x}, [c, h, w, ho, wo](Node& self) {
    const real* g = self.grad_data();
    real* gx = pgrad(self, 0);
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < ho; ++y)
        for (int xo = 0; xo < wo; ++xo)
          gx[(static_cast<size_t>(ci) * h + y / 2) * w + xo / 2] +=
              g[(static_cast<size_t>(ci) * ho + y) * wo + xo];
  });
}

Tensor crop2d(const Tensor& x, int row0, int col0, int rows, int cols) {
  if (x.shape().size() != 3)
    throw DimensionError("crop2d input must be [C x H x W], got " + shape_str(x.shape()));
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (rows <= 0 || cols <= 0 || row0 < 0 || col0 < 0 || row0 + rows > h || col0 + cols > w)
    throw DimensionError("crop2d window [" + std::to_string(row0) + "," + std::to_string(col0) +
                         " " + std::to_string(rows) + "x" + std::to_string(cols) +
                         "] outside map " + shape_str(x.shape()));
  std::vector<real> out(static_cast<size_t>(c) * rows * cols);
  const real* xv = x.data();
  for (int ci = 0; ci < c; ++ci)
    for (int r = 0; r < rows; ++r)
      for (int q = 0; q < cols; ++q)
        out[(static_cast<size_t>(ci) * rows + r) * cols + q] =
            xv[(static_cast<size_t>(ci) * h + row0 + r) * w + col0 + q];
  return make_op({c, rows, cols}, std::move(out), {x}, [c, h, w, row0, col0, rows, cols](Node& self) {
    const real* g = self.grad_data();
    real* gx = pgrad(self, 0);
    for (int ci = 0; ci < c; ++ci)
      for (int r = 0; r < rows; ++r)
        for (int q = 0; q < cols; ++q)
          gx[(static_cast<size_t>(ci) * h + row0 + r) * w + col0 + q] +=
              g[(static_cast<size_t>(ci) * rows + r) * cols + q];
  });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  int n = shape_size(shape);
  if (n != x.size())
    throw DimensionError("reshape to " + shape_str(shape) + " changes element count from " +
                         std::to_string(x.size()));
  std::vector<real> out(x.data(), x.data() + n);
  return make_op(std::move(shape), std::move(out), {x}, [n](Node& self) {
    const real* g = self.grad_data();
    real* gx = pgrad(self, 0);
    for (int i = 0; i < n; ++i) gx[i] += g[i];
  });
}

Tensor slice(const Tensor& x, int offset, int len) {
  int n = x.size();
  if (len <= 0 || offset < 0 || offset + len > n)
    throw DimensionError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                         ") outside tensor of " + std::to_string(n) + " elements");
  std::vector<real> out(x.data() + offset, x.data() + offset + len);
  return make_op({len}, std::move(out), {x}, [offset, len](Node& self) {
    const real* g = self.grad_data();
    real* gx = pgrad(self, 0);
    for (int i = 0; i < len; ++i) gx[offset + i] += g[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat requires at least one tensor");
  int total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<real> out;
  out.reserve(total);
  std::vector<int> sizes;
  sizes.reserve(parts.size());
  for (const auto& p : parts) {
    out.insert(out.end(), p.data(), p.data() + p.size());
    sizes.push_back(p.size());
  }
  return make_op({total}, std::move(out), parts, [sizes](Node& self) {
    const real* g = self.grad_data();
    int off = 0;
    for (size_t i = 0; i < sizes.size(); ++i) {
      if (self.parents[i]->requires_grad) {
        real* gp = self.parents[i]->grad_data();
        for (int j = 0; j < sizes[i]; ++j) gp[j] += g[off + j];
      }
      off += sizes[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  int n = x.size();
  real s = 0;
  const real* xv = x.data();
  for (int i = 0; i < n; ++i) s += xv[i];
  return make_op({1}, {s}, {x}, [n](Node& self) {
    real g = self.grad_data()[0];
    real* gx = pgrad(self, 0);
    for (int i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor mean(const Tensor& x) {
  int n = x.size();
  real s = 0;
  const real* xv = x.data();
  for (int i = 0; i < n; ++i) s += xv[i];
  return make_op({1}, {s / n}, {x}, [n](Node& self) {
    real g = self.grad_data()[0] / n;
    real* gx = pgrad(self, 0);
    for (int i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "smooth_l1");
  int n = pred.size();
  const real* pv = pred.data();
  const real* tv = target.data();
  real acc = 0;
  for (int i = 0; i < n; ++i) {
    real d = pv[i] - tv[i];
    real a = std::abs(d);
    acc += a < 1 ? real(0.5) * d * d : a - real(0.5);
  }
  return make_op({1}, {acc / n}, {pred, target}, [n](Node& self) {
    real g = self.grad_data()[0] / n;
    const real* pv = pval(self, 0);
    const real* tv = pval(self, 1);
    bool need_p = self.parents[0]->requires_grad;
    bool need_t = self.parents[1]->requires_grad;
    real* gp = need_p ? pgrad(self, 0) : nullptr;
    real* gt = need_t ? pgrad(self, 1) : nullptr;
    for (int i = 0; i < n; ++i) {
      real d = pv[i] - tv[i];
      real dd = std::abs(d) < 1 ? d : (d > 0 ? real(1) : real(-1));
      if (need_p) gp[i] += g * dd;
      if (need_t) gt[i] -= g * dd;
    }
  });
}

namespace {
constexpr real kBceClamp = real(1e-7);
}

Tensor bce(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "bce");
  int n = pred.size();
  const real* pv = pred.data();
  const real* tv = target.data();
  real acc = 0;
  for (int i = 0; i < n; ++i) {
    real p = std::clamp(pv[i], kBceClamp, real(1) - kBceClamp);
    acc += -tv[i] * std::log(p) - (real(1) - tv[i]) * std::log(real(1) - p);
  }
  return make_op({1}, {acc / n}, {pred, target}, [n](Node& self) {
    real g = self.grad_data()[0] / n;
    const real* pv = pval(self, 0);
    const real* tv = pval(self, 1);
    bool need_p = self.parents[0]->requires_grad;
    bool need_t = self.parents[1]->requires_grad;
    real* gp = need_p ? pgrad(self, 0) : nullptr;
    real* gt = need_t ? pgrad(self, 1) : nullptr;
    for (int i = 0; i < n; ++i) {
      real p = std::clamp(pv[i], kBceClamp, real(1) - kBceClamp);
      // True clamp derivative: zero where the clamp is active.
      bool interior = pv[i] > kBceClamp && pv[i] < real(1) - kBceClamp;
      if (need_p && interior) gp[i] += g * (-tv[i] / p + (real(1) - tv[i]) / (real(1) - p));
      if (need_t) gt[i] += g * (-std::log(p) + std::log(real(1) - p));
    }
  });
}

}  // namespace grasp::ad
