#pragma once

// Dense double-precision tensors on a reverse-mode differentiation tape.
//
// Every operation records its inputs and a backward closure on the implicit
// tape (nodes are stamped with a creation counter; creation order is a
// topological order by construction). backward(loss) replays the reachable
// part of the tape once, in reverse, accumulating exact analytic gradients
// into every participating tensor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "srdc/errors.hpp"

namespace srdc {

namespace detail {

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated when first needed; empty == all-zero
  bool is_param = false;
  bool needs_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::size_t size() const { return value.size(); }

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Plain (non-recorded) matrix product: C[mxn] += A[mxk] * B[kxn].
inline void matmul_acc(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Cyclic Jacobi eigensolver for a symmetric matrix. A = V diag(w) V^T with
// V's columns the eigenvectors. Deterministic; adequate for the d <= 64
// covariance matrices seen here.
inline void sym_eigen(const std::vector<double>& A, std::size_t d,
                      std::vector<double>& w, std::vector<double>& V) {
  std::vector<double> a = A;
  V.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) V[i * d + i] = 1.0;
  double frob = 0.0;
  for (double x : a) frob += x * x;
  const double tol = 1e-28 * std::max(frob, 1e-300);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) off += 2.0 * a[p * d + q] * a[p * d + q];
    if (off <= tol) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (apq == 0.0) continue;
        const double app = a[p * d + p];
        const double aqq = a[q * d + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < d; ++i) {
          const double aip = a[i * d + p];
          const double aiq = a[i * d + q];
          a[i * d + p] = c * aip - s * aiq;
          a[i * d + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double api = a[p * d + i];
          const double aqi = a[q * d + i];
          a[p * d + i] = c * api - s * aqi;
          a[q * d + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vip = V[i * d + p];
          const double viq = V[i * d + q];
          V[i * d + p] = c * vip - s * viq;
          V[i * d + q] = s * vip + c * viq;
        }
      }
    }
  }
  w.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) w[i] = a[i * d + i];
}

}  // namespace detail

class Tensor {
 public:
  Tensor() : n_(std::make_shared<detail::TensorNode>()) { n_->id = detail::next_node_id(); }

  static Tensor constant(std::vector<std::size_t> shape, std::vector<double> values) {
    detail::require(detail::shape_size(shape) == values.size(),
                    "tensor: value count does not match shape " + detail::shape_str(shape));
    Tensor t;
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(values);
    return t;
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    const std::size_t n = detail::shape_size(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    const std::size_t n = detail::shape_size(shape);
    return constant(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return constant({1, 1}, {v}); }

  // Trainable leaf: participates in backward and keeps an allocated gradient.
  static Tensor param(std::vector<std::size_t> shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.n_->is_param = true;
    t.n_->needs_grad = true;
    t.n_->grad.assign(t.n_->value.size(), 0.0);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return n_->shape; }
  std::size_t ndim() const { return n_->shape.size(); }
  std::size_t size() const { return n_->value.size(); }
  std::size_t rows() const { return n_->shape.empty() ? 0 : n_->shape[0]; }
  std::size_t cols() const { return n_->shape.size() < 2 ? 0 : n_->shape[1]; }

  const std::vector<double>& values() const { return n_->value; }
  std::vector<double>& mutable_values() { return n_->value; }
  double item() const {
    detail::require(size() == 1, "item: tensor is not scalar");
    return n_->value[0];
  }
  double at(std::size_t r, std::size_t c) const {
    detail::require(ndim() == 2 && r < rows() && c < cols(), "at: index out of range");
    return n_->value[r * cols() + c];
  }

  bool requires_grad() const { return n_->is_param; }

  // Gradient of the last backward pass. Zero-filled if the tensor did not
  // participate.
  std::vector<double> grad() const {
    if (n_->grad.size() == n_->value.size()) return n_->grad;
    return std::vector<double>(n_->value.size(), 0.0);
  }

  void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

  // Constant view of the current values; cuts the tape.
  Tensor detach() const { return constant(n_->shape, n_->value); }

  std::shared_ptr<detail::TensorNode> node() const { return n_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> n_;

  friend Tensor make_op(std::vector<std::size_t> shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::TensorNode&)> backward);
};

inline Tensor make_op(std::vector<std::size_t> shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backward) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->id = detail::next_node_id();
  bool needs = false;
  for (const Tensor& p : parents) {
    needs = needs || p.node()->needs_grad;
    node->parents.push_back(p.node());
  }
  node->needs_grad = needs;
  if (needs) node->backward = std::move(backward);
  return Tensor(std::move(node));
}

// Ordered list of the recorded operations reaching a tensor; creation order
// is the topological order.
struct Tape {
  std::vector<detail::TensorNode*> nodes;  // ascending id: inputs precede ops

  static Tape record(const Tensor& root) {
    Tape tape;
    std::vector<detail::TensorNode*> stack{root.node().get()};
    std::unordered_set<detail::TensorNode*> visited;
    while (!stack.empty()) {
      detail::TensorNode* n = stack.back();
      stack.pop_back();
      if (!n->needs_grad || !visited.insert(n).second) continue;
      tape.nodes.push_back(n);
      for (auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(tape.nodes.begin(), tape.nodes.end(),
              [](const detail::TensorNode* a, const detail::TensorNode* b) { return a->id < b->id; });
    return tape;
  }
};

// Reverse pass from a scalar loss. Visits each reachable node exactly once.
inline void backward(const Tensor& loss) {
  detail::require(loss.size() == 1, "backward: loss must be scalar");
  if (!loss.node()->needs_grad) return;
  Tape tape = Tape::record(loss);
  for (detail::TensorNode* n : tape.nodes)
    if (!n->is_param) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad_buffer()[0] = 1.0;
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Primitive suite
// ---------------------------------------------------------------------------

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values())
    if (!std::isfinite(v)) throw numerical_error(std::string(op) + ": non-finite input");
}

inline void axpy(std::vector<double>& dst, const std::vector<double>& src, double a = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  return make_op(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& n) {
    for (int p = 0; p < 2; ++p)
      if (n.parents[p]->needs_grad) detail::axpy(n.parents[p]->grad_buffer(), n.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  return make_op(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& n) {
    if (n.parents[0]->needs_grad) detail::axpy(n.parents[0]->grad_buffer(), n.grad);
    if (n.parents[1]->needs_grad) detail::axpy(n.parents[1]->grad_buffer(), n.grad, -1.0);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  return make_op(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& n) {
    if (n.parents[0]->needs_grad) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.parents[1]->value[i];
    }
    if (n.parents[1]->needs_grad) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.parents[0]->value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * c;
  return make_op(a.shape(), std::move(v), {a}, [c](detail::TensorNode& n) {
    if (n.parents[0]->needs_grad) detail::axpy(n.parents[0]->grad_buffer(), n.grad, c);
  });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + c;
  return make_op(a.shape(), std::move(v), {a}, [](detail::TensorNode& n) {
    if (n.parents[0]->needs_grad) detail::axpy(n.parents[0]->grad_buffer(), n.grad);
  });
}

inline Tensor recip(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / a.values()[i];
  return make_op(a.shape(), std::move(v), {a}, [](detail::TensorNode& n) {
    if (!n.parents[0]->needs_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i] * n.value[i] * n.value[i];
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2 && a.cols() == b.rows(),
                  "matmul: incompatible shapes " + detail::shape_str(a.shape()) + " x " +
                      detail::shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> v(m * n, 0.0);
  detail::matmul_acc(a.values().data(), b.values().data(), v.data(), m, k, n);
  return make_op({m, n}, std::move(v), {a, b}, [m, k, n](detail::TensorNode& node) {
    const auto& ga = node.grad;
    if (node.parents[0]->needs_grad) {
      // dA += dC * B^T
      auto& g = node.parents[0]->grad_buffer();
      const auto& bvals = node.parents[1]->value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = ga[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) g[i * k + p] += gv * bvals[p * n + j];
        }
    }
    if (node.parents[1]->needs_grad) {
      // dB += A^T * dC
      auto& g = node.parents[1]->grad_buffer();
      const auto& avals = node.parents[0]->value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = avals[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) g[p * n + j] += av * ga[i * n + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require(a.ndim() == 2, "transpose: rank-2 tensor required");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = a.values()[i * n + j];
  return make_op({n, m}, std::move(v), {a}, [m, n](detail::TensorNode& node) {
    if (!node.parents[0]->needs_grad) return;
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += node.grad[j * m + i];
  });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a.values()[i]);
  return make_op(a.shape(), std::move(v), {a}, [](detail::TensorNode& n) {
    if (!n.parents[0]->needs_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
  });
}

inline constexpr double kLogFloor = 1e-12;

// log with its argument clamped at kLogFloor; below the floor the slope is 0.
inline Tensor log(const Tensor& a) {
  detail::check_finite(a, "log");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(std::max(a.values()[i], kLogFloor));
  return make_op(a.shape(), std::move(v), {a}, [](detail::TensorNode& n) {
    if (!n.parents[0]->needs_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    const auto& x = n.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > kLogFloor) g[i] += n.grad[i] / x[i];
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  return make_op(a.shape(), std::move(v), {a}, [](detail::TensorNode& n) {
    if (!n.parents[0]->needs_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    const auto& x = n.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += n.grad[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = a.values()[i];
    v[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return make_op(a.shape(), std::move(v), {a}, [](detail::TensorNode& n) {
    if (!n.parents[0]->needs_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
  });
}

// Row-wise softmax with max-shift stabilization. Rows sum to 1 and all
// entries are strictly positive.
inline Tensor softmax_rows(const Tensor& a) {
  detail::require(a.ndim() == 2 && a.cols() >= 1, "softmax_rows: rank-2 tensor required");
  detail::check_finite(a, "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.values().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      v[i * n + j] = std::exp(row[j] - mx);
      s += v[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] /= s;
  }
  return make_op({m, n}, std::move(v), {a}, [m, n](detail::TensorNode& node) {
    if (!node.parents[0]->needs_grad) return;
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = node.value.data() + i * n;
      const double* gy = node.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_op({1, 1}, {s}, {a}, [](detail::TensorNode& n) {
    if (!n.parents[0]->needs_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    for (double& x : g) x += n.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  detail::require(a.size() > 0, "mean: empty tensor");
  double s = 0.0;
  for (double x : a.values()) s += x;
  const double inv = 1.0 / static_cast<double>(a.size());
  return make_op({1, 1}, {s * inv}, {a}, [inv](detail::TensorNode& n) {
    if (!n.parents[0]->needs_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    for (double& x : g) x += n.grad[0] * inv;
  });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2 && a.rows() == b.rows(),
                  "concat_cols: row counts differ");
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  std::vector<double> v(m * (na + nb));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.values().data() + i * na, na, v.data() + i * (na + nb));
    std::copy_n(b.values().data() + i * nb, nb, v.data() + i * (na + nb) + na);
  }
  return make_op({m, na + nb}, std::move(v), {a, b}, [m, na, nb](detail::TensorNode& node) {
    for (std::size_t i = 0; i < m; ++i) {
      if (node.parents[0]->needs_grad) {
        auto& g = node.parents[0]->grad_buffer();
        for (std::size_t j = 0; j < na; ++j) g[i * na + j] += node.grad[i * (na + nb) + j];
      }
      if (node.parents[1]->needs_grad) {
        auto& g = node.parents[1]->grad_buffer();
        for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += node.grad[i * (na + nb) + na + j];
      }
    }
  });
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2 && a.cols() == b.cols(),
                  "concat_rows: column counts differ");
  const std::size_t n = a.cols(), ma = a.rows(), mb = b.rows();
  std::vector<double> v;
  v.reserve((ma + mb) * n);
  v.insert(v.end(), a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return make_op({ma + mb, n}, std::move(v), {a, b}, [ma, n](detail::TensorNode& node) {
    if (node.parents[0]->needs_grad) {
      auto& g = node.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
    if (node.parents[1]->needs_grad) {
      auto& g = node.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[ma * n + i];
    }
  });
}

// Broadcast-add a column vector b (h x 1) to every column of X (h x n).
inline Tensor add_colvec(const Tensor& x, const Tensor& b) {
  detail::require(x.ndim() == 2 && b.ndim() == 2 && b.cols() == 1 && b.rows() == x.rows(),
                  "add_colvec: bias must be rows(x) x 1");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = x.values()[i * n + j] + b.values()[i];
  return make_op({m, n}, std::move(v), {x, b}, [m, n](detail::TensorNode& node) {
    if (node.parents[0]->needs_grad) detail::axpy(node.parents[0]->grad_buffer(), node.grad);
    if (node.parents[1]->needs_grad) {
      auto& g = node.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i] += node.grad[i * n + j];
    }
  });
}

// Squared Euclidean distances between the columns of Z (d x n) and C (d x K),
// as an n x K matrix. Differentiable in both arguments.
inline Tensor pairwise_sqdist(const Tensor& z, const Tensor& c) {
  detail::require(z.ndim() == 2 && c.ndim() == 2 && z.rows() == c.rows(),
                  "pairwise_sqdist: feature dimensions differ");
  const std::size_t d = z.rows(), n = z.cols(), k = c.cols();
  std::vector<double> v(n * k, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double* zr = z.values().data() + r * n;
    const double* cr = c.values().data() + r * k;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double diff = zr[i] - cr[j];
        v[i * k + j] += diff * diff;
      }
  }
  return make_op({n, k}, std::move(v), {z, c}, [d, n, k](detail::TensorNode& node) {
    const auto& zv = node.parents[0]->value;
    const auto& cv = node.parents[1]->value;
    const bool gz = node.parents[0]->needs_grad;
    const bool gc = node.parents[1]->needs_grad;
    auto* zg = gz ? &node.parents[0]->grad_buffer() : nullptr;
    auto* cg = gc ? &node.parents[1]->grad_buffer() : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double g = node.grad[i * k + j];
        if (g == 0.0) continue;
        for (std::size_t r = 0; r < d; ++r) {
          const double diff = zv[r * n + i] - cv[r * k + j];
          if (gz) (*zg)[r * n + i] += 2.0 * g * diff;
          if (gc) (*cg)[r * k + j] -= 2.0 * g * diff;
        }
      }
  });
}

// Inverse principal square root of a symmetric PSD matrix, with eigenvalues
// floored before the power. Backward is the Daleckii-Krein derivative of the
// matrix function, which stays finite for repeated eigenvalues.
inline Tensor sym_inv_sqrt(const Tensor& s, double floor) {
  detail::require(s.ndim() == 2 && s.rows() == s.cols(), "sym_inv_sqrt: square matrix required");
  detail::require(floor > 0.0, "sym_inv_sqrt: floor must be positive");
  detail::check_finite(s, "sym_inv_sqrt");
  const std::size_t d = s.rows();
  std::vector<double> a(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      a[i * d + j] = 0.5 * (s.values()[i * d + j] + s.values()[j * d + i]);
  std::vector<double> w, u;
  detail::sym_eigen(a, d, w, u);
  std::vector<double> h(d), hp(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double lam = std::max(w[i], floor);
    h[i] = 1.0 / std::sqrt(lam);
    hp[i] = w[i] > floor ? -0.5 * std::pow(w[i], -1.5) : 0.0;
  }
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) acc += u[i * d + p] * h[p] * u[j * d + p];
      v[i * d + j] = acc;
    }
  return make_op({d, d}, std::move(v), {s},
                 [d, w, u, h, hp](detail::TensorNode& node) {
                   if (!node.parents[0]->needs_grad) return;
                   // M = U^T dH U; dS = U (G .* M) U^T with divided differences G.
                   std::vector<double> m(d * d, 0.0), tmp(d * d, 0.0);
                   for (std::size_t i = 0; i < d; ++i)
                     for (std::size_t j = 0; j < d; ++j) {
                       double acc = 0.0;
                       for (std::size_t p = 0; p < d; ++p) acc += u[p * d + i] * node.grad[p * d + j];
                       tmp[i * d + j] = acc;
                     }
                   for (std::size_t i = 0; i < d; ++i)
                     for (std::size_t j = 0; j < d; ++j) {
                       double acc = 0.0;
                       for (std::size_t p = 0; p < d; ++p) acc += tmp[i * d + p] * u[p * d + j];
                       m[i * d + j] = acc;
                     }
                   double scale = 1.0;
                   for (std::size_t i = 0; i < d; ++i) scale = std::max(scale, std::abs(w[i]));
                   for (std::size_t i = 0; i < d; ++i)
                     for (std::size_t j = 0; j < d; ++j) {
                       const double di = w[i] - w[j];
                       double g;
                       if (std::abs(di) > 1e-11 * scale)
                         g = (h[i] - h[j]) / di;
                       else
                         g = 0.5 * (hp[i] + hp[j]);
                       m[i * d + j] *= g;
                     }
                   // dS = U M U^T via two d^3 products; upstream S is
                   // symmetric by construction so no extra symmetrization.
                   std::fill(tmp.begin(), tmp.end(), 0.0);
                   detail::matmul_acc(u.data(), m.data(), tmp.data(), d, d, d);
                   auto& out = node.parents[0]->grad_buffer();
                   for (std::size_t i = 0; i < d; ++i)
                     for (std::size_t j = 0; j < d; ++j) {
                       double acc = 0.0;
                       for (std::size_t p = 0; p < d; ++p) acc += tmp[i * d + p] * u[j * d + p];
                       out[i * d + j] += acc;
                     }
                 });
}

// Identity forward, negated-and-scaled backward.
inline Tensor grad_reverse(const Tensor& a, double coef) {
  return make_op(a.shape(), a.values(), {a}, [coef](detail::TensorNode& n) {
    if (n.parents[0]->needs_grad) detail::axpy(n.parents[0]->grad_buffer(), n.grad, -coef);
  });
}

// ---------------------------------------------------------------------------
// Image-shaped primitives (N, C, H, W)
// ---------------------------------------------------------------------------

namespace detail {
inline void check_nchw(const Tensor& x, const char* op) {
  require(x.ndim() == 4, std::string(op) + ": NCHW tensor required");
}
}  // namespace detail

// 2D convolution lowered to im2col + matrix multiply. Zero padding, square
// stride. weight: (Cout, Cin, kh, kw); bias: (Cout, 1).
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     std::size_t stride, std::size_t pad) {
  detail::check_nchw(x, "conv2d");
  detail::require(weight.ndim() == 4, "conv2d: weight must be (Cout,Cin,kh,kw)");
  const std::size_t N = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t Cout = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  detail::require(weight.shape()[1] == Cin, "conv2d: channel mismatch");
  detail::require(bias.ndim() == 2 && bias.rows() == Cout && bias.cols() == 1,
                  "conv2d: bias must be (Cout,1)");
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::require(H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d: kernel larger than input");
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t patch = Cin * kh * kw;

  // column buffer for one image
  auto fill_cols = [=](const double* img, std::vector<double>& cols) {
    std::size_t idx = 0;
    for (std::size_t c = 0; c < Cin; ++c)
      for (std::size_t dy = 0; dy < kh; ++dy)
        for (std::size_t dx = 0; dx < kw; ++dx) {
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + dy) - static_cast<long>(pad);
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + dx) - static_cast<long>(pad);
              cols[idx++] = (iy >= 0 && iy < static_cast<long>(H) && ix >= 0 &&
                             ix < static_cast<long>(W))
                                ? img[(c * H + iy) * W + ix]
                                : 0.0;
            }
          }
        }
  };

  std::vector<double> out(N * Cout * Ho * Wo, 0.0);
  std::vector<double> cols(patch * Ho * Wo);
  for (std::size_t nimg = 0; nimg < N; ++nimg) {
    fill_cols(x.values().data() + nimg * Cin * H * W, cols);
    double* o = out.data() + nimg * Cout * Ho * Wo;
    detail::matmul_acc(weight.values().data(), cols.data(), o, Cout, patch, Ho * Wo);
    for (std::size_t c = 0; c < Cout; ++c) {
      const double b = bias.values()[c];
      for (std::size_t p = 0; p < Ho * Wo; ++p) o[c * Ho * Wo + p] += b;
    }
  }
  return make_op(
      {N, Cout, Ho, Wo}, std::move(out), {x, weight, bias},
      [=](detail::TensorNode& node) {
        const auto& xv = node.parents[0]->value;
        const auto& wv = node.parents[1]->value;
        const bool need_x = node.parents[0]->needs_grad;
        const bool need_w = node.parents[1]->needs_grad;
        const bool need_b = node.parents[2]->needs_grad;
        std::vector<double> cols(patch * Ho * Wo);
        std::vector<double> dcols(patch * Ho * Wo);
        for (std::size_t nimg = 0; nimg < N; ++nimg) {
          const double* go = node.grad.data() + nimg * Cout * Ho * Wo;
          if (need_b) {
            auto& gb = node.parents[2]->grad_buffer();
            for (std::size_t c = 0; c < Cout; ++c)
              for (std::size_t p = 0; p < Ho * Wo; ++p) gb[c] += go[c * Ho * Wo + p];
          }
          if (need_w) {
            fill_cols(xv.data() + nimg * Cin * H * W, cols);
            auto& gw = node.parents[1]->grad_buffer();
            // dW += dOut * cols^T
            for (std::size_t c = 0; c < Cout; ++c)
              for (std::size_t p = 0; p < Ho * Wo; ++p) {
                const double g = go[c * Ho * Wo + p];
                if (g == 0.0) continue;
                for (std::size_t q = 0; q < patch; ++q)
                  gw[c * patch + q] += g * cols[q * Ho * Wo + p];
              }
          }
          if (need_x) {
            // dcols = W^T * dOut, then scatter back (col2im)
            std::fill(dcols.begin(), dcols.end(), 0.0);
            for (std::size_t c = 0; c < Cout; ++c)
              for (std::size_t q = 0; q < patch; ++q) {
                const double w = wv[c * patch + q];
                if (w == 0.0) continue;
                for (std::size_t p = 0; p < Ho * Wo; ++p)
                  dcols[q * Ho * Wo + p] += w * go[c * Ho * Wo + p];
              }
            auto& gx = node.parents[0]->grad_buffer();
            double* gimg = gx.data() + nimg * Cin * H * W;
            std::size_t idx = 0;
            for (std::size_t c = 0; c < Cin; ++c)
              for (std::size_t dy = 0; dy < kh; ++dy)
                for (std::size_t dx = 0; dx < kw; ++dx)
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + dy) - static_cast<long>(pad);
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                      const long ix = static_cast<long>(ox * stride + dx) - static_cast<long>(pad);
                      const double g = dcols[idx++];
                      if (iy >= 0 && iy < static_cast<long>(H) && ix >= 0 &&
                          ix < static_cast<long>(W))
                        gimg[(c * H + iy) * W + ix] += g;
                    }
                  }
          }
        }
      });
}

// Bilinear upsampling by an integer factor (half-pixel centers, edges
// clamped). Linear in its input; backward scatters the same weights.
inline Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
  detail::check_nchw(x, "bilinear_upsample");
  detail::require(factor >= 1, "bilinear_upsample: factor must be >= 1");
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t Ho = H * factor, Wo = W * factor;

  struct Lin {
    std::size_t i0, i1;
    double w0, w1;
  };
  auto axis = [&](std::size_t out, std::size_t in) {
    std::vector<Lin> m(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
      const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      const double w1 = src - static_cast<double>(i0);
      m[o] = {i0, i1, 1.0 - w1, w1};
    }
    return m;
  };
  const auto my = axis(Ho, H);
  const auto mx = axis(Wo, W);

  std::vector<double> out(N * C * Ho * Wo, 0.0);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* src = x.values().data() + nc * H * W;
    double* dst = out.data() + nc * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const Lin& ly = my[oy];
        const Lin& lx = mx[ox];
        dst[oy * Wo + ox] = ly.w0 * (lx.w0 * src[ly.i0 * W + lx.i0] + lx.w1 * src[ly.i0 * W + lx.i1]) +
                            ly.w1 * (lx.w0 * src[ly.i1 * W + lx.i0] + lx.w1 * src[ly.i1 * W + lx.i1]);
      }
  }
  return make_op({N, C, Ho, Wo}, std::move(out), {x}, [=](detail::TensorNode& node) {
    if (!node.parents[0]->needs_grad) return;
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double* gs = g.data() + nc * H * W;
      const double* go = node.grad.data() + nc * Ho * Wo;
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const Lin& ly = my[oy];
          const Lin& lx = mx[ox];
          const double gv = go[oy * Wo + ox];
          gs[ly.i0 * W + lx.i0] += gv * ly.w0 * lx.w0;
          gs[ly.i0 * W + lx.i1] += gv * ly.w0 * lx.w1;
          gs[ly.i1 * W + lx.i0] += gv * ly.w1 * lx.w0;
          gs[ly.i1 * W + lx.i1] += gv * ly.w1 * lx.w1;
        }
    }
  });
}

// (N,C,H,W) -> ((N*H*W), C) so per-pixel channel vectors become matrix rows.
inline Tensor channels_to_rows(const Tensor& x) {
  detail::check_nchw(x, "channels_to_rows");
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  std::vector<double> v(N * H * W * C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < H * W; ++p)
        v[(n * H * W + p) * C + c] = x.values()[(n * C + c) * H * W + p];
  return make_op({N * H * W, C}, std::move(v), {x}, [=](detail::TensorNode& node) {
    if (!node.parents[0]->needs_grad) return;
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < H * W; ++p)
          g[(n * C + c) * H * W + p] += node.grad[(n * H * W + p) * C + c];
  });
}

// Inverse of channels_to_rows.
inline Tensor rows_to_channels(const Tensor& m, std::size_t N, std::size_t C, std::size_t H,
                               std::size_t W) {
  detail::require(m.ndim() == 2 && m.rows() == N * H * W && m.cols() == C,
                  "rows_to_channels: shape mismatch");
  std::vector<double> v(N * C * H * W);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < H * W; ++p)
        v[(n * C + c) * H * W + p] = m.values()[(n * H * W + p) * C + c];
  return make_op({N, C, H, W}, std::move(v), {m}, [=](detail::TensorNode& node) {
    if (!node.parents[0]->needs_grad) return;
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < H * W; ++p)
          g[(n * H * W + p) * C + c] += node.grad[(n * C + c) * H * W + p];
  });
}

// (N,C,H,W) -> (N,C) spatial mean.
inline Tensor global_avg_pool(const Tensor& x) {
  detail::check_nchw(x, "global_avg_pool");
  const std::size_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  std::vector<double> v(N * C, 0.0);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::size_t p = 0; p < HW; ++p) s += x.values()[nc * HW + p];
    v[nc] = s / static_cast<double>(HW);
  }
  return make_op({N, C}, std::move(v), {x}, [=](detail::TensorNode& node) {
    if (!node.parents[0]->needs_grad) return;
    auto& g = node.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t p = 0; p < HW; ++p) g[nc * HW + p] += node.grad[nc] * inv;
  });
}

}  // namespace srdc
