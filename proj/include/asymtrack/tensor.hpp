#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "asymtrack/rng.hpp"

namespace asymtrack {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) {
    if (e <= 0) throw std::invalid_argument("tensor: non-positive extent");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// One node of the dynamically built computation graph. Tensors are thin
// value-semantic handles sharing the node; backward() walks the graph in
// reverse topological order.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode>()) {
    node_->shape = {1};
    node_->value = {0.0};
  }

  static Tensor zeros(const Shape& shape) {
    return from_data(shape, std::vector<double>(shape_numel(shape), 0.0));
  }

  static Tensor full(const Shape& shape, double v) {
    return from_data(shape, std::vector<double>(shape_numel(shape), v));
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  static Tensor from_data(const Shape& shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor: shape/data size mismatch");
    Tensor t;
    t.node_->shape = shape;
    t.node_->value = std::move(data);
    return t;
  }

  // Learnable parameter, uniform in [-bound, bound].
  static Tensor param(const Shape& shape, Rng& rng, double bound) {
    std::int64_t n = shape_numel(shape);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    Tensor t = from_data(shape, std::move(v));
    t.node_->requires_grad = true;
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }

  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& data_mut() { return node_->value; }

  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::vector<double>& grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  double item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return node_->value[0];
  }

  double at(std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }

  bool finite() const {
    for (double v : node_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

  // Drops graph history: same values, leaf node, no gradient flow.
  Tensor detach() const { return from_data(node_->shape, node_->value); }

  // Runs reverse-mode accumulation from this scalar node.
  void backward() const {
    if (numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    // iterative post-order DFS
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        TensorNode* p = n->parents[i++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs,
                          std::function<void(TensorNode&)> bwd) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(value));
  bool any_grad = false;
  for (const auto& t : inputs)
    if (t.requires_grad()) any_grad = true;
  if (any_grad) {
    out.set_requires_grad(true);
    TensorNode* n = out.node();
    n->parents.reserve(inputs.size());
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward_fn = std::move(bwd);
  }
  return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void accumulate(TensorNode& dst, const std::vector<double>& g) {
  dst.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace detail

// ----- elementwise binary -----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.data());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) detail::accumulate(*p, n.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.data());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    if (n.parents[0]->requires_grad) detail::accumulate(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      auto& p = *n.parents[1];
      p.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.data());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "div");
  std::vector<double> v(a.data());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] /= b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        pb.grad[i] -= n.grad[i] * n.value[i] / pb.value[i];
    }
  });
}

inline Tensor vmin(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "vmin");
  std::vector<double> v(a.data());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::min(v[i], b.data()[i]);
  // ties route the gradient to the first argument
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (pa.value[i] <= pb.value[i]) {
        if (pa.requires_grad) pa.grad[i] += n.grad[i];
      } else if (pb.requires_grad) {
        pb.grad[i] += n.grad[i];
      }
    }
  });
}

inline Tensor vmax(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "vmax");
  std::vector<double> v(a.data());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(v[i], b.data()[i]);
  return detail::make_result(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (pa.value[i] >= pb.value[i]) {
        if (pa.requires_grad) pa.grad[i] += n.grad[i];
      } else if (pb.requires_grad) {
        pb.grad[i] += n.grad[i];
      }
    }
  });
}

// ----- elementwise unary / scalar -----

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.data());
  for (auto& x : v) x *= c;
  return detail::make_result(a.shape(), std::move(v), {a}, [c](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
  });
}

inline Tensor shift(const Tensor& a, double c) {
  std::vector<double> v(a.data());
  for (auto& x : v) x += c;
  return detail::make_result(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    detail::accumulate(*n.parents[0], n.grad);
  });
}

inline Tensor vlog(const Tensor& a) {
  std::vector<double> v(a.data());
  for (auto& x : v) x = std::log(x);
  return detail::make_result(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] / p.value[i];
  });
}

inline Tensor vexp(const Tensor& a) {
  std::vector<double> v(a.data());
  for (auto& x : v) x = std::exp(x);
  return detail::make_result(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * n.value[i];
  });
}

inline Tensor vabs(const Tensor& a) {
  std::vector<double> v(a.data());
  for (auto& x : v) x = std::abs(x);
  return detail::make_result(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      p.grad[i] += n.grad[i] * (p.value[i] >= 0.0 ? 1.0 : -1.0);
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.data());
  for (auto& x : v) x = std::max(x, 0.0);
  return detail::make_result(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (p.value[i] > 0.0) p.grad[i] += n.grad[i];
  });
}

inline Tensor gelu(const Tensor& a) {
  // exact form: 0.5 x (1 + erf(x / sqrt(2)))
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> v(a.data());
  for (auto& x : v) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  return detail::make_result(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double x = p.value[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      p.grad[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.data());
  for (auto& x : v) x = 1.0 / (1.0 + std::exp(-x));
  return detail::make_result(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      p.grad[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
  });
}

// Clamp with pass-through gradient strictly inside [lo, hi].
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> v(a.data());
  for (auto& x : v) x = std::min(std::max(x, lo), hi);
  return detail::make_result(a.shape(), std::move(v), {a}, [lo, hi](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (p.value[i] > lo && p.value[i] < hi) p.grad[i] += n.grad[i];
  });
}

// ----- reductions -----

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return detail::make_result({1}, {s}, {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += n.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (double x : a.data()) s += x;
  return detail::make_result({1}, {s * inv}, {a}, [inv](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += n.grad[0] * inv;
  });
}

// ----- shape ops -----

inline Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  return detail::make_result(shape, a.data(), {a}, [](TensorNode& n) {
    detail::accumulate(*n.parents[0], n.grad);
  });
}

inline void check_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor");
}

inline Tensor transpose(const Tensor& a) {
  check_matrix(a, "transpose");
  std::int64_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> v(static_cast<std::size_t>(r * c));
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) v[j * r + i] = a.data()[i * c + j];
  return detail::make_result({c, r}, std::move(v), {a}, [r, c](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) p.grad[i * c + j] += n.grad[j * r + i];
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  std::int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  std::vector<double> v(static_cast<std::size_t>(m * n), 0.0);
  const auto& A = a.data();
  const auto& B = b.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B.data() + p * n;
      double* vrow = v.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) vrow[j] += aip * brow[j];
    }
  return detail::make_result({m, n}, std::move(v), {a, b}, [m, k, n](TensorNode& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = G B^T
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = nd.grad.data() + i * n;
          const double* brow = pb.value.data() + p * n;
          for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          pa.grad[i * k + p] += s;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = A^T G
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          double aip = pa.value[i * k + p];
          if (aip == 0.0) continue;
          const double* grow = nd.grad.data() + i * n;
          double* brow = pb.grad.data() + p * n;
          for (std::int64_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
        }
    }
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty list");
  std::int64_t cols = parts[0].shape()[1], rows = 0;
  for (const auto& p : parts) {
    check_matrix(p, "concat_rows");
    if (p.shape()[1] != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.shape()[0];
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(rows * cols));
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  return detail::make_result({rows, cols}, std::move(v), parts, [](TensorNode& n) {
    std::size_t off = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += n.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

inline Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
  check_matrix(a, "slice_rows");
  std::int64_t rows = a.shape()[0], cols = a.shape()[1];
  if (r0 < 0 || r1 > rows || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
  std::vector<double> v(a.data().begin() + r0 * cols, a.data().begin() + r1 * cols);
  return detail::make_result({r1 - r0, cols}, std::move(v), {a}, [r0, cols](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      p.grad[static_cast<std::size_t>(r0 * cols) + i] += n.grad[i];
  });
}

inline Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
  check_matrix(a, "slice_cols");
  std::int64_t rows = a.shape()[0], cols = a.shape()[1];
  if (c0 < 0 || c1 > cols || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  std::int64_t w = c1 - c0;
  std::vector<double> v(static_cast<std::size_t>(rows * w));
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < w; ++j) v[i * w + j] = a.data()[i * cols + c0 + j];
  return detail::make_result({rows, w}, std::move(v), {a}, [rows, cols, c0, w](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < w; ++j) p.grad[i * cols + c0 + j] += n.grad[i * w + j];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
  std::int64_t rows = parts[0].shape()[0], cols = 0;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    check_matrix(p, "concat_cols");
    if (p.shape()[0] != rows) throw std::invalid_argument("concat_cols: row mismatch");
    widths.push_back(p.shape()[1]);
    cols += p.shape()[1];
  }
  std::vector<double> v(static_cast<std::size_t>(rows * cols));
  std::int64_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::int64_t w = widths[k];
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < w; ++j) v[i * cols + off + j] = parts[k].data()[i * w + j];
    off += w;
  }
  return detail::make_result({rows, cols}, std::move(v), parts,
                             [rows, cols, widths](TensorNode& n) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      std::int64_t w = widths[k];
      auto& p = *n.parents[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < w; ++j)
            p.grad[i * w + j] += n.grad[i * cols + off + j];
      }
      off += w;
    }
  });
}

// Adds a length-C row vector to every row of an R x C matrix.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  check_matrix(m, "add_rowvec");
  std::int64_t rows = m.shape()[0], cols = m.shape()[1];
  if (v.numel() != cols) throw std::invalid_argument("add_rowvec: vector length mismatch");
  std::vector<double> out(m.data());
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) out[i * cols + j] += v.data()[j];
  return detail::make_result({rows, cols}, std::move(out), {m, v}, [rows, cols](TensorNode& n) {
    auto& pm = *n.parents[0];
    auto& pv = *n.parents[1];
    if (pm.requires_grad) detail::accumulate(pm, n.grad);
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j) pv.grad[j] += n.grad[i * cols + j];
    }
  });
}

// ----- softmax -----

namespace detail {
inline void softmax_into(const double* x, double* p, std::int64_t n, double t) {
  double m = x[0];
  for (std::int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double z = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    p[i] = std::exp((x[i] - m) / t);
    z += p[i];
  }
  for (std::int64_t i = 0; i < n; ++i) p[i] /= z;
}
}  // namespace detail

// Temperature-scaled softmax over a rank-1 tensor, max-subtracted.
inline Tensor softmax_t(const Tensor& logits, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("softmax_t: temperature must be positive");
  if (logits.rank() != 1 || logits.numel() < 1)
    throw std::invalid_argument("softmax_t: expected non-empty rank-1 tensor");
  if (!logits.finite()) throw std::invalid_argument("softmax_t: non-finite logits");
  std::int64_t n = logits.numel();
  std::vector<double> p(static_cast<std::size_t>(n));
  detail::softmax_into(logits.data().data(), p.data(), n, temperature);
  return detail::make_result({n}, std::move(p), {logits}, [n, temperature](TensorNode& nd) {
    auto& px = *nd.parents[0];
    px.ensure_grad();
    double dot = 0.0;
    for (std::int64_t i = 0; i < n; ++i) dot += nd.grad[i] * nd.value[i];
    for (std::int64_t i = 0; i < n; ++i)
      px.grad[i] += nd.value[i] * (nd.grad[i] - dot) / temperature;
  });
}

// Row-wise softmax of a matrix (used for attention weights).
inline Tensor softmax_rows(const Tensor& m, double temperature = 1.0) {
  check_matrix(m, "softmax_rows");
  if (temperature <= 0.0) throw std::invalid_argument("softmax_rows: temperature must be positive");
  std::int64_t rows = m.shape()[0], cols = m.shape()[1];
  std::vector<double> p(m.data().size());
  for (std::int64_t i = 0; i < rows; ++i)
    detail::softmax_into(m.data().data() + i * cols, p.data() + i * cols, cols, temperature);
  return detail::make_result({rows, cols}, std::move(p), {m},
                             [rows, cols, temperature](TensorNode& nd) {
    auto& px = *nd.parents[0];
    px.ensure_grad();
    for (std::int64_t i = 0; i < rows; ++i) {
      const double* g = nd.grad.data() + i * cols;
      const double* v = nd.value.data() + i * cols;
      double dot = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) dot += g[j] * v[j];
      for (std::int64_t j = 0; j < cols; ++j)
        px.grad[i * cols + j] += v[j] * (g[j] - dot) / temperature;
    }
  });
}

// ----- normalization -----

// Per-row layer normalization with affine parameters gamma, beta (length = cols).
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-6) {
  check_matrix(x, "layer_norm_rows");
  std::int64_t rows = x.shape()[0], cols = x.shape()[1];
  if (gamma.numel() != cols || beta.numel() != cols)
    throw std::invalid_argument("layer_norm_rows: affine parameter length mismatch");
  std::vector<double> out(x.data().size());
  std::vector<double> xhat(x.data().size());
  std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = x.data().data() + i * cols;
    double mu = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) mu += row[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(cols);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(i)] = is;
    for (std::int64_t j = 0; j < cols; ++j) {
      double h = (row[j] - mu) * is;
      xhat[i * cols + j] = h;
      out[i * cols + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  return detail::make_result(
      {rows, cols}, std::move(out), {x, gamma, beta},
      [rows, cols, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](TensorNode& n) {
        auto& px = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* g = n.grad.data() + i * cols;
          const double* h = xhat.data() + i * cols;
          if (pg.requires_grad)
            for (std::int64_t j = 0; j < cols; ++j) pg.grad[j] += g[j] * h[j];
          if (pb.requires_grad)
            for (std::int64_t j = 0; j < cols; ++j) pb.grad[j] += g[j];
          if (px.requires_grad) {
            double is = inv_sigma[static_cast<std::size_t>(i)];
            double mean_gg = 0.0, mean_ggh = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) {
              double gg = g[j] * pg.value[j];
              mean_gg += gg;
              mean_ggh += gg * h[j];
            }
            mean_gg /= static_cast<double>(cols);
            mean_ggh /= static_cast<double>(cols);
            for (std::int64_t j = 0; j < cols; ++j) {
              double gg = g[j] * pg.value[j];
              px.grad[i * cols + j] += is * (gg - mean_gg - h[j] * mean_ggh);
            }
          }
        }
      });
}

// Inference-mode batch normalization over a (C, H, W) tensor: fixed per-channel
// statistics, learnable affine.
inline Tensor batch_norm_chw(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             const std::vector<double>& mean, const std::vector<double>& var,
                             double eps = 1e-5) {
  if (x.rank() != 3) throw std::invalid_argument("batch_norm_chw: expected (C,H,W) tensor");
  std::int64_t C = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  if (gamma.numel() != C || beta.numel() != C ||
      static_cast<std::int64_t>(mean.size()) != C || static_cast<std::int64_t>(var.size()) != C)
    throw std::invalid_argument("batch_norm_chw: per-channel size mismatch");
  std::vector<double> out(x.data().size());
  std::vector<double> inv_sigma(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) {
    double is = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
    inv_sigma[static_cast<std::size_t>(c)] = is;
    for (std::int64_t i = 0; i < hw; ++i)
      out[c * hw + i] = gamma.data()[c] * (x.data()[c * hw + i] - mean[static_cast<std::size_t>(c)]) * is +
                        beta.data()[c];
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [C, hw, mean, inv_sigma = std::move(inv_sigma)](TensorNode& n) {
        auto& px = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::int64_t c = 0; c < C; ++c) {
          double is = inv_sigma[static_cast<std::size_t>(c)];
          for (std::int64_t i = 0; i < hw; ++i) {
            double g = n.grad[c * hw + i];
            if (px.requires_grad) px.grad[c * hw + i] += g * pg.value[c] * is;
            if (pg.requires_grad)
              pg.grad[c] += g * (px.value[c * hw + i] - mean[static_cast<std::size_t>(c)]) * is;
            if (pb.requires_grad) pb.grad[c] += g;
          }
        }
      });
}

// ----- convolution -----

// 2-D convolution, stride 1: x (C,H,W), w (O,C,kh,kw), b (O), symmetric zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t pad) {
  if (x.rank() != 3 || w.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
  std::int64_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  std::int64_t O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (b.numel() != O) throw std::invalid_argument("conv2d: bias length mismatch");
  std::int64_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");
  std::vector<double> out(static_cast<std::size_t>(O * Ho * Wo));
  const auto& X = x.data();
  const auto& Wt = w.data();
  for (std::int64_t o = 0; o < O; ++o)
    for (std::int64_t i = 0; i < Ho; ++i)
      for (std::int64_t j = 0; j < Wo; ++j) {
        double s = b.data()[o];
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t u = 0; u < kh; ++u) {
            std::int64_t ii = i + u - pad;
            if (ii < 0 || ii >= H) continue;
            for (std::int64_t v = 0; v < kw; ++v) {
              std::int64_t jj = j + v - pad;
              if (jj < 0 || jj >= W) continue;
              s += X[(c * H + ii) * W + jj] * Wt[((o * C + c) * kh + u) * kw + v];
            }
          }
        out[(o * Ho + i) * Wo + j] = s;
      }
  return detail::make_result(
      {O, Ho, Wo}, std::move(out), {x, w, b},
      [C, H, W, O, kh, kw, pad, Ho, Wo](TensorNode& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        auto& pb = *n.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::int64_t o = 0; o < O; ++o)
          for (std::int64_t i = 0; i < Ho; ++i)
            for (std::int64_t j = 0; j < Wo; ++j) {
              double g = n.grad[(o * Ho + i) * Wo + j];
              if (g == 0.0) continue;
              if (pb.requires_grad) pb.grad[o] += g;
              for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t u = 0; u < kh; ++u) {
                  std::int64_t ii = i + u - pad;
                  if (ii < 0 || ii >= H) continue;
                  for (std::int64_t v = 0; v < kw; ++v) {
                    std::int64_t jj = j + v - pad;
                    if (jj < 0 || jj >= W) continue;
                    if (px.requires_grad)
                      px.grad[(c * H + ii) * W + jj] +=
                          g * pw.value[((o * C + c) * kh + u) * kw + v];
                    if (pw.requires_grad)
                      pw.grad[((o * C + c) * kh + u) * kw + v] +=
                          g * px.value[(c * H + ii) * W + jj];
                  }
                }
            }
      });
}

}  // namespace asymtrack
