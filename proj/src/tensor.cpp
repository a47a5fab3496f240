// SPDX-License-Identifier: Apache-2.0
#include "normalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "normalign/errors.hpp"
#include "normalign/kernels.hpp"

namespace normalign {

using detail::Node;

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "×";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// --- Tensor ------------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  if (shape_size(shape) != values.size())
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty()) throw DimensionError("matrix needs at least one row");
  std::vector<double> v;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw DimensionError("ragged matrix rows");
    v.insert(v.end(), r.begin(), r.end());
  }
  return from({rows.size(), rows.front().size()}, std::move(v), requires_grad);
}

Tensor Tensor::vector(std::vector<double> v, bool requires_grad) {
  const auto n = v.size();
  return from({n}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 2) return s[0];
  if (s.size() <= 1) return 1;
  throw DimensionError("rows() on tensor of shape " + shape_string(s));
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  if (s.empty()) return 1;
  throw DimensionError("cols() on tensor of shape " + shape_string(s));
}

std::span<const double> Tensor::values() const { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (node_->grad.empty())
    node_->grad.assign(node_->value.size(), 0.0);
  else
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw ContractError("mutable_values() on a non-leaf tensor");
  return node_->value;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(Node&)> adjoint) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->leaf = false;
  const bool rg = t_grad_enabled && std::any_of(parents.begin(), parents.end(),
                              [](const Tensor& p) { return p.requires_grad(); });
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->adjoint = std::move(adjoint);
  }
  return Tensor(std::move(n));
}

// --- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (loss.size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward on a loss that does not require grad");

  // Iterative post-order DFS gives a topological order (parents first). The
  // order owns its nodes so releasing parents below frees nothing early.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* node = stack.back().first.get();
    if (!node->leaf && node->released)
      throw ContractError("graph already consumed by a previous backward; run a new forward pass");
    std::size_t& next = stack.back().second;
    if (next < node->parents.size()) {
      std::shared_ptr<Node> p = node->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(stack.back().first));
      stack.pop_back();
    }
  }

  for (const auto& n : order) {
    if (!n->leaf)
      n->grad.assign(n->value.size(), 0.0);
    else if (n->grad.empty())
      n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    if (n->leaf) continue;
    n->adjoint(*n);
    n->adjoint = nullptr;
    n->parents.clear();
    n->released = true;
  }
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

void require_2d(const Tensor& x, const char* op) {
  if (x.dim() != 2)
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_string(x.shape()));
}

// Parent i of a recorded node, or nullptr if it does not take gradients.
Node* grad_parent(Node& out, std::size_t i) {
  Node* p = out.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

template <class F>
Tensor unary(const Tensor& x, F&& f, std::function<void(Node&)> adj) {
  std::vector<double> v(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(xv[i]);
  return make_op_result(x.shape(), std::move(v), {x}, std::move(adj));
}

}  // namespace

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> c(m * n, 0.0);
  kernels::gemm_nn(a.values(), b.values(), c, m, k, n);
  return make_op_result({m, n}, std::move(c), {a, b}, [m, k, n](Node& out) {
    const Node& an = *out.parents[0];
    const Node& bn = *out.parents[1];
    if (Node* pa = grad_parent(out, 0)) kernels::gemm_nt(out.grad, bn.value, pa->grad, m, k, n);
    if (Node* pb = grad_parent(out, 1)) kernels::gemm_tn(an.value, out.grad, pb->grad, m, k, n);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (bias.size() != d || bias.dim() != 1)
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(x.shape()));
  std::vector<double> v(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] += bv[j];
  return make_op_result(x.shape(), std::move(v), {x, bias}, [n, d](Node& out) {
    if (Node* px = grad_parent(out, 0))
      for (std::size_t i = 0; i < n * d; ++i) px->grad[i] += out.grad[i];
    if (Node* pb = grad_parent(out, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) pb->grad[j] += out.grad[i * d + j];
  });
}

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
  return make_op_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Node* p = grad_parent(out, k))
        for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
  return make_op_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    if (Node* p = grad_parent(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i];
    if (Node* p = grad_parent(out, 1))
      for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] -= out.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  return make_op_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    const auto& av = out.parents[0]->value;
    const auto& bv = out.parents[1]->value;
    if (Node* p = grad_parent(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i] * bv[i];
    if (Node* p = grad_parent(out, 1))
      for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i] * av[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) / b.at(i);
  return make_op_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    const auto& av = out.parents[0]->value;
    const auto& bv = out.parents[1]->value;
    if (Node* p = grad_parent(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i] / bv[i];
    if (Node* p = grad_parent(out, 1))
      for (std::size_t i = 0; i < out.grad.size(); ++i)
        p->grad[i] -= out.grad[i] * av[i] / (bv[i] * bv[i]);
  });
}

Tensor scalar_mul(const Tensor& x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += c * out.grad[i];
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < out.grad.size(); ++i)
      if (p->value[i] > 0.0) p->grad[i] += out.grad[i];
  });
}

Tensor log(const Tensor& x) {
  for (double v : x.values())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return unary(x, [](double v) { return std::log(v); }, [](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i] / p->value[i];
  });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i] * out.value[i];
  });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(x, [floor](double v) { return v > floor ? v : floor; }, [floor](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < out.grad.size(); ++i)
      if (p->value[i] > floor) p->grad[i] += out.grad[i];
  });
}

// --- reductions --------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op_result({}, {s}, {x}, [](Node& out) {
    Node* p = out.parents[0].get();
    for (double& g : p->grad) g += out.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  return make_op_result({}, {s * inv}, {x}, [inv](Node& out) {
    Node* p = out.parents[0].get();
    for (double& g : p->grad) g += out.grad[0] * inv;
  });
}

Tensor sum_rows(const Tensor& x) {
  require_2d(x, "sum_rows");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::vector<double> v(n, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i] += xv[i * d + j];
  return make_op_result({n}, std::move(v), {x}, [n, d](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) p->grad[i * d + j] += out.grad[i];
  });
}

Tensor mean_groups(const Tensor& x, std::size_t group) {
  require_2d(x, "mean_groups");
  const std::size_t rows = x.shape()[0], d = x.shape()[1];
  if (group == 0 || rows % group != 0)
    throw DimensionError("mean_groups: " + std::to_string(rows) + " rows not divisible into groups of " +
                         std::to_string(group));
  const std::size_t n = rows / group;
  const double inv = 1.0 / static_cast<double>(group);
  std::vector<double> v(n * d, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < group; ++g)
      for (std::size_t j = 0; j < d; ++j) v[i * d + j] += xv[(i * group + g) * d + j];
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] *= inv;
  }
  return make_op_result({n, d}, std::move(v), {x}, [n, d, group, inv](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t g = 0; g < group; ++g)
        for (std::size_t j = 0; j < d; ++j) p->grad[(i * group + g) * d + j] += out.grad[i * d + j] * inv;
  });
}

// --- shape -------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  std::vector<double> v(x.values().begin(), x.values().end());
  return make_op_result(std::move(shape), std::move(v), {x}, [](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += out.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const std::size_t nd = parts.front().dim();
  if (nd == 1) {
    if (axis != 0) throw DimensionError("concat: 1-D tensors only concatenate on axis 0");
    std::vector<double> v;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
      if (p.dim() != 1) throw DimensionError("concat: mixed ranks " + shape_string(p.shape()));
      offsets.push_back(v.size());
      v.insert(v.end(), p.values().begin(), p.values().end());
    }
    const std::size_t total = v.size();
    return make_op_result({total}, std::move(v), parts, [offsets](Node& out) {
      for (std::size_t k = 0; k < out.parents.size(); ++k)
        if (Node* p = grad_parent(out, k))
          for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += out.grad[offsets[k] + i];
    });
  }
  if (nd != 2 || axis > 1) throw DimensionError("concat supports 1-D or 2-D tensors on axis 0/1");
  for (const auto& p : parts) {
    if (p.dim() != 2 || p.shape()[1 - axis] != parts.front().shape()[1 - axis])
      throw DimensionError("concat: incompatible shapes " + shape_string(parts.front().shape()) +
                           " and " + shape_string(p.shape()) + " on axis " + std::to_string(axis));
  }
  if (axis == 0) {
    std::vector<double> v;
    std::vector<std::size_t> offsets;
    std::size_t rows = 0;
    for (const auto& p : parts) {
      offsets.push_back(v.size());
      v.insert(v.end(), p.values().begin(), p.values().end());
      rows += p.shape()[0];
    }
    const std::size_t cols = parts.front().shape()[1];
    return make_op_result({rows, cols}, std::move(v), parts, [offsets](Node& out) {
      for (std::size_t k = 0; k < out.parents.size(); ++k)
        if (Node* p = grad_parent(out, k))
          for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += out.grad[offsets[k] + i];
    });
  }
  const std::size_t rows = parts.front().shape()[0];
  std::vector<std::size_t> widths, offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    offsets.push_back(total);
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  std::vector<double> v(rows * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(pv.begin() + i * widths[k], widths[k], v.begin() + i * total + offsets[k]);
  }
  return make_op_result({rows, total}, std::move(v), parts, [rows, total, widths, offsets](Node& out) {
    for (std::size_t k = 0; k < out.parents.size(); ++k)
      if (Node* p = grad_parent(out, k))
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            p->grad[i * widths[k] + j] += out.grad[i * total + offsets[k] + j];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_2d(x, "gather_rows");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (index.empty()) throw ContractError("gather_rows: empty index");
  std::vector<double> v(index.size() * d);
  auto xv = x.values();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) throw ContractError("gather_rows: row " + std::to_string(index[r]) + " out of range");
    std::copy_n(xv.begin() + index[r] * d, d, v.begin() + r * d);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op_result({idx.size(), d}, std::move(v), {x}, [idx, d](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) p->grad[idx[r] * d + j] += out.grad[r * d + j];
  });
}

Tensor pick_per_row(const Tensor& x, std::span<const std::size_t> index) {
  require_2d(x, "pick_per_row");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (index.size() != n)
    throw DimensionError("pick_per_row: " + std::to_string(index.size()) + " indices for " +
                         shape_string(x.shape()));
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= c) throw ContractError("pick_per_row: class " + std::to_string(index[i]) + " out of range");
    v[i] = x.at(i, index[i]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op_result({n}, std::move(v), {x}, [idx, c](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < idx.size(); ++i) p->grad[i * c + idx[i]] += out.grad[i];
  });
}

Tensor scale_rows(const Tensor& x, std::span<const double> weight) {
  // A 1-D tensor is treated as a column: one value per row.
  const bool column = x.dim() == 1;
  const std::size_t n = column ? x.shape()[0] : x.rows();
  const std::size_t d = column ? 1 : x.cols();
  if (weight.size() != n)
    throw DimensionError("scale_rows: " + std::to_string(weight.size()) + " weights for " +
                         shape_string(x.shape()));
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = x.values()[i * d + j] * weight[i];
  std::vector<double> w(weight.begin(), weight.end());
  return make_op_result(x.shape(), std::move(v), {x}, [w, d](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < w.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) p->grad[i * d + j] += out.grad[i * d + j] * w[i];
  });
}

// --- probability -------------------------------------------------------------

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> v(x.size());
  kernels::softmax_rows(x.values(), v, n, c);
  return make_op_result(x.shape(), std::move(v), {x}, [n, c](Node& out) {
    Node* p = out.parents[0].get();
    const auto& s = out.value;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += out.grad[i * c + j] * s[i * c + j];
      for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += s[i * c + j] * (out.grad[i * c + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> v(x.size());
  kernels::log_softmax_rows(x.values(), v, n, c);
  return make_op_result(x.shape(), std::move(v), {x}, [n, c](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < n; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += out.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        p->grad[i * c + j] += out.grad[i * c + j] - std::exp(out.value[i * c + j]) * gsum;
    }
  });
}

// --- norms and layers --------------------------------------------------------

Tensor l2_norm_rows(const Tensor& x) {
  require_2d(x, "l2_norm_rows");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::vector<double> v(n);
  kernels::row_l2_norms(x.values(), v, n, d, kNormEpsilon);
  return make_op_result({n}, std::move(v), {x}, [n, d](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < n; ++i) {
      const double s = out.grad[i] / out.value[i];
      for (std::size_t j = 0; j < d; ++j) p->grad[i * d + j] += s * p->value[i * d + j];
    }
  });
}

Tensor grad_reverse(const Tensor& x, double lambda) {
  if (lambda < 0.0) throw ContractError("grad_reverse: lambda must be >= 0");
  std::vector<double> v(x.values().begin(), x.values().end());
  return make_op_result(x.shape(), std::move(v), {x}, [lambda](Node& out) {
    Node* p = out.parents[0].get();
    for (std::size_t i = 0; i < out.grad.size(); ++i) p->grad[i] += -lambda * out.grad[i];
  });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(x.size());
  const double scale = 1.0 / (1.0 - p);
  for (auto& m : mask) m = keep(rng) ? scale : 0.0;
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) * mask[i];
  return make_op_result(x.shape(), std::move(v), {x}, [mask](Node& out) {
    Node* q = out.parents[0].get();
    for (std::size_t i = 0; i < mask.size(); ++i) q->grad[i] += out.grad[i] * mask[i];
  });
}

}  // namespace normalign
