// SPDX-License-Identifier: Apache-2.0
//
// A small dense float64 tensor with define-by-run reverse-mode
// differentiation. Every op records its parents and an adjoint rule; `backward`
// replays them once in reverse topological order and then releases the graph.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace normalign {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Adds this node's adjoint into its parents' adjoints.
  std::function<void(Node&)> adjoint;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  /// Convenience for tests: a 2-D tensor from nested rows.
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);
  static Tensor vector(std::vector<double> v, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size() const { return values().size(); }
  /// Rows/cols of a 2-D tensor; a 1-D tensor of length n is one row of n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// In-place access for optimizers and initializers. Only valid on leaves.
  std::span<double> mutable_values();

  /// Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op_result(Shape, std::vector<double>, std::vector<Tensor>,
                               std::function<void(detail::Node&)>);
};

/// While alive on a thread, ops on that thread record no history. Used for
/// evaluation passes.
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

/// Builds an op output; history is recorded only if some parent requires grad.
Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> adjoint);

/// Accumulates d(loss)/d(t) into every reachable tensor that requires grad.
/// The graph is consumed: calling backward again through any of its interior
/// nodes is a ContractError.
void backward(const Tensor& loss);

// --- linear algebra -------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[n×d] + bias[d] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// --- elementwise ------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
/// Subgradient at 0 is 0.
Tensor relu(const Tensor& x);
/// DomainError on any value <= 0.
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
/// max(x, floor); the adjoint passes only where x > floor.
Tensor clamp_min(const Tensor& x, double floor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scalar_mul(x, c); }
inline Tensor operator*(const Tensor& x, double c) { return scalar_mul(x, c); }

// --- reductions -----------------------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [n×d] -> [n]
Tensor sum_rows(const Tensor& x);
/// [n·g × d] -> [n × d], averaging each run of g consecutive rows.
Tensor mean_groups(const Tensor& x, std::size_t group);

// --- shape -------------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
/// Concatenation of 2-D tensors along axis 0 or 1 (1-D tensors: axis 0).
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Rows of x[n×d] at `index`, in order; repeats allowed.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
/// x[i, index[i]] for each row -> [n].
Tensor pick_per_row(const Tensor& x, std::span<const std::size_t> index);
/// Row i of x multiplied by the constant weight[i]; no adjoint for weights.
Tensor scale_rows(const Tensor& x, std::span<const double> weight);

// --- probability ----------------------------------------------------------
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// --- norms and layers ----------------------------------------------------
inline constexpr double kNormEpsilon = 1e-12;
/// Per-row sqrt(sum x^2 + eps), [n×d] -> [n].
Tensor l2_norm_rows(const Tensor& x);
/// Identity forward; backward multiplies the adjoint by -lambda.
Tensor grad_reverse(const Tensor& x, double lambda);
/// Inverted dropout with a constant mask drawn from rng. p == 0 returns x.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

}  // namespace normalign
