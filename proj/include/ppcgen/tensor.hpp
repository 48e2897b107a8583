#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ppcgen/error.hpp"
#include "ppcgen/rng.hpp"

namespace ppc {

using Shape = std::vector<int64_t>;

namespace detail {

// One node of the dynamically built compute graph. Parent links are enough
// for a reverse sweep; `backprop` reads this node's grad and accumulates
// into the parents' grads.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense 64-bit float tensor (1-D or 2-D throughout this project) with
// reverse-mode autodiff. Copies share the underlying node; use clone() for
// a deep copy. Gradients accumulate across backward() calls until cleared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int64_t dim(int i) const { return shape().at(static_cast<size_t>(i)); }
  int64_t numel() const;
  int64_t rows() const;  // 2-D only
  int64_t cols() const;  // 2-D only
  std::string shape_str() const;

  bool requires_grad() const;
  void set_requires_grad(bool v);  // leaves only

  std::span<const double> data() const;
  std::span<double> mutable_data();
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  double item() const;  // scalar tensors only
  double at(int64_t i) const;
  double at(int64_t r, int64_t c) const;

  Tensor detach() const;  // same values, no graph, no grad requirement
  Tensor clone() const;   // deep copy of values, keeps requires_grad, no graph

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Graph recording can be suspended for pure inference.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_row_vector(const Tensor& x, const Tensor& v);  // [r×c] + [c]
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor gelu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, std::span<const int32_t> ids);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, int64_t start, int64_t count);
Tensor slice_cols(const Tensor& x, int64_t start, int64_t count);
Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [r×c] -> [c]
Tensor cross_entropy(const Tensor& logits, int64_t target);
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int32_t> targets);
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits);
// log of the softmax probability mass on `bag` token indices; stable via
// logsumexp over the bag minus logsumexp over everything.
Tensor bag_log_mass(const Tensor& logits, std::span<const int32_t> bag);
Tensor neg_log_at(const Tensor& dist, int64_t index);

// Reverse sweep from a scalar loss; every reachable requires_grad tensor
// ends with a populated grad buffer. Repeated calls accumulate.
void backward(const Tensor& loss);

// ---- value helpers (no graph) ---------------------------------------------

std::vector<double> softmax_values(std::span<const double> logits);
double kl_divergence_value(std::span<const double> p_logits, std::span<const double> q_logits);
int32_t argmax_lowest(std::span<const double> values);
double l2_norm(std::span<const double> values);
bool all_finite(std::span<const double> values);

}  // namespace ppc
