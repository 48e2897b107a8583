#include "ppcgen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "kernels.hpp"

namespace ppc {

namespace {

thread_local bool g_grad_enabled = true;

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

std::string shape_to_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

NodePtr make_node(Shape shape, bool requires_grad) {
  int64_t count = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_to_str(shape));
    count *= d;
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data.assign(static_cast<size_t>(count), 0.0);
  n->requires_grad = requires_grad;
  return n;
}

bool want_graph(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void accum(TensorNode* node, const double* src, int64_t count, double factor = 1.0) {
  node->ensure_grad();
  double* g = node->grad.data();
  for (int64_t i = 0; i < count; ++i) g[i] += factor * src[i];
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + t.shape_str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// Accepts [c] or [1×c] and returns c; used by the distribution-style ops.
int64_t vector_width(const Tensor& t, const char* op) {
  if (t.ndim() == 1) return t.dim(0);
  if (t.ndim() == 2 && t.dim(0) == 1) return t.dim(1);
  throw ShapeError(std::string(op) + ": expected a vector, got " + t.shape_str());
}

void check_no_nan(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::wrap(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return wrap(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = make_node(std::move(shape), requires_grad);
  std::fill(n->data.begin(), n->data.end(), value);
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = make_node(std::move(shape), requires_grad);
  if (n->data.size() != data.size())
    throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                     shape_to_str(n->shape));
  n->data = std::move(data);
  return wrap(std::move(n));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  auto n = make_node(std::move(shape), requires_grad);
  for (double& v : n->data) v = rng.normal() * stddev;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

const Shape& Tensor::shape() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->shape;
}

int64_t Tensor::numel() const { return node_ ? node_->numel() : 0; }

int64_t Tensor::rows() const {
  require_2d(*this, "rows");
  return dim(0);
}

int64_t Tensor::cols() const {
  require_2d(*this, "cols");
  return dim(1);
}

std::string Tensor::shape_str() const { return node_ ? shape_to_str(node_->shape) : "[undefined]"; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw Error("set_requires_grad on undefined tensor");
  if (!node_->parents.empty()) throw Error("set_requires_grad is only valid on leaf tensors");
  node_->requires_grad = v;
}

std::span<const double> Tensor::data() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw Error("use of undefined tensor");
  return node_->data;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw Error("tensor has no gradient buffer");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw Error("use of undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str());
  return node_->data[0];
}

double Tensor::at(int64_t i) const {
  if (!node_ || i < 0 || i >= numel()) throw IndexError("tensor index out of range");
  return node_->data[static_cast<size_t>(i)];
}

double Tensor::at(int64_t r, int64_t c) const {
  require_2d(*this, "at");
  if (r < 0 || r >= dim(0) || c < 0 || c >= dim(1)) throw IndexError("tensor index out of range");
  return node_->data[static_cast<size_t>(r * dim(1) + c)];
}

Tensor Tensor::detach() const {
  if (!node_) return Tensor();
  auto n = make_node(node_->shape, false);
  n->data = node_->data;
  return wrap(std::move(n));
}

Tensor Tensor::clone() const {
  if (!node_) return Tensor();
  auto n = make_node(node_->shape, node_->requires_grad);
  n->data = node_->data;
  return wrap(std::move(n));
}

// ---- grad mode --------------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- primitives -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() + " vs " + b.shape_str());
  auto out = make_node({m, n}, false);
  kern::matmul_acc(a.data().data(), b.data().data(), out->data.data(), m, k, n);
  if (want_graph({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a.node(), b.node()};
    TensorNode* self = out.get();
    NodePtr an = a.node(), bn = b.node();
    out->backprop = [self, an, bn, m, k, n]() {
      if (an->requires_grad) {
        an->ensure_grad();
        kern::matmul_acc_nt(self->grad.data(), bn->data.data(), an->grad.data(), m, k, n);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        kern::matmul_acc_tn(an->data.data(), self->grad.data(), bn->grad.data(), m, k, n);
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const int64_t r = x.dim(0), c = x.dim(1);
  auto out = make_node({c, r}, false);
  const double* src = x.data().data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out->data[static_cast<size_t>(j * r + i)] = src[i * c + j];
  if (want_graph({&x})) {
    out->requires_grad = true;
    out->parents = {x.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node();
    out->backprop = [self, xn, r, c]() {
      xn->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) xn->grad[static_cast<size_t>(i * c + j)] += self->grad[static_cast<size_t>(j * r + i)];
    };
  }
  return Tensor::wrap(std::move(out));
}

namespace {

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name,
                          double (*fwd)(double, double),
                          void (*bwd)(TensorNode*, TensorNode*, TensorNode*)) {
  require_same_shape(a, b, name);
  auto out = make_node(a.shape(), false);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int64_t i = 0; i < a.numel(); ++i) out->data[static_cast<size_t>(i)] = fwd(pa[i], pb[i]);
  if (want_graph({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a.node(), b.node()};
    TensorNode* self = out.get();
    NodePtr an = a.node(), bn = b.node();
    out->backprop = [self, an, bn, bwd]() { bwd(self, an.get(), bn.get()); };
  }
  return Tensor::wrap(std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](TensorNode* self, TensorNode* an, TensorNode* bn) {
        const int64_t n = self->numel();
        if (an->requires_grad) accum(an, self->grad.data(), n);
        if (bn->requires_grad) accum(bn, self->grad.data(), n);
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](TensorNode* self, TensorNode* an, TensorNode* bn) {
        const int64_t n = self->numel();
        if (an->requires_grad) accum(an, self->grad.data(), n);
        if (bn->requires_grad) accum(bn, self->grad.data(), n, -1.0);
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](TensorNode* self, TensorNode* an, TensorNode* bn) {
        const int64_t n = self->numel();
        if (an->requires_grad) {
          an->ensure_grad();
          for (int64_t i = 0; i < n; ++i) an->grad[static_cast<size_t>(i)] += self->grad[static_cast<size_t>(i)] * bn->data[static_cast<size_t>(i)];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t i = 0; i < n; ++i) bn->grad[static_cast<size_t>(i)] += self->grad[static_cast<size_t>(i)] * an->data[static_cast<size_t>(i)];
        }
      });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](TensorNode* self, TensorNode* an, TensorNode* bn) {
        const int64_t n = self->numel();
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          const size_t u = static_cast<size_t>(i);
          if (an->data[u] <= bn->data[u]) {
            if (an->requires_grad) an->grad[u] += self->grad[u];
          } else if (bn->requires_grad) {
            bn->grad[u] += self->grad[u];
          }
        }
      });
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  require_2d(x, "add_row_vector");
  if (v.ndim() != 1 || v.dim(0) != x.dim(1))
    throw ShapeError("add_row_vector: " + x.shape_str() + " vs " + v.shape_str());
  const int64_t r = x.dim(0), c = x.dim(1);
  auto out = make_node(x.shape(), false);
  const double* px = x.data().data();
  const double* pv = v.data().data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out->data[static_cast<size_t>(i * c + j)] = px[i * c + j] + pv[j];
  if (want_graph({&x, &v})) {
    out->requires_grad = true;
    out->parents = {x.node(), v.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node(), vn = v.node();
    out->backprop = [self, xn, vn, r, c]() {
      if (xn->requires_grad) accum(xn.get(), self->grad.data(), r * c);
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) vn->grad[static_cast<size_t>(j)] += self->grad[static_cast<size_t>(i * c + j)];
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

namespace {

Tensor unary_map(const Tensor& x, const char* name, const std::function<double(double)>& fwd,
                 const std::function<double(double, double)>& grad_of) {
  (void)name;
  auto out = make_node(x.shape(), false);
  const double* px = x.data().data();
  for (int64_t i = 0; i < x.numel(); ++i) out->data[static_cast<size_t>(i)] = fwd(px[i]);
  if (want_graph({&x})) {
    out->requires_grad = true;
    out->parents = {x.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node();
    out->backprop = [self, xn, grad_of]() {
      xn->ensure_grad();
      const int64_t n = self->numel();
      for (int64_t i = 0; i < n; ++i) {
        const size_t u = static_cast<size_t>(i);
        xn->grad[u] += grad_of(xn->data[u], self->data[u]) * self->grad[u];
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

}  // namespace

Tensor scale(const Tensor& x, double factor) {
  return unary_map(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_map(
      x, "add_scalar", [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_map(
      x, "exp", [](double v) { return std::exp(v); },
      [](double, double out) { return out; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lo must not exceed hi");
  return unary_map(
      x, "clamp", [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double in, double) { return (in > lo && in < hi) ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary_map(
      x, "gelu", [](double v) { return kern::gelu(v); },
      [](double in, double) { return kern::gelu_grad(in); });
}

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  check_no_nan(x, "softmax_rows");
  const int64_t r = x.dim(0), c = x.dim(1);
  auto out = make_node(x.shape(), false);
  out->data = std::vector<double>(x.data().begin(), x.data().end());
  for (int64_t i = 0; i < r; ++i) kern::softmax_row(out->data.data() + i * c, c);
  if (want_graph({&x})) {
    out->requires_grad = true;
    out->parents = {x.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node();
    out->backprop = [self, xn, r, c]() {
      xn->ensure_grad();
      for (int64_t i = 0; i < r; ++i) {
        const double* p = self->data.data() + i * c;
        const double* g = self->grad.data() + i * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += p[j] * g[j];
        double* dx = xn->grad.data() + i * c;
        for (int64_t j = 0; j < c; ++j) dx[j] += p[j] * (g[j] - dot);
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_2d(x, "layer_norm_rows");
  const int64_t r = x.dim(0), d = x.dim(1);
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
    throw ShapeError("layer_norm_rows: gain/bias must be [" + std::to_string(d) + "]");
  auto out = make_node(x.shape(), false);
  for (int64_t i = 0; i < r; ++i)
    kern::layer_norm_row(x.data().data() + i * d, gain.data().data(), bias.data().data(), eps, d,
                         out->data.data() + i * d);
  if (want_graph({&x, &gain, &bias})) {
    out->requires_grad = true;
    out->parents = {x.node(), gain.node(), bias.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node(), gn = gain.node(), bn = bias.node();
    out->backprop = [self, xn, gn, bn, r, d, eps]() {
      const double dn = static_cast<double>(d);
      std::vector<double> xhat(static_cast<size_t>(d));
      for (int64_t i = 0; i < r; ++i) {
        const double* px = xn->data.data() + i * d;
        const double* g = self->grad.data() + i * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += px[j];
        mean /= dn;
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double cdev = px[j] - mean;
          var += cdev * cdev;
        }
        var /= dn;
        const double rstd = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) xhat[static_cast<size_t>(j)] = (px[j] - mean) * rstd;
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int64_t j = 0; j < d; ++j) gn->grad[static_cast<size_t>(j)] += g[j] * xhat[static_cast<size_t>(j)];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t j = 0; j < d; ++j) bn->grad[static_cast<size_t>(j)] += g[j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          double mean_dy = 0.0, mean_dy_xhat = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double dy = g[j] * gn->data[static_cast<size_t>(j)];
            mean_dy += dy;
            mean_dy_xhat += dy * xhat[static_cast<size_t>(j)];
          }
          mean_dy /= dn;
          mean_dy_xhat /= dn;
          double* dx = xn->grad.data() + i * d;
          for (int64_t j = 0; j < d; ++j) {
            const double dy = g[j] * gn->data[static_cast<size_t>(j)];
            dx[j] += rstd * (dy - mean_dy - xhat[static_cast<size_t>(j)] * mean_dy_xhat);
          }
        }
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor embedding_lookup(const Tensor& table, std::span<const int32_t> ids) {
  require_2d(table, "embedding_lookup");
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      throw IndexError("embedding_lookup: token id " + std::to_string(id) + " outside vocab of " +
                       std::to_string(v));
  const int64_t t = static_cast<int64_t>(ids.size());
  if (t == 0) throw ShapeError("embedding_lookup: empty id sequence");
  auto out = make_node({t, d}, false);
  const double* src = table.data().data();
  for (int64_t i = 0; i < t; ++i)
    std::copy(src + ids[static_cast<size_t>(i)] * d, src + (ids[static_cast<size_t>(i)] + 1) * d,
              out->data.data() + i * d);
  if (want_graph({&table})) {
    out->requires_grad = true;
    out->parents = {table.node()};
    TensorNode* self = out.get();
    NodePtr tn = table.node();
    std::vector<int32_t> ids_copy(ids.begin(), ids.end());
    out->backprop = [self, tn, ids_copy, d]() {
      tn->ensure_grad();
      for (size_t i = 0; i < ids_copy.size(); ++i) {
        double* dst = tn->grad.data() + static_cast<int64_t>(ids_copy[i]) * d;
        const double* g = self->grad.data() + static_cast<int64_t>(i) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no tensors given");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) require_2d(p, "concat");
  const int64_t fixed = axis == 0 ? parts[0].dim(1) : parts[0].dim(0);
  int64_t total = 0;
  for (const Tensor& p : parts) {
    const int64_t f = axis == 0 ? p.dim(1) : p.dim(0);
    if (f != fixed)
      throw ShapeError("concat: incompatible shapes " + parts[0].shape_str() + " vs " + p.shape_str());
    total += axis == 0 ? p.dim(0) : p.dim(1);
  }
  const int64_t rows = axis == 0 ? total : fixed;
  const int64_t cols = axis == 0 ? fixed : total;
  auto out = make_node({rows, cols}, false);
  if (axis == 0) {
    int64_t row0 = 0;
    for (const Tensor& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out->data.begin() + row0 * cols);
      row0 += p.dim(0);
    }
  } else {
    int64_t col0 = 0;
    for (const Tensor& p : parts) {
      const int64_t pc = p.dim(1);
      for (int64_t i = 0; i < rows; ++i)
        std::copy(p.data().data() + i * pc, p.data().data() + (i + 1) * pc,
                  out->data.data() + i * cols + col0);
      col0 += pc;
    }
  }
  bool any_grad = false;
  for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
  if (g_grad_enabled && any_grad) {
    auto out_tensor = Tensor::wrap(out);
    out->requires_grad = true;
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) {
      out->parents.push_back(p.node());
      nodes.push_back(p.node());
    }
    TensorNode* self = out.get();
    out->backprop = [self, nodes, axis, rows, cols]() {
      if (axis == 0) {
        int64_t row0 = 0;
        for (const NodePtr& p : nodes) {
          const int64_t pr = p->shape[0];
          if (p->requires_grad) accum(p.get(), self->grad.data() + row0 * cols, pr * cols);
          row0 += pr;
        }
      } else {
        int64_t col0 = 0;
        for (const NodePtr& p : nodes) {
          const int64_t pc = p->shape[1];
          if (p->requires_grad) {
            p->ensure_grad();
            for (int64_t i = 0; i < rows; ++i)
              for (int64_t j = 0; j < pc; ++j)
                p->grad[static_cast<size_t>(i * pc + j)] += self->grad[static_cast<size_t>(i * cols + col0 + j)];
          }
          col0 += pc;
        }
      }
    };
    return out_tensor;
  }
  return Tensor::wrap(std::move(out));
}

Tensor concat_rows(std::span<const Tensor> parts) { return concat(parts, 0); }
Tensor concat_cols(std::span<const Tensor> parts) { return concat(parts, 1); }

Tensor slice_rows(const Tensor& x, int64_t start, int64_t count) {
  require_2d(x, "slice_rows");
  const int64_t r = x.dim(0), c = x.dim(1);
  if (start < 0 || count <= 0 || start + count > r)
    throw IndexError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + x.shape_str());
  auto out = make_node({count, c}, false);
  std::copy(x.data().data() + start * c, x.data().data() + (start + count) * c, out->data.data());
  if (want_graph({&x})) {
    out->requires_grad = true;
    out->parents = {x.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node();
    out->backprop = [self, xn, start, count, c]() {
      xn->ensure_grad();
      for (int64_t i = 0; i < count * c; ++i)
        xn->grad[static_cast<size_t>(start * c + i)] += self->grad[static_cast<size_t>(i)];
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor slice_cols(const Tensor& x, int64_t start, int64_t count) {
  require_2d(x, "slice_cols");
  const int64_t r = x.dim(0), c = x.dim(1);
  if (start < 0 || count <= 0 || start + count > c)
    throw IndexError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + x.shape_str());
  auto out = make_node({r, count}, false);
  for (int64_t i = 0; i < r; ++i)
    std::copy(x.data().data() + i * c + start, x.data().data() + i * c + start + count,
              out->data.data() + i * count);
  if (want_graph({&x})) {
    out->requires_grad = true;
    out->parents = {x.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node();
    out->backprop = [self, xn, start, count, r, c]() {
      xn->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < count; ++j)
          xn->grad[static_cast<size_t>(i * c + start + j)] += self->grad[static_cast<size_t>(i * count + j)];
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor reshape(const Tensor& x, Shape shape) {
  int64_t count = 1;
  for (int64_t d : shape) count *= d;
  if (count != x.numel())
    throw ShapeError("reshape: cannot view " + x.shape_str() + " as " + shape_to_str(shape));
  auto out = make_node(std::move(shape), false);
  out->data = std::vector<double>(x.data().begin(), x.data().end());
  if (want_graph({&x})) {
    out->requires_grad = true;
    out->parents = {x.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node();
    out->backprop = [self, xn]() { accum(xn.get(), self->grad.data(), self->numel()); };
  }
  return Tensor::wrap(std::move(out));
}

Tensor sum(const Tensor& x) {
  auto out = make_node({1}, false);
  double total = 0.0;
  for (double v : x.data()) total += v;
  out->data[0] = total;
  if (want_graph({&x})) {
    out->requires_grad = true;
    out->parents = {x.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node();
    out->backprop = [self, xn]() {
      xn->ensure_grad();
      const double g = self->grad[0];
      for (double& d : xn->grad) d += g;
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor mean_rows(const Tensor& x) {
  require_2d(x, "mean_rows");
  const int64_t r = x.dim(0), c = x.dim(1);
  auto out = make_node({c}, false);
  const double* px = x.data().data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out->data[static_cast<size_t>(j)] += px[i * c + j];
  for (int64_t j = 0; j < c; ++j) out->data[static_cast<size_t>(j)] /= static_cast<double>(r);
  if (want_graph({&x})) {
    out->requires_grad = true;
    out->parents = {x.node()};
    TensorNode* self = out.get();
    NodePtr xn = x.node();
    out->backprop = [self, xn, r, c]() {
      xn->ensure_grad();
      const double inv = 1.0 / static_cast<double>(r);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) xn->grad[static_cast<size_t>(i * c + j)] += self->grad[static_cast<size_t>(j)] * inv;
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor cross_entropy(const Tensor& logits, int64_t target) {
  const int64_t c = vector_width(logits, "cross_entropy");
  if (target < 0 || target >= c)
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                     std::to_string(c) + ")");
  const double lse = kern::logsumexp(logits.data().data(), c);
  auto out = make_node({1}, false);
  out->data[0] = lse - logits.data()[static_cast<size_t>(target)];
  if (want_graph({&logits})) {
    out->requires_grad = true;
    out->parents = {logits.node()};
    TensorNode* self = out.get();
    NodePtr zn = logits.node();
    out->backprop = [self, zn, c, target]() {
      zn->ensure_grad();
      std::vector<double> p(zn->data.begin(), zn->data.end());
      kern::softmax_row(p.data(), c);
      const double g = self->grad[0];
      for (int64_t j = 0; j < c; ++j) {
        const double onehot = j == target ? 1.0 : 0.0;
        zn->grad[static_cast<size_t>(j)] += (p[static_cast<size_t>(j)] - onehot) * g;
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int32_t> targets) {
  require_2d(logits, "cross_entropy_rows");
  const int64_t t = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != t)
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                     logits.shape_str());
  for (int32_t y : targets)
    if (y < 0 || y >= c) throw IndexError("cross_entropy_rows: target out of range");
  auto out = make_node({1}, false);
  double total = 0.0;
  for (int64_t i = 0; i < t; ++i) {
    const double* row = logits.data().data() + i * c;
    total += kern::logsumexp(row, c) - row[targets[static_cast<size_t>(i)]];
  }
  out->data[0] = total / static_cast<double>(t);
  if (want_graph({&logits})) {
    out->requires_grad = true;
    out->parents = {logits.node()};
    TensorNode* self = out.get();
    NodePtr zn = logits.node();
    std::vector<int32_t> tgt(targets.begin(), targets.end());
    out->backprop = [self, zn, tgt, t, c]() {
      zn->ensure_grad();
      const double g = self->grad[0] / static_cast<double>(t);
      std::vector<double> p(static_cast<size_t>(c));
      for (int64_t i = 0; i < t; ++i) {
        std::copy(zn->data.begin() + i * c, zn->data.begin() + (i + 1) * c, p.begin());
        kern::softmax_row(p.data(), c);
        double* dz = zn->grad.data() + i * c;
        for (int64_t j = 0; j < c; ++j) dz[j] += p[static_cast<size_t>(j)] * g;
        dz[tgt[static_cast<size_t>(i)]] -= g;
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits) {
  const int64_t c = vector_width(p_logits, "kl_divergence");
  if (vector_width(q_logits, "kl_divergence") != c)
    throw ShapeError("kl_divergence: " + p_logits.shape_str() + " vs " + q_logits.shape_str());
  check_no_nan(p_logits, "kl_divergence");
  check_no_nan(q_logits, "kl_divergence");
  const double lse_p = kern::logsumexp(p_logits.data().data(), c);
  const double lse_q = kern::logsumexp(q_logits.data().data(), c);
  double kl = 0.0;
  for (int64_t j = 0; j < c; ++j) {
    const double lp = p_logits.data()[static_cast<size_t>(j)] - lse_p;
    const double lq = q_logits.data()[static_cast<size_t>(j)] - lse_q;
    kl += std::exp(lp) * (lp - lq);
  }
  auto out = make_node({1}, false);
  out->data[0] = kl;
  if (want_graph({&p_logits, &q_logits})) {
    out->requires_grad = true;
    out->parents = {p_logits.node(), q_logits.node()};
    TensorNode* self = out.get();
    NodePtr pn = p_logits.node(), qn = q_logits.node();
    out->backprop = [self, pn, qn, c, lse_p, lse_q, kl]() {
      const double g = self->grad[0];
      for (int64_t j = 0; j < c; ++j) {
        const size_t u = static_cast<size_t>(j);
        const double lp = pn->data[u] - lse_p;
        const double lq = qn->data[u] - lse_q;
        const double p = std::exp(lp);
        if (pn->requires_grad) {
          pn->ensure_grad();
          pn->grad[u] += p * ((lp - lq) - kl) * g;
        }
        if (qn->requires_grad) {
          qn->ensure_grad();
          qn->grad[u] += (std::exp(lq) - p) * g;
        }
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor bag_log_mass(const Tensor& logits, std::span<const int32_t> bag) {
  const int64_t c = vector_width(logits, "bag_log_mass");
  if (bag.empty()) throw DomainError("bag_log_mass: empty word bag");
  for (int32_t id : bag)
    if (id < 0 || id >= c) throw IndexError("bag_log_mass: bag token id out of range");
  const double lse = kern::logsumexp(logits.data().data(), c);
  std::vector<double> bag_logits;
  bag_logits.reserve(bag.size());
  for (int32_t id : bag) bag_logits.push_back(logits.data()[static_cast<size_t>(id)]);
  const double lse_bag = kern::logsumexp(bag_logits.data(), static_cast<int64_t>(bag_logits.size()));
  auto out = make_node({1}, false);
  out->data[0] = lse_bag - lse;
  if (want_graph({&logits})) {
    out->requires_grad = true;
    out->parents = {logits.node()};
    TensorNode* self = out.get();
    NodePtr zn = logits.node();
    std::vector<int32_t> bag_copy(bag.begin(), bag.end());
    out->backprop = [self, zn, bag_copy, c]() {
      zn->ensure_grad();
      std::vector<double> p(zn->data.begin(), zn->data.end());
      kern::softmax_row(p.data(), c);
      double mass = 0.0;
      for (int32_t id : bag_copy) mass += p[static_cast<size_t>(id)];
      std::vector<char> in_bag(static_cast<size_t>(c), 0);
      for (int32_t id : bag_copy) in_bag[static_cast<size_t>(id)] = 1;
      const double g = self->grad[0];
      for (int64_t j = 0; j < c; ++j) {
        const size_t u = static_cast<size_t>(j);
        const double member = in_bag[u] ? 1.0 / mass : 0.0;
        zn->grad[u] += p[u] * (member - 1.0) * g;
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor neg_log_at(const Tensor& dist, int64_t index) {
  const int64_t c = vector_width(dist, "neg_log_at");
  if (index < 0 || index >= c) throw IndexError("neg_log_at: index out of range");
  const double p = dist.data()[static_cast<size_t>(index)];
  if (!(p > 0.0)) throw NumericError("neg_log_at: probability is not positive");
  auto out = make_node({1}, false);
  out->data[0] = -std::log(p);
  if (want_graph({&dist})) {
    out->requires_grad = true;
    out->parents = {dist.node()};
    TensorNode* self = out.get();
    NodePtr dn = dist.node();
    out->backprop = [self, dn, index]() {
      dn->ensure_grad();
      dn->grad[static_cast<size_t>(index)] += -self->grad[0] / dn->data[static_cast<size_t>(index)];
    };
  }
  return Tensor::wrap(std::move(out));
}

// ---- backward ---------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + loss.shape_str());
  if (!loss.requires_grad()) return;

  // Iterative postorder DFS over the grad-requiring subgraph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (TensorNode* n : order) n->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

// ---- value helpers ------------------------------------------------------------

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (!out.empty()) kern::softmax_row(out.data(), static_cast<int64_t>(out.size()));
  return out;
}

double kl_divergence_value(std::span<const double> p_logits, std::span<const double> q_logits) {
  if (p_logits.size() != q_logits.size() || p_logits.empty())
    throw ShapeError("kl_divergence_value: size mismatch");
  const int64_t c = static_cast<int64_t>(p_logits.size());
  const double lse_p = kern::logsumexp(p_logits.data(), c);
  const double lse_q = kern::logsumexp(q_logits.data(), c);
  double kl = 0.0;
  for (int64_t j = 0; j < c; ++j) {
    const double lp = p_logits[static_cast<size_t>(j)] - lse_p;
    const double lq = q_logits[static_cast<size_t>(j)] - lse_q;
    kl += std::exp(lp) * (lp - lq);
  }
  return kl;
}

int32_t argmax_lowest(std::span<const double> values) {
  if (values.empty()) throw DomainError("argmax_lowest: empty input");
  size_t best = 0;
  for (size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int32_t>(best);
}

double l2_norm(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace ppc
