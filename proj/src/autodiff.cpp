#include "bpgat/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bpgat/errors.hpp"

namespace bpgat::ad {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  values_.assign(n, fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != values_.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " + std::to_string(n) +
                     " values, got " + std::to_string(values_.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

void Tensor::throw_not_matrix() const {
  throw ShapeError("expected a rank-2 tensor, got " + shape_string(shape_));
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on a tensor with " + std::to_string(values_.size()) + " values");
  return values_[0];
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(const std::string& name, const Tensor& value) {
  if (auto it = params_.find(name); it != params_.end()) return Var(this, it->second);
  nodes_.push_back(Node{value, {}, false, true, {}, {}});
  auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  params_.emplace(name, id);
  return Var(this, id);
}

Var Tape::parameter(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ConfigMismatch("missing parameter '" + name + "'");
  return parameter(name, it->second);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const auto& v : inputs) {
    if (&v.tape() != this) throw InvalidArgument("op mixes nodes from different tapes");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw InvalidArgument("backward root belongs to another tape");
  Node& r = nodes_[root.id()];
  if (r.value.size() != 1) throw ShapeError("backward root must be scalar, got " + shape_string(r.value.shape()));
  if (!r.requires_grad) throw InvalidArgument("backward root does not depend on any parameter");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  r.grad = Tensor(r.value.shape(), 1.0);
  r.has_grad = true;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::int64_t id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (auto in : n.inputs) {
      Node& src = nodes_[in];
      in_values.push_back(&src.value);
      if (src.requires_grad) {
        if (!src.has_grad) {
          src.grad = Tensor(src.value.shape(), 0.0);
          src.has_grad = true;
        }
        in_grads.push_back(&src.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(BackwardContext{n.value, n.grad, in_values, in_grads});
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? n.grad : Tensor(n.value.shape(), 0.0);
}

Gradients Tape::parameter_grads() const {
  Gradients out;
  for (const auto& [name, id] : params_) out.emplace(name, grad(Var(const_cast<Tape*>(this), id)));
  return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <class F>
Var unary_elementwise(Var a, F&& f, std::function<double(double x, double y)> dydx) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(std::move(out), {a}, [dydx](const BackwardContext& c) {
    const Tensor& xv = *c.inputs[0];
    for (std::size_t i = 0; i < xv.size(); ++i) (*c.input_grads[0])[i] += c.grad_out[i] * dydx(xv[i], c.out[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k) {
    throw ShapeError("matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  Tensor out = Tensor::zeros(n, m);
  const double* pa = A.data();
  const double* pb = B.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) po[i * m + j] += av * pb[p * m + j];
    }
  }
  return a.tape().record(std::move(out), {a, b}, [n, k, m](const BackwardContext& c) {
    const double* pa = c.inputs[0]->data();
    const double* pb = c.inputs[1]->data();
    const double* pg = c.grad_out.data();
    if (Tensor* gA = c.input_grads[0]) {
      double* ga = gA->data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += pg[i * m + j] * pb[p * m + j];
          ga[i * k + p] += acc;
        }
    }
    if (Tensor* gB = c.input_grads[1]) {
      double* gb = gB->data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += av * pg[i * m + j];
        }
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](const BackwardContext& c) {
    for (int s = 0; s < 2; ++s)
      if (Tensor* g = c.input_grads[s])
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i];
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](const BackwardContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i];
    if (Tensor* g = c.input_grads[1])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= c.grad_out[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](const BackwardContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i] * (*c.inputs[1])[i];
    if (Tensor* g = c.input_grads[1])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i] * (*c.inputs[0])[i];
  });
}

Var mul_scalar(Var a, double k) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= k;
  return a.tape().record(std::move(out), {a}, [k](const BackwardContext& c) {
    for (std::size_t i = 0; i < c.grad_out.size(); ++i) (*c.input_grads[0])[i] += k * c.grad_out[i];
  });
}

Var add_row(Var a, Var row) {
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) {
    throw ShapeError("add_row: " + shape_string(A.shape()) + " + " + shape_string(R.shape()));
  }
  Tensor out = A;
  const std::size_t n = A.rows(), m = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += R(0, j);
  return a.tape().record(std::move(out), {a, row}, [n, m](const BackwardContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i];
    if (Tensor* g = c.input_grads[1])
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)(0, j) += c.grad_out(i, j);
  });
}

Var sub_col(Var a, Var col) {
  const Tensor& A = a.value();
  const Tensor& C = col.value();
  if (C.cols() != 1 || C.rows() != A.rows()) {
    throw ShapeError("sub_col: " + shape_string(A.shape()) + " - " + shape_string(C.shape()));
  }
  Tensor out = A;
  const std::size_t n = A.rows(), m = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) -= C(i, 0);
  return a.tape().record(std::move(out), {a, col}, [n, m](const BackwardContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i];
    if (Tensor* g = c.input_grads[1])
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)(i, 0) -= c.grad_out(i, j);
  });
}

Var mul_col(Var a, Var col) {
  const Tensor& A = a.value();
  const Tensor& C = col.value();
  if (C.cols() != 1 || C.rows() != A.rows()) {
    throw ShapeError("mul_col: " + shape_string(A.shape()) + " * " + shape_string(C.shape()));
  }
  Tensor out = A;
  const std::size_t n = A.rows(), m = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) *= C(i, 0);
  return a.tape().record(std::move(out), {a, col}, [n, m](const BackwardContext& c) {
    const Tensor& A = *c.inputs[0];
    const Tensor& C = *c.inputs[1];
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)(i, j) += c.grad_out(i, j) * C(i, 0);
    if (Tensor* g = c.input_grads[1])
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)(i, 0) += c.grad_out(i, j) * A(i, j);
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  if (axis != 0 && axis != 1) throw ShapeError("concat axis must be 0 or 1");
  Tape& tape = parts.front().tape();
  std::vector<std::size_t> extents;
  std::size_t rows = parts.front().rows();
  std::size_t cols = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    if (axis == 0 && t.cols() != cols) throw ShapeError("concat(axis 0): column count mismatch");
    if (axis == 1 && t.rows() != rows) throw ShapeError("concat(axis 1): row count mismatch");
    extents.push_back(axis == 0 ? t.rows() : t.cols());
    total += extents.back();
  }
  Tensor out = axis == 0 ? Tensor::zeros(total, cols) : Tensor::zeros(rows, total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) {
        if (axis == 0) out(offset + i, j) = t(i, j);
        else out(i, offset + j) = t(i, j);
      }
    offset += extents[p];
  }
  return tape.record(std::move(out), parts, [axis, extents](const BackwardContext& c) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      if (Tensor* g = c.input_grads[p]) {
        for (std::size_t i = 0; i < g->rows(); ++i)
          for (std::size_t j = 0; j < g->cols(); ++j)
            (*g)(i, j) += axis == 0 ? c.grad_out(offset + i, j) : c.grad_out(i, offset + j);
      }
      offset += extents[p];
    }
  });
}

Var relu(Var a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary_elementwise(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var exp(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

double logsumexp_values(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  double hi = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

Var logsumexp(Var a, int axis) {
  const Tensor& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (axis != 0 && axis != 1) throw ShapeError("logsumexp axis must be 0 or 1");
  Tensor out = axis == 1 ? Tensor::zeros(n, 1) : Tensor::zeros(1, m);
  std::vector<double> buf;
  if (axis == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      buf.assign(A.data() + i * m, A.data() + (i + 1) * m);
      out(i, 0) = logsumexp_values(buf);
    }
  } else {
    for (std::size_t j = 0; j < m; ++j) {
      buf.clear();
      for (std::size_t i = 0; i < n; ++i) buf.push_back(A(i, j));
      out(0, j) = logsumexp_values(buf);
    }
  }
  return a.tape().record(std::move(out), {a}, [axis, n, m](const BackwardContext& c) {
    const Tensor& A = *c.inputs[0];
    Tensor& g = *c.input_grads[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double lse = axis == 1 ? c.out(i, 0) : c.out(0, j);
        double up = axis == 1 ? c.grad_out(i, 0) : c.grad_out(0, j);
        g(i, j) += up * std::exp(A(i, j) - lse);
      }
  });
}

Var log_normalize_rows(Var a) { return sub_col(a, logsumexp(a, 1)); }

namespace {

void check_segments(std::span<const std::uint32_t> ids, std::size_t rows, const char* op) {
  if (ids.size() != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(ids.size()) + " segment ids for " +
                     std::to_string(rows) + " rows");
  }
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (ids[i] < ids[i - 1]) throw InvalidArgument(std::string(op) + ": segment ids must be sorted ascending");
  }
}

}  // namespace

Var segment_softmax(Var values, std::span<const std::uint32_t> segment_ids) {
  const Tensor& X = values.value();
  if (X.cols() != 1) throw ShapeError("segment_softmax expects an (n x 1) column");
  const std::size_t n = X.rows();
  check_segments(segment_ids, n, "segment_softmax");
  std::vector<std::uint32_t> ids(segment_ids.begin(), segment_ids.end());
  Tensor out = Tensor::zeros(n, 1);
  for (std::size_t b = 0; b < n;) {
    std::size_t e = b;
    double hi = -std::numeric_limits<double>::infinity();
    while (e < n && ids[e] == ids[b]) hi = std::max(hi, X[e++]);
    double z = 0.0;
    for (std::size_t i = b; i < e; ++i) z += (out[i] = std::exp(X[i] - hi));
    for (std::size_t i = b; i < e; ++i) out[i] /= z;
    b = e;
  }
  return values.tape().record(std::move(out), {values}, [ids = std::move(ids)](const BackwardContext& c) {
    const std::size_t n = ids.size();
    Tensor& g = *c.input_grads[0];
    for (std::size_t b = 0; b < n;) {
      std::size_t e = b;
      double dot = 0.0;
      while (e < n && ids[e] == ids[b]) {
        dot += c.grad_out[e] * c.out[e];
        ++e;
      }
      for (std::size_t i = b; i < e; ++i) g[i] += c.out[i] * (c.grad_out[i] - dot);
      b = e;
    }
  });
}

Var segment_sum(Var values, std::span<const std::uint32_t> segment_ids, std::size_t n_segments) {
  const Tensor& X = values.value();
  const std::size_t n = X.rows(), m = X.cols();
  check_segments(segment_ids, n, "segment_sum");
  if (n > 0 && segment_ids.back() >= n_segments) throw ShapeError("segment_sum: segment id out of range");
  std::vector<std::uint32_t> ids(segment_ids.begin(), segment_ids.end());
  Tensor out = Tensor::zeros(n_segments, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(ids[i], j) += X(i, j);
  return values.tape().record(std::move(out), {values}, [ids = std::move(ids), m](const BackwardContext& c) {
    Tensor& g = *c.input_grads[0];
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) g(i, j) += c.grad_out(ids[i], j);
  });
}

Var gather_rows(Var a, std::span<const std::uint32_t> index) {
  const Tensor& A = a.value();
  const std::size_t m = A.cols();
  Tensor out = Tensor::zeros(index.size(), m);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= A.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(A.data() + index[i] * m, m, out.data() + i * m);
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return a.tape().record(std::move(out), {a}, [idx = std::move(idx), m](const BackwardContext& c) {
    Tensor& g = *c.input_grads[0];
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) g(idx[i], j) += c.grad_out(i, j);
  });
}

Var sum(Var a) {
  const Tensor& A = a.value();
  double s = 0.0;
  for (double v : A.values()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [](const BackwardContext& c) {
    const double up = c.grad_out[0];
    for (double& g : c.input_grads[0]->values()) g += up;
  });
}

Var mse(Var pred, Var target) {
  require_same_shape(pred.value(), target.value(), "mse");
  const Tensor& P = pred.value();
  const Tensor& T = target.value();
  if (P.size() == 0) throw ShapeError("mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) s += (P[i] - T[i]) * (P[i] - T[i]);
  const double n = static_cast<double>(P.size());
  return pred.tape().record(Tensor::scalar(s / n), {pred, target}, [n](const BackwardContext& c) {
    const Tensor& P = *c.inputs[0];
    const Tensor& T = *c.inputs[1];
    const double up = c.grad_out[0];
    for (std::size_t i = 0; i < P.size(); ++i) {
      double d = 2.0 * (P[i] - T[i]) / n * up;
      if (c.input_grads[0]) (*c.input_grads[0])[i] += d;
      if (c.input_grads[1]) (*c.input_grads[1])[i] -= d;
    }
  });
}

double value_and_grad(const ScalarFn& f, const ParamSet& params, Gradients* grads) {
  Tape tape;
  Var root = f(tape, params);
  double v = root.value().item();
  if (grads) {
    tape.backward(root);
    *grads = tape.parameter_grads();
  }
  return v;
}

GradCheckResult finite_diff_check(const ScalarFn& f, const ParamSet& params, double eps, double abs_floor) {
  Gradients analytic;
  value_and_grad(f, params, &analytic);
  GradCheckResult result;
  ParamSet probe = params;
  for (auto& [name, tensor] : probe) {
    auto it = analytic.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + eps;
      double up = value_and_grad(f, probe, nullptr);
      tensor[i] = orig - eps;
      double down = value_and_grad(f, probe, nullptr);
      tensor[i] = orig;
      double numeric = (up - down) / (2.0 * eps);
      double exact = it == analytic.end() ? 0.0 : it->second[i];
      double diff = std::abs(exact - numeric);
      double rel = diff < abs_floor ? 0.0 : diff / std::max(std::abs(exact), std::abs(numeric));
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace bpgat::ad
