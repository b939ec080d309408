#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace bpgat::ad {

// Dense row-major tensor of doubles. The differentiable ops below work on
// rank-2 tensors (rows x cols); scalars are 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const {
    if (shape_.size() != 2) throw_not_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    if (shape_.size() != 2) throw_not_matrix();
    return shape_[1];
  }

  // Rank 2 only; unchecked.
  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  double item() const;

 private:
  [[noreturn]] void throw_not_matrix() const;

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Named trainable tensors. std::map keeps iteration order lexicographic.
using ParamSet = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

struct BackwardContext {
  const Tensor& out;
  const Tensor& grad_out;
  std::span<const Tensor* const> inputs;
  // nullptr for inputs that do not require gradients.
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Records operations in execution order; backward() walks them in exact
// reverse order. A tape belongs to one thread and one forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Registers a trainable leaf once per name; later calls return the same node.
  Var parameter(const std::string& name, const Tensor& value);
  Var parameter(const ParamSet& params, const std::string& name);

  // Appends a node. `backward` may be empty for non-differentiable results.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Reverse sweep from a scalar root. Throws ShapeError if the root is not
  // scalar, InvalidArgument if it does not depend on any parameter.
  void backward(Var root);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  // Gradient of the last backward() root with respect to node `v`.
  Tensor grad(Var v) const;
  // Gradients for every registered parameter (zeros when unused by the root).
  Gradients parameter_grads() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  std::map<std::string, std::uint32_t> params_;
};

// --- core ops -------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var mul_scalar(Var a, double c);
// a (n x c) + row (1 x c) broadcast over rows.
Var add_row(Var a, Var row);
// a (n x c) - col (n x 1) broadcast over columns.
Var sub_col(Var a, Var col);
// a (n x c) * col (n x 1) broadcast over columns.
Var mul_col(Var a, Var col);
// axis 0 stacks rows, axis 1 stacks columns.
Var concat(const std::vector<Var>& parts, int axis);
Var relu(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var exp(Var a);
// axis 1: (n x c) -> (n x 1); axis 0: (n x c) -> (1 x c). Max-shifted.
Var logsumexp(Var a, int axis);
// Subtracts each row's LSE so every row sums to one in probability space.
Var log_normalize_rows(Var a);
// Softmax of an (n x 1) column within runs of equal, ascending segment ids.
Var segment_softmax(Var values, std::span<const std::uint32_t> segment_ids);
// Row sums per segment; segments without rows yield zero rows.
Var segment_sum(Var values, std::span<const std::uint32_t> segment_ids, std::size_t n_segments);
Var gather_rows(Var a, std::span<const std::uint32_t> index);
Var sum(Var a);
// mean((pred - target)^2) as a 1 x 1 tensor.
Var mse(Var pred, Var target);

// Plain (non-recorded) forward helpers shared with tests.
double logsumexp_values(std::span<const double> xs);

// --- verification ----------------------------------------------------------

using ScalarFn = std::function<Var(Tape&, const ParamSet&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Compares backward() against central differences (f(x+eps) - f(x-eps)) / 2eps
// for every coordinate of every parameter. Coordinates whose absolute
// discrepancy is below `abs_floor` count as exact; otherwise the error is
// |analytic - numeric| / max(|analytic|, |numeric|).
GradCheckResult finite_diff_check(const ScalarFn& f, const ParamSet& params, double eps = 1e-5,
                                  double abs_floor = 1e-8);

// Value and parameter gradients of f at params.
double value_and_grad(const ScalarFn& f, const ParamSet& params, Gradients* grads);

}  // namespace bpgat::ad
