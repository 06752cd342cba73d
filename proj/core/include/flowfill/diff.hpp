#pragma once

// Reverse-mode differentiation over dense row-major matrices, the Adam
// optimizer, and a central-difference gradient used as the reference check.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flowfill/types.hpp"

namespace flowfill::diff {

struct TensorSpec {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;

  Index size() const { return rows * cols; }
};

namespace detail {

// Named dense tensors stored back to back in one flat vector. Tensors are
// appended but never reshaped.
class TensorSet {
 public:
  std::size_t add(std::string name, Index rows, Index cols);

  std::size_t count() const { return specs_.size(); }
  Index flat_size() const { return flat_.size(); }
  const TensorSpec& spec(std::size_t i) const { return specs_.at(i); }
  const std::vector<TensorSpec>& specs() const { return specs_; }
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  Eigen::Map<Matrix> tensor(std::size_t i);
  Eigen::Map<const Matrix> tensor(std::size_t i) const;
  Eigen::Map<Matrix> tensor(std::string_view name) { return tensor(index_of(name)); }
  Eigen::Map<const Matrix> tensor(std::string_view name) const {
    return tensor(index_of(name));
  }

  Vector& flat() { return flat_; }
  const Vector& flat() const { return flat_; }

  bool same_layout(const TensorSet& other) const;
  bool all_finite() const { return flat_.allFinite(); }

 protected:
  TensorSet() = default;

 private:
  std::vector<TensorSpec> specs_;
  std::unordered_map<std::string, std::size_t> by_name_;
  Vector flat_;
};

}  // namespace detail

class ParamSet : public detail::TensorSet {
 public:
  ParamSet() = default;
};

// dLoss/dParam, laid out exactly like the ParamSet it was taken against.
class GradientSet : public detail::TensorSet {
 public:
  GradientSet() = default;
  explicit GradientSet(const ParamSet& like);
};

struct Var {
  std::size_t id = 0;
};

// Tape handles for every tensor of one ParamSet, in ParamSet order.
class Binding {
 public:
  Var operator[](std::size_t i) const { return vars_.at(i); }
  std::size_t size() const { return vars_.size(); }
  bool trainable() const { return trainable_; }

 private:
  friend class Tape;
  std::vector<Var> vars_;
  bool trainable_ = false;
};

// Records a computation as it is evaluated; backward() walks it in reverse.
// Nodes that do not depend on any trainable leaf never receive gradients.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  // trainable=false binds the values as constants: a stop-gradient boundary.
  Binding bind(const ParamSet& params, bool trainable);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1. root must be 1x1.
  void backward(Var root);

  // Empty matrix when no gradient reached v.
  const Matrix& grad(Var v) const { return grads_.at(v.id); }

  GradientSet gradients(const Binding& binding, const ParamSet& params) const;

  // Primitive plumbing. Throws NumericError naming `primitive` if the value
  // is not finite.
  Var record(const char* primitive, Matrix value, std::initializer_list<Var> parents,
             BackwardFn backward);

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[v.id];
    if (!node.requires_grad) return;
    auto& acc = grads_[v.id];
    if (acc.size() == 0) {
      acc = g;
    } else {
      acc += g;
    }
  }

 private:
  struct Node {
    Matrix value;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

// Differentiable primitives. Shapes are (rows x cols), batch along rows.

// x: B x in, weight: out x in, bias: 1 x out. Returns x * weight^T + bias.
Var affine(Tape& t, Var x, Var weight, Var bias);
Var tanh(Tape& t, Var x);
Var leaky_relu(Tape& t, Var x, double negative_slope);
Var exp(Tape& t, Var x);
Var log(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var neg(Tape& t, Var x);
Var scale(Tape& t, Var x, double factor);
// Elementwise product with a constant of the same shape.
Var mul_const(Tape& t, Var x, const Matrix& c);
// Multiplies row i by c(i).
Var scale_rows(Tape& t, Var x, const Vector& c);
// Elementwise (a - b)^2.
Var squared_error(Tape& t, Var a, Var b);
Var gather_cols(Tape& t, Var x, const std::vector<Index>& cols);
// Builds a B x total matrix with a's columns at cols_a and b's at cols_b.
Var merge_cols(Tape& t, Var a, const std::vector<Index>& cols_a, Var b,
               const std::vector<Index>& cols_b, Index total);
// B x k -> B x 1.
Var row_sum(Tape& t, Var x);
// Any shape -> 1 x 1.
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);
// Standard isotropic Gaussian log-density of each row: B x k -> B x 1.
Var gaussian_log_density(Tape& t, Var z);

using LossFn = std::function<Var(Tape&, const Binding&)>;

struct Evaluation {
  double loss = 0.0;
  GradientSet gradients;
};

double evaluate(const LossFn& loss, const ParamSet& params);
Evaluation evaluate_with_gradients(const LossFn& loss, const ParamSet& params);
// Central differences from `step` downward, Richardson-extrapolated (Ridders).
GradientSet finite_difference_gradient(const LossFn& loss, const ParamSet& params,
                                       double step = 1e-3);

struct AdamState {
  AdamState() = default;
  AdamState(const ParamSet& like, double learning_rate, double beta1 = 0.9,
            double beta2 = 0.999, double epsilon = 1e-8);

  void reset();

  Vector m;
  Vector v;
  std::int64_t step = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update in place; increments state.step.
void adam_step(ParamSet& params, const GradientSet& grads, AdamState& state);

}  // namespace flowfill::diff
