#include "flowfill/diff.hpp"

#include <limits>

#include <cmath>
#include <numbers>
#include <utility>

namespace flowfill::diff {

namespace detail {

std::size_t TensorSet::add(std::string name, Index rows, Index cols) {
  if (rows < 0 || cols < 0) throw UsageError("tensor '" + name + "' has a negative dimension");
  if (by_name_.contains(name)) throw UsageError("duplicate tensor name '" + name + "'");
  const Index offset = flat_.size();
  const Index size = rows * cols;
  flat_.conservativeResize(offset + size);
  flat_.segment(offset, size).setZero();
  by_name_.emplace(name, specs_.size());
  specs_.push_back(TensorSpec{std::move(name), rows, cols, offset});
  return specs_.size() - 1;
}

std::size_t TensorSet::index_of(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw UsageError("no tensor named '" + std::string(name) + "'");
  return it->second;
}

bool TensorSet::contains(std::string_view name) const {
  return by_name_.contains(std::string(name));
}

Eigen::Map<Matrix> TensorSet::tensor(std::size_t i) {
  const auto& s = specs_.at(i);
  return {flat_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Matrix> TensorSet::tensor(std::size_t i) const {
  const auto& s = specs_.at(i);
  return {flat_.data() + s.offset, s.rows, s.cols};
}

bool TensorSet::same_layout(const TensorSet& other) const {
  if (specs_.size() != other.specs_.size()) return false;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& a = specs_[i];
    const auto& b = other.specs_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

}  // namespace detail

GradientSet::GradientSet(const ParamSet& like) {
  for (const auto& s : like.specs()) add(s.name, s.rows, s.cols);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Matrix value) {
  return record("constant", std::move(value), {}, nullptr);
}

Var Tape::variable(Matrix value) {
  Var v = record("variable", std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = true;
  return v;
}

Binding Tape::bind(const ParamSet& params, bool trainable) {
  Binding b;
  b.trainable_ = trainable;
  b.vars_.reserve(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) {
    Matrix value = params.tensor(i);
    b.vars_.push_back(trainable ? variable(std::move(value)) : constant(std::move(value)));
  }
  return b;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw UsageError("tape value is not a scalar");
  return m(0, 0);
}

Var Tape::record(const char* primitive, Matrix value, std::initializer_list<Var> parents,
                 BackwardFn backward) {
  if (!value.allFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + primitive);
  }
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : BackwardFn{}});
  grads_.emplace_back();
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var root) {
  const Matrix& r = value(root);
  if (r.rows() != 1 || r.cols() != 1) throw UsageError("backward() needs a 1x1 root");
  for (auto& g : grads_) g.resize(0, 0);
  if (!nodes_[root.id].requires_grad) return;
  grads_[root.id] = Matrix::Ones(1, 1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || grads_[i].size() == 0) continue;
    // Callbacks only write to parents, which always precede node i.
    node.backward(*this, grads_[i]);
  }
}

GradientSet Tape::gradients(const Binding& binding, const ParamSet& params) const {
  GradientSet out(params);
  if (binding.size() != params.count()) throw UsageError("binding does not match ParamSet");
  for (std::size_t i = 0; i < binding.size(); ++i) {
    const Matrix& g = grad(binding[i]);
    if (g.size() != 0) out.tensor(i) = g;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Primitives

Var affine(Tape& t, Var x, Var weight, Var bias) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(weight);
  const Matrix& bv = t.value(bias);
  if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows()) {
    throw UsageError("affine: shape mismatch");
  }
  Matrix y(xv.rows(), wv.rows());
  y.noalias() = xv * wv.transpose();
  y.rowwise() += bv.row(0);
  return t.record("affine", std::move(y), {x, weight, bias},
                  [x, weight, bias](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(weight));
                    if (tp.requires_grad(weight)) {
                      tp.accumulate(weight, g.transpose() * tp.value(x));
                    }
                    if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
                  });
}

Var tanh(Tape& t, Var x) {
  Matrix y = t.value(x).array().tanh().matrix();
  Matrix yc = y;
  return t.record("tanh", std::move(y), {x}, [x, yc = std::move(yc)](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (g.array() * (1.0 - yc.array().square())).matrix());
  });
}

Var leaky_relu(Tape& t, Var x, double negative_slope) {
  const Matrix& xv = t.value(x);
  Matrix y = (xv.array() >= 0.0).select(xv, negative_slope * xv);
  return t.record("leaky_relu", std::move(y), {x}, [x, negative_slope](Tape& tp, const Matrix& g) {
    const Matrix& xv2 = tp.value(x);
    tp.accumulate(x, (xv2.array() >= 0.0).select(g, negative_slope * g));
  });
}

Var exp(Tape& t, Var x) {
  Matrix y = t.value(x).array().exp().matrix();
  Matrix yc = y;
  return t.record("exp", std::move(y), {x}, [x, yc = std::move(yc)](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (g.array() * yc.array()).matrix());
  });
}

Var log(Tape& t, Var x) {
  Matrix y = t.value(x).array().log().matrix();
  return t.record("log", std::move(y), {x}, [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (g.array() / tp.value(x).array()).matrix());
  });
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Matrix y = t.value(a) + t.value(b);
  return t.record("add", std::move(y), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Matrix y = t.value(a) - t.value(b);
  return t.record("sub", std::move(y), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Matrix y = (t.value(a).array() * t.value(b).array()).matrix();
  return t.record("mul", std::move(y), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, (g.array() * tp.value(b).array()).matrix());
    if (tp.requires_grad(b)) tp.accumulate(b, (g.array() * tp.value(a).array()).matrix());
  });
}

Var neg(Tape& t, Var x) { return scale(t, x, -1.0); }

Var scale(Tape& t, Var x, double factor) {
  Matrix y = factor * t.value(x);
  return t.record("scale", std::move(y), {x},
                  [x, factor](Tape& tp, const Matrix& g) { tp.accumulate(x, factor * g); });
}

Var mul_const(Tape& t, Var x, const Matrix& c) {
  require_same_shape(t.value(x), c, "mul_const");
  Matrix y = (t.value(x).array() * c.array()).matrix();
  return t.record("mul_const", std::move(y), {x}, [x, c](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (g.array() * c.array()).matrix());
  });
}

Var scale_rows(Tape& t, Var x, const Vector& c) {
  if (c.size() != t.value(x).rows()) throw UsageError("scale_rows: length mismatch");
  Matrix y = c.asDiagonal() * t.value(x);
  return t.record("scale_rows", std::move(y), {x},
                  [x, c](Tape& tp, const Matrix& g) { tp.accumulate(x, c.asDiagonal() * g); });
}

Var squared_error(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "squared_error");
  Matrix diff = t.value(a) - t.value(b);
  Matrix y = diff.array().square().matrix();
  return t.record("squared_error", std::move(y), {a, b},
                  [a, b, diff = std::move(diff)](Tape& tp, const Matrix& g) {
                    Matrix d = 2.0 * (g.array() * diff.array()).matrix();
                    tp.accumulate(a, d);
                    tp.accumulate(b, -d);
                  });
}

Var gather_cols(Tape& t, Var x, const std::vector<Index>& cols) {
  const Matrix& xv = t.value(x);
  Matrix y(xv.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= xv.cols()) throw UsageError("gather_cols: index out of range");
    y.col(static_cast<Index>(j)) = xv.col(cols[j]);
  }
  const Index total = xv.cols();
  return t.record("gather_cols", std::move(y), {x}, [x, cols, total](Tape& tp, const Matrix& g) {
    Matrix dx = Matrix::Zero(g.rows(), total);
    for (std::size_t j = 0; j < cols.size(); ++j) dx.col(cols[j]) += g.col(static_cast<Index>(j));
    tp.accumulate(x, dx);
  });
}

Var merge_cols(Tape& t, Var a, const std::vector<Index>& cols_a, Var b,
               const std::vector<Index>& cols_b, Index total) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != static_cast<Index>(cols_a.size()) ||
      bv.cols() != static_cast<Index>(cols_b.size()) || av.rows() != bv.rows() ||
      static_cast<Index>(cols_a.size() + cols_b.size()) != total) {
    throw UsageError("merge_cols: shape mismatch");
  }
  Matrix y(av.rows(), total);
  for (std::size_t j = 0; j < cols_a.size(); ++j) y.col(cols_a[j]) = av.col(static_cast<Index>(j));
  for (std::size_t j = 0; j < cols_b.size(); ++j) y.col(cols_b[j]) = bv.col(static_cast<Index>(j));
  return t.record("merge_cols", std::move(y), {a, b},
                  [a, b, cols_a, cols_b](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(a)) {
                      Matrix da(g.rows(), static_cast<Index>(cols_a.size()));
                      for (std::size_t j = 0; j < cols_a.size(); ++j) {
                        da.col(static_cast<Index>(j)) = g.col(cols_a[j]);
                      }
                      tp.accumulate(a, da);
                    }
                    if (tp.requires_grad(b)) {
                      Matrix db(g.rows(), static_cast<Index>(cols_b.size()));
                      for (std::size_t j = 0; j < cols_b.size(); ++j) {
                        db.col(static_cast<Index>(j)) = g.col(cols_b[j]);
                      }
                      tp.accumulate(b, db);
                    }
                  });
}

Var row_sum(Tape& t, Var x) {
  const Index cols = t.value(x).cols();
  Matrix y = t.value(x).rowwise().sum();
  return t.record("row_sum", std::move(y), {x}, [x, cols](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g.replicate(1, cols));
  });
}

Var sum(Tape& t, Var x) {
  const Index rows = t.value(x).rows();
  const Index cols = t.value(x).cols();
  Matrix y(1, 1);
  y(0, 0) = t.value(x).sum();
  return t.record("sum", std::move(y), {x}, [x, rows, cols](Tape& tp, const Matrix& g) {
    tp.accumulate(x, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

Var mean(Tape& t, Var x) {
  const Index rows = t.value(x).rows();
  const Index cols = t.value(x).cols();
  if (rows * cols == 0) throw UsageError("mean of an empty tensor");
  const double inv = 1.0 / static_cast<double>(rows * cols);
  Matrix y(1, 1);
  y(0, 0) = t.value(x).sum() * inv;
  return t.record("mean", std::move(y), {x}, [x, rows, cols, inv](Tape& tp, const Matrix& g) {
    tp.accumulate(x, Matrix::Constant(rows, cols, g(0, 0) * inv));
  });
}

Var gaussian_log_density(Tape& t, Var z) {
  const Matrix& zv = t.value(z);
  const double norm = -0.5 * static_cast<double>(zv.cols()) * std::log(2.0 * std::numbers::pi);
  Matrix y = (norm - 0.5 * zv.rowwise().squaredNorm().array()).matrix();
  return t.record("gaussian_log_density", std::move(y), {z}, [z](Tape& tp, const Matrix& g) {
    const Matrix& zv2 = tp.value(z);
    tp.accumulate(z, -(g.col(0).asDiagonal() * zv2));
  });
}

// ---------------------------------------------------------------------------
// Evaluation helpers

double evaluate(const LossFn& loss, const ParamSet& params) {
  Tape tape;
  Binding b = tape.bind(params, false);
  return tape.scalar(loss(tape, b));
}

Evaluation evaluate_with_gradients(const LossFn& loss, const ParamSet& params) {
  Tape tape;
  Binding b = tape.bind(params, true);
  Var root = loss(tape, b);
  Evaluation out;
  out.loss = tape.scalar(root);
  tape.backward(root);
  out.gradients = tape.gradients(b, params);
  if (!out.gradients.all_finite()) throw NumericError("non-finite gradient");
  return out;
}

GradientSet finite_difference_gradient(const LossFn& loss, const ParamSet& params, double step) {
  if (!(step > 0.0)) throw UsageError("finite difference step must be positive");
  // Ridders: central differences at steps step, step/1.4, ..., extrapolated
  // to zero step in a Neville tableau; keep the entry with the smallest
  // error estimate and stop once higher orders stop helping.
  constexpr double kShrink = 1.4;
  constexpr double kShrink2 = kShrink * kShrink;
  constexpr int kTable = 16;
  constexpr double kSafe = 2.0;

  GradientSet out(params);
  ParamSet probe = params;
  std::vector<std::vector<double>> a(kTable, std::vector<double>(kTable));
  for (Index i = 0; i < probe.flat_size(); ++i) {
    const double x = probe.flat()[i];
    auto central = [&](double h) {
      probe.flat()[i] = x + h;
      const double up = evaluate(loss, probe);
      probe.flat()[i] = x - h;
      const double down = evaluate(loss, probe);
      probe.flat()[i] = x;
      return (up - down) / (2.0 * h);
    };
    double h = step;
    a[0][0] = central(h);
    double best = a[0][0];
    double err = std::numeric_limits<double>::infinity();
    for (int col = 1; col < kTable; ++col) {
      h /= kShrink;
      a[0][col] = central(h);
      double fac = kShrink2;
      for (int row = 1; row <= col; ++row) {
        a[row][col] = (a[row - 1][col] * fac - a[row - 1][col - 1]) / (fac - 1.0);
        fac *= kShrink2;
        const double e = std::max(std::abs(a[row][col] - a[row - 1][col]),
                                  std::abs(a[row][col] - a[row - 1][col - 1]));
        if (e <= err) {
          err = e;
          best = a[row][col];
        }
      }
      if (std::abs(a[col][col] - a[col - 1][col - 1]) >= kSafe * err) break;
    }
    out.flat()[i] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(const ParamSet& like, double learning_rate_, double beta1_, double beta2_,
                     double epsilon_)
    : m(Vector::Zero(like.flat_size())),
      v(Vector::Zero(like.flat_size())),
      learning_rate(learning_rate_),
      beta1(beta1_),
      beta2(beta2_),
      epsilon(epsilon_) {
  if (!(learning_rate > 0.0 && beta1 > 0.0 && beta2 > 0.0 && epsilon > 0.0) || beta1 >= 1.0 ||
      beta2 >= 1.0) {
    throw UsageError("Adam hyperparameters out of range");
  }
}

void AdamState::reset() {
  m.setZero();
  v.setZero();
  step = 0;
}

void adam_step(ParamSet& params, const GradientSet& grads, AdamState& state) {
  if (grads.flat_size() != params.flat_size() || state.m.size() != params.flat_size() ||
      state.v.size() != params.flat_size()) {
    throw UsageError("adam_step: shape mismatch between parameters, gradients and state");
  }
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");
  const Vector& g = grads.flat();
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * g;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * g.cwiseProduct(g);
  const double t = static_cast<double>(state.step);
  const double m_corr = 1.0 - std::pow(state.beta1, t);
  const double v_corr = 1.0 - std::pow(state.beta2, t);
  Vector& p = params.flat();
  p.array() -= state.learning_rate * (state.m.array() / m_corr) /
               ((state.v.array() / v_corr).sqrt() + state.epsilon);
}

}  // namespace flowfill::diff
