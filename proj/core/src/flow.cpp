#include "flowfill/flow.hpp"

#include <algorithm>
#include <string>

namespace flowfill {

namespace {

std::string layer_prefix(std::size_t k) { return "coupling." + std::to_string(k); }

template <typename Fn>
auto with_layer_context(std::size_t layer, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError("coupling layer " + std::to_string(layer) + ": " + e.what());
  }
}

void require_dim(const Matrix& x, Index dim) {
  if (x.cols() != dim) {
    throw UsageError("flow expects " + std::to_string(dim) + " columns, got " +
                     std::to_string(x.cols()));
  }
}

}  // namespace

FlowModel::FlowModel(FlowArchitecture arch) : arch_(std::move(arch)) {
  if (arch_.dim < 1) throw UsageError("flow dimension must be at least 1");
  if (arch_.hidden_width < 1) throw UsageError("flow hidden width must be at least 1");
  if (arch_.partitions.empty()) throw UsageError("flow needs at least one coupling layer");
  const Index h = arch_.hidden_width;
  for (std::size_t k = 0; k < arch_.partitions.size(); ++k) {
    const Partition& d = arch_.partitions[k];
    if (static_cast<Index>(d.size()) != arch_.dim) {
      throw UsageError("partition " + std::to_string(k) + " has the wrong length");
    }
    CouplingLayer layer;
    layer.pass_through = d;
    for (Index i = 0; i < arch_.dim; ++i) {
      (d[static_cast<std::size_t>(i)] ? layer.pass_idx : layer.transform_idx).push_back(i);
    }
    if (layer.transform_idx.empty() || (layer.pass_idx.empty() && arch_.dim > 1)) {
      throw UsageError("partition " + std::to_string(k) + " leaves D or its complement empty");
    }
    const Index in = static_cast<Index>(layer.pass_idx.size());
    const Index out = static_cast<Index>(layer.transform_idx.size());
    const std::string prefix = layer_prefix(k);
    layer.scale_net =
        nn::Mlp::build(params_, prefix + ".s", {in, h, h, h, out}, nn::Activation::kTanh);
    layer.shift_net =
        nn::Mlp::build(params_, prefix + ".t", {in, h, h, h, out}, nn::Activation::kLinear);
    layers_.push_back(std::move(layer));
  }
}

FlowModel::FlowModel(FlowArchitecture arch, diff::ParamSet params) : FlowModel(std::move(arch)) {
  if (!params.same_layout(params_)) throw DataError("flow parameters do not match architecture");
  params_ = std::move(params);
}

FlowModel FlowModel::create(Index dim, RngStream& rng, FlowOptions options) {
  FlowArchitecture arch;
  arch.dim = dim;
  arch.hidden_width =
      options.hidden_width > 0 ? options.hidden_width : std::max(dim, kMinHiddenWidth);
  arch.partitions = sample_partitions(dim, options.layers, rng);
  FlowModel model(std::move(arch));
  model.initialize(rng);
  return model;
}

std::vector<Partition> FlowModel::sample_partitions(Index dim, std::size_t layers,
                                                    RngStream& rng) {
  if (dim < 1) throw UsageError("flow dimension must be at least 1");
  std::vector<Partition> out;
  out.reserve(layers);
  for (std::size_t k = 0; k < layers; ++k) {
    Partition d(static_cast<std::size_t>(dim), false);
    if (dim > 1) {
      while (true) {
        std::size_t kept = 0;
        for (auto&& bit : d) {
          bit = rng.bernoulli(0.5);
          kept += bit ? 1 : 0;
        }
        if (kept > 0 && kept < d.size()) break;
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

void FlowModel::initialize(RngStream& rng) {
  for (const auto& layer : layers_) {
    layer.scale_net.init_uniform(params_, rng);
    layer.shift_net.init_uniform(params_, rng);
  }
}

FlowModel::Output FlowModel::coupling_forward(diff::Tape& tape, diff::Var x,
                                              const diff::Binding& params,
                                              std::size_t layer) const {
  const CouplingLayer& c = layers_.at(layer);
  return with_layer_context(layer, [&] {
    diff::Var x_pass = diff::gather_cols(tape, x, c.pass_idx);
    diff::Var x_trans = diff::gather_cols(tape, x, c.transform_idx);
    diff::Var s = c.scale_net.apply(tape, x_pass, params);
    diff::Var t = c.shift_net.apply(tape, x_pass, params);
    diff::Var y_trans = diff::add(tape, diff::mul(tape, x_trans, diff::exp(tape, s)), t);
    diff::Var y = diff::merge_cols(tape, x_pass, c.pass_idx, y_trans, c.transform_idx, arch_.dim);
    return Output{y, diff::row_sum(tape, s)};
  });
}

diff::Var FlowModel::coupling_inverse(diff::Tape& tape, diff::Var y, const diff::Binding& params,
                                      std::size_t layer) const {
  const CouplingLayer& c = layers_.at(layer);
  return with_layer_context(layer, [&] {
    diff::Var y_pass = diff::gather_cols(tape, y, c.pass_idx);
    diff::Var y_trans = diff::gather_cols(tape, y, c.transform_idx);
    diff::Var s = c.scale_net.apply(tape, y_pass, params);
    diff::Var t = c.shift_net.apply(tape, y_pass, params);
    diff::Var x_trans =
        diff::mul(tape, diff::sub(tape, y_trans, t), diff::exp(tape, diff::neg(tape, s)));
    return diff::merge_cols(tape, y_pass, c.pass_idx, x_trans, c.transform_idx, arch_.dim);
  });
}

FlowModel::Output FlowModel::forward(diff::Tape& tape, diff::Var x,
                                     const diff::Binding& params) const {
  require_dim(tape.value(x), arch_.dim);
  Output out{x, diff::Var{}};
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Output step = coupling_forward(tape, out.z, params, k);
    out.logdet = k == 0 ? step.logdet : diff::add(tape, out.logdet, step.logdet);
    out.z = step.z;
  }
  return out;
}

diff::Var FlowModel::inverse(diff::Tape& tape, diff::Var z, const diff::Binding& params) const {
  require_dim(tape.value(z), arch_.dim);
  diff::Var x = z;
  for (std::size_t k = layers_.size(); k-- > 0;) x = coupling_inverse(tape, x, params, k);
  return x;
}

// ---------------------------------------------------------------------------

FlowResult coupling_forward(const Matrix& x, const FlowModel& model, std::size_t layer) {
  require_dim(x, model.dim());
  diff::Tape tape;
  diff::Binding b = tape.bind(model.params(), false);
  auto out = model.coupling_forward(tape, tape.constant(x), b, layer);
  return {tape.value(out.z), tape.value(out.logdet).col(0)};
}

Matrix coupling_inverse(const Matrix& y, const FlowModel& model, std::size_t layer) {
  require_dim(y, model.dim());
  diff::Tape tape;
  diff::Binding b = tape.bind(model.params(), false);
  return tape.value(model.coupling_inverse(tape, tape.constant(y), b, layer));
}

FlowResult flow_forward(const Matrix& x, const FlowModel& model) {
  diff::Tape tape;
  diff::Binding b = tape.bind(model.params(), false);
  auto out = model.forward(tape, tape.constant(x), b);
  return {tape.value(out.z), tape.value(out.logdet).col(0)};
}

Matrix flow_inverse(const Matrix& z, const FlowModel& model) {
  diff::Tape tape;
  diff::Binding b = tape.bind(model.params(), false);
  return tape.value(model.inverse(tape, tape.constant(z), b));
}

diff::Var log_likelihood(diff::Tape& tape, diff::Var x, const FlowModel& model,
                         const diff::Binding& params) {
  auto out = model.forward(tape, x, params);
  return diff::add(tape, diff::gaussian_log_density(tape, out.z), out.logdet);
}

Vector log_likelihood(const Matrix& x, const FlowModel& model) {
  diff::Tape tape;
  diff::Binding b = tape.bind(model.params(), false);
  return tape.value(log_likelihood(tape, tape.constant(x), model, b)).col(0);
}

diff::Var nll_loss(diff::Tape& tape, diff::Var batch, const FlowModel& model,
                   const diff::Binding& params) {
  if (tape.value(batch).rows() == 0) throw UsageError("nll_loss: empty batch");
  return diff::neg(tape, diff::mean(tape, log_likelihood(tape, batch, model, params)));
}

double nll_loss(const Matrix& batch, const FlowModel& model) {
  diff::Tape tape;
  diff::Binding b = tape.bind(model.params(), false);
  return tape.scalar(nll_loss(tape, tape.constant(batch), model, b));
}

}  // namespace flowfill
