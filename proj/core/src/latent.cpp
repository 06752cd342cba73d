#include "flowfill/latent.hpp"

#include <string>

namespace flowfill {

LatentNet::LatentNet(Index dim) : dim_(dim) {
  if (dim < 1) throw UsageError("latent network dimension must be at least 1");
  std::vector<Index> widths(kLatentLayers + 1, dim);
  mlp_ = nn::Mlp::build(params_, "latent", widths, nn::Activation::kLinear);
}

LatentNet::LatentNet(Index dim, diff::ParamSet params) : LatentNet(dim) {
  if (!params.same_layout(params_)) {
    throw DataError("latent parameters do not match a " + std::to_string(dim) + "-d network");
  }
  params_ = std::move(params);
}

LatentNet LatentNet::create(Index dim, RngStream& rng, LatentInit init) {
  LatentNet net(dim);
  net.initialize(rng, init);
  return net;
}

void LatentNet::initialize(RngStream& rng, LatentInit init) {
  if (init == LatentInit::kUniform) {
    mlp_.init_uniform(params_, rng);
    return;
  }
  const auto& layers = mlp_.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto w = params_.tensor(layers[l].weight);
    w.setIdentity();
    for (Index i = 0; i < w.size(); ++i) {
      w.data()[i] += (2.0 * rng.uniform() - 1.0) * kIdentityNoise;
    }
    auto b = params_.tensor(layers[l].bias);
    if (l == 0) {
      b.setConstant(kIdentityShift);
    } else if (l + 1 == layers.size()) {
      b.setConstant(-kIdentityShift);
    } else {
      b.setZero();
    }
  }
}

void LatentNet::set_identity_weights() {
  const auto& layers = mlp_.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    params_.tensor(layers[l].weight).setIdentity();
    auto b = params_.tensor(layers[l].bias);
    if (l == 0) {
      b.setConstant(kIdentityShift);
    } else if (l + 1 == layers.size()) {
      b.setConstant(-kIdentityShift);
    } else {
      b.setZero();
    }
  }
}

diff::Var LatentNet::apply(diff::Tape& tape, diff::Var z, const diff::Binding& params) const {
  if (tape.value(z).cols() != dim_) {
    throw UsageError("latent network expects " + std::to_string(dim_) + " columns, got " +
                     std::to_string(tape.value(z).cols()));
  }
  return mlp_.apply(tape, z, params);
}

Matrix latent_map(const Matrix& z, const LatentNet& net) {
  diff::Tape tape;
  diff::Binding b = tape.bind(net.params(), false);
  return tape.value(net.apply(tape, tape.constant(z), b));
}

diff::Var h_loss(diff::Tape& tape, const Matrix& x_dot, const Mask& mask, const FlowModel& flow,
                 const LatentNet& net, const diff::Binding& latent_params, double lambda) {
  if (!(lambda >= 0.0)) throw UsageError("lambda must be non-negative");
  if (x_dot.rows() == 0) throw UsageError("h_loss: empty batch");
  if (mask.rows() != x_dot.rows() || mask.cols() != x_dot.cols()) {
    throw UsageError("h_loss: mask shape mismatch");
  }
  if (net.dim() != flow.dim() || x_dot.cols() != flow.dim()) {
    throw UsageError("h_loss: dimension mismatch between data, flow and latent network");
  }
  Matrix observed = (1 - mask.cast<int>().array()).cast<double>().matrix();
  Vector inv_count(x_dot.rows());
  for (Index i = 0; i < x_dot.rows(); ++i) {
    const double count = observed.row(i).sum();
    if (count == 0.0) {
      throw DataError("h_loss: row " + std::to_string(i) + " has no observed entries");
    }
    inv_count(i) = 1.0 / count;
  }

  diff::Binding theta = tape.bind(flow.params(), false);
  diff::Var x = tape.constant(x_dot);
  diff::Var z_dot = flow.forward(tape, x, theta).z;
  diff::Var z_hat = net.apply(tape, z_dot, latent_params);
  diff::Var x_hat = flow.inverse(tape, z_hat, theta);
  diff::Var log_p = log_likelihood(tape, x_hat, flow, theta);

  diff::Var sq = diff::mul_const(tape, diff::squared_error(tape, x_hat, x), observed);
  diff::Var mse = diff::scale_rows(tape, diff::row_sum(tape, sq), inv_count);
  diff::Var per_row = diff::sub(tape, mse, diff::scale(tape, log_p, lambda));
  return diff::mean(tape, per_row);
}

double h_loss(const Matrix& x_dot, const Mask& mask, const FlowModel& flow, const LatentNet& net,
              double lambda) {
  diff::Tape tape;
  diff::Binding phi = tape.bind(net.params(), false);
  return tape.scalar(h_loss(tape, x_dot, mask, flow, net, phi, lambda));
}

Matrix reconstruct(const Matrix& x_dot, const FlowModel& flow, const LatentNet& net) {
  diff::Tape tape;
  diff::Binding theta = tape.bind(flow.params(), false);
  diff::Binding phi = tape.bind(net.params(), false);
  diff::Var z_dot = flow.forward(tape, tape.constant(x_dot), theta).z;
  diff::Var z_hat = net.apply(tape, z_dot, phi);
  return tape.value(flow.inverse(tape, z_hat, theta));
}

}  // namespace flowfill
