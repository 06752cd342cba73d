#pragma once

#include "flowfill/diff.hpp"
#include "flowfill/flow.hpp"
#include "flowfill/nn.hpp"
#include "flowfill/rng.hpp"

namespace flowfill {

inline constexpr std::size_t kLatentLayers = 5;

enum class LatentInit {
  kUniform,   // same scheme as the flow's s/t networks
  kIdentity,  // identity weights plus small noise, see LatentNet::initialize
};

// Five n -> n linear layers with leaky-ReLU in between, linear output.
// Maps the flow embedding of a naively completed row to the embedding of its
// likelier completion.
class LatentNet {
 public:
  static constexpr double kIdentityNoise = 1e-3;
  // Bias offset that keeps the hidden activations on the linear side of the
  // leaky ReLU for inputs above -kIdentityShift.
  static constexpr double kIdentityShift = 5.0;

  LatentNet() = default;
  // Zero-valued parameters.
  explicit LatentNet(Index dim);
  LatentNet(Index dim, diff::ParamSet params);

  static LatentNet create(Index dim, RngStream& rng, LatentInit init = LatentInit::kUniform);

  // kIdentity: W = I + U(-noise, noise), first bias +shift, last bias -shift,
  // other biases zero.
  void initialize(RngStream& rng, LatentInit init);
  // Identity weights with the same bias shift: the identity map, up to
  // rounding, on inputs above -kIdentityShift.
  void set_identity_weights();

  Index dim() const { return dim_; }
  const nn::Mlp& mlp() const { return mlp_; }
  diff::ParamSet& params() { return params_; }
  const diff::ParamSet& params() const { return params_; }

  diff::Var apply(diff::Tape& tape, diff::Var z, const diff::Binding& params) const;

 private:
  Index dim_ = 0;
  nn::Mlp mlp_;
  diff::ParamSet params_;
};

Matrix latent_map(const Matrix& z, const LatentNet& net);

// Per row: z = g(x_dot), x_hat = g^-1(h(z)); loss is the batch mean of
//   MSE over observed entries of (x_dot, x_hat) - lambda * log p_X(x_hat),
// the MSE averaging over the row's observed entries. The flow enters only as
// constants, so gradients reach the latent parameters alone.
diff::Var h_loss(diff::Tape& tape, const Matrix& x_dot, const Mask& mask, const FlowModel& flow,
                 const LatentNet& net, const diff::Binding& latent_params, double lambda);
double h_loss(const Matrix& x_dot, const Mask& mask, const FlowModel& flow, const LatentNet& net,
              double lambda);

// Full pass g^-1(h(g(x_dot))) without gradients.
Matrix reconstruct(const Matrix& x_dot, const FlowModel& flow, const LatentNet& net);

}  // namespace flowfill
