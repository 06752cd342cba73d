#pragma once

// Invertible flow built from affine coupling layers over a standard Gaussian
// base density.
//
// Each coupling layer keeps the coordinates in its pass-through set D and
// transforms the rest:
//
//   y_D  = x_D
//   y_~D = x_~D * exp(s(x_D)) + t(x_D)
//
// with s ending in tanh and t linear. The log-determinant of one layer is
// sum(s(x_D)), so the exact log-likelihood of x is
//
//   log N(g(x); 0, I) + sum over layers of sum(s).

#include <cstddef>
#include <vector>

#include "flowfill/diff.hpp"
#include "flowfill/nn.hpp"
#include "flowfill/rng.hpp"

namespace flowfill {

inline constexpr std::size_t kDefaultCouplingLayers = 6;
inline constexpr Index kMinHiddenWidth = 8;

using Partition = std::vector<bool>;  // true = pass-through (member of D)

struct FlowArchitecture {
  Index dim = 0;
  Index hidden_width = 0;
  std::vector<Partition> partitions;  // one per coupling layer, applied in order

  bool operator==(const FlowArchitecture&) const = default;
};

struct CouplingLayer {
  Partition pass_through;
  std::vector<Index> pass_idx;
  std::vector<Index> transform_idx;
  nn::Mlp scale_net;  // |D| -> hidden x3 -> |~D|, tanh output
  nn::Mlp shift_net;  // |D| -> hidden x3 -> |~D|, linear output
};

struct FlowOptions {
  std::size_t layers = kDefaultCouplingLayers;
  Index hidden_width = 0;  // 0 selects max(dim, 8)
};

class FlowModel {
 public:
  struct Output {
    diff::Var z;
    diff::Var logdet;  // B x 1
  };

  FlowModel() = default;
  // Zero-valued parameters.
  explicit FlowModel(FlowArchitecture arch);
  FlowModel(FlowArchitecture arch, diff::ParamSet params);

  // Random partitions and freshly initialized weights.
  static FlowModel create(Index dim, RngStream& rng, FlowOptions options = {});

  // Each index lands in D with probability 1/2; draws leaving D or ~D empty
  // are redrawn. A 1-d flow has nothing to condition on, so its single
  // coordinate is always transformed (D empty, s and t reduce to learned
  // constants).
  static std::vector<Partition> sample_partitions(Index dim, std::size_t layers,
                                                  RngStream& rng);

  Index dim() const { return arch_.dim; }
  const FlowArchitecture& architecture() const { return arch_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  diff::ParamSet& params() { return params_; }
  const diff::ParamSet& params() const { return params_; }

  // Fresh weights for every s/t network; partitions are left alone.
  void initialize(RngStream& rng);

  Output forward(diff::Tape& tape, diff::Var x, const diff::Binding& params) const;
  diff::Var inverse(diff::Tape& tape, diff::Var z, const diff::Binding& params) const;

  Output coupling_forward(diff::Tape& tape, diff::Var x, const diff::Binding& params,
                          std::size_t layer) const;
  diff::Var coupling_inverse(diff::Tape& tape, diff::Var y, const diff::Binding& params,
                             std::size_t layer) const;

 private:
  FlowArchitecture arch_;
  std::vector<CouplingLayer> layers_;
  diff::ParamSet params_;
};

// Gradient-free batch evaluation; rows are samples.
struct FlowResult {
  Matrix z;
  Vector logdet;
};

FlowResult coupling_forward(const Matrix& x, const FlowModel& model, std::size_t layer);
Matrix coupling_inverse(const Matrix& y, const FlowModel& model, std::size_t layer);
FlowResult flow_forward(const Matrix& x, const FlowModel& model);
Matrix flow_inverse(const Matrix& z, const FlowModel& model);

// log p_X per row.
Vector log_likelihood(const Matrix& x, const FlowModel& model);
diff::Var log_likelihood(diff::Tape& tape, diff::Var x, const FlowModel& model,
                         const diff::Binding& params);

// Mean negative log-likelihood of the batch rows.
double nll_loss(const Matrix& batch, const FlowModel& model);
diff::Var nll_loss(diff::Tape& tape, diff::Var batch, const FlowModel& model,
                   const diff::Binding& params);

}  // namespace flowfill
