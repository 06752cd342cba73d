#include "flowfill/nn.hpp"

#include <cmath>

namespace flowfill::nn {

Mlp Mlp::build(diff::ParamSet& params, const std::string& prefix,
               const std::vector<Index>& widths, Activation output) {
  if (widths.size() < 2) throw UsageError("an MLP needs at least one layer");
  Mlp mlp;
  mlp.output_ = output;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer;
    layer.in = widths[l];
    layer.out = widths[l + 1];
    const std::string base = prefix + "." + std::to_string(l);
    layer.weight = params.add(base + ".weight", layer.out, layer.in);
    layer.bias = params.add(base + ".bias", 1, layer.out);
    mlp.layers_.push_back(layer);
  }
  return mlp;
}

diff::Var Mlp::apply(diff::Tape& tape, diff::Var x, const diff::Binding& params) const {
  diff::Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = diff::affine(tape, h, params[layers_[l].weight], params[layers_[l].bias]);
    if (l + 1 < layers_.size()) {
      h = diff::leaky_relu(tape, h, kLeakySlope);
    } else if (output_ == Activation::kTanh) {
      h = diff::tanh(tape, h);
    }
  }
  return h;
}

void Mlp::init_uniform(diff::ParamSet& params, RngStream& rng) const {
  for (const auto& layer : layers_) {
    auto w = params.tensor(layer.weight);
    const double bound = layer.in > 0 ? 1.0 / std::sqrt(static_cast<double>(layer.in)) : 0.0;
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
    params.tensor(layer.bias).setZero();
  }
}

}  // namespace flowfill::nn
