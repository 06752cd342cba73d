#pragma once

#include <string>
#include <vector>

#include "flowfill/diff.hpp"
#include "flowfill/rng.hpp"

namespace flowfill::nn {

inline constexpr double kLeakySlope = 0.01;

enum class Activation { kLinear, kTanh };

struct DenseLayer {
  std::size_t weight = 0;  // index into the owning ParamSet, shape out x in
  std::size_t bias = 0;    // shape 1 x out
  Index in = 0;
  Index out = 0;
};

// Fully connected stack: leaky-ReLU between layers, `output` after the last.
// Parameters live in a ParamSet owned elsewhere; this only records indices.
class Mlp {
 public:
  Mlp() = default;

  // widths = {in, hidden..., out}; appends "<prefix>.<l>.weight" and ".bias".
  static Mlp build(diff::ParamSet& params, const std::string& prefix,
                   const std::vector<Index>& widths, Activation output);

  diff::Var apply(diff::Tape& tape, diff::Var x, const diff::Binding& params) const;

  // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  void init_uniform(diff::ParamSet& params, RngStream& rng) const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  Activation output() const { return output_; }

 private:
  std::vector<DenseLayer> layers_;
  Activation output_ = Activation::kLinear;
};

}  // namespace flowfill::nn
