#pragma once

#include <optional>
#include <string>
#include <vector>

#include "agtcnet/autodiff.hpp"
#include "agtcnet/rng.hpp"

namespace agtcnet::nn {

// Rescale every slice taken along `axis` to Euclidean norm <= limit.
struct MaxNorm {
  double limit = 1.0;
  std::size_t axis = 0;
};

// Elementwise clamp to [lo, hi].
struct MinMax {
  double lo = 0.0;
  double hi = 1.0;
};

struct Constraint {
  std::optional<MaxNorm> max_norm;
  std::optional<MinMax> min_max;
};

// A trainable tensor with a stable hierarchical name.
struct LayerParam {
  std::string name;
  Var var;
  std::optional<Constraint> constraint;
};

// Glorot/Xavier uniform on [-L, L], L = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, RngStream& rng);

// Fans the way convolution kernels count them: receptive field times the
// second-to-last / last axis.
std::pair<std::size_t, std::size_t> kernel_fans(const Shape& shape);

void apply_max_norm(Tensor& t, const MaxNorm& c);
void apply_min_max(Tensor& t, const MinMax& c);
void apply_constraints(std::vector<LayerParam>& params);

// True when every constraint holds within `tol`.
bool constraints_hold(const std::vector<LayerParam>& params, double tol = 1e-12);

}  // namespace agtcnet::nn
