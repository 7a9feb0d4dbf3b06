#include "agtcnet/params.hpp"

#include <algorithm>
#include <cmath>

#include "agtcnet/error.hpp"

namespace agtcnet::nn {

Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  if (fan_in == 0 || fan_out == 0) throw InvalidArgument("glorot_uniform: fans must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

std::pair<std::size_t, std::size_t> kernel_fans(const Shape& shape) {
  if (shape.size() < 2) return {shape.empty() ? 1 : shape[0], shape.empty() ? 1 : shape[0]};
  std::size_t receptive = 1;
  for (std::size_t i = 0; i + 2 < shape.size(); ++i) receptive *= shape[i];
  return {shape[shape.size() - 2] * receptive, shape.back() * receptive};
}

namespace {

// Calls fn(offsets) for each slice along `axis`; offsets holds the flat
// indices of that slice's elements.
template <typename Fn>
void for_each_slice(const Shape& shape, std::size_t axis, Fn&& fn) {
  if (axis >= shape.size()) throw InvalidArgument("max-norm axis out of range");
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  const std::size_t n = shape[axis];
  std::vector<std::size_t> idx(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      for (std::size_t k = 0; k < n; ++k) idx[k] = (o * n + k) * inner + in;
      fn(idx);
    }
}

}  // namespace

void apply_max_norm(Tensor& t, const MaxNorm& c) {
  for_each_slice(t.shape(), c.axis, [&](const std::vector<std::size_t>& idx) {
    double sq = 0.0;
    for (std::size_t i : idx) sq += t[i] * t[i];
    const double norm = std::sqrt(sq);
    if (norm > c.limit) {
      const double s = c.limit / norm;
      for (std::size_t i : idx) t[i] *= s;
    }
  });
}

void apply_min_max(Tensor& t, const MinMax& c) {
  for (auto& v : t.values()) v = std::clamp(v, c.lo, c.hi);
}

void apply_constraints(std::vector<LayerParam>& params) {
  for (auto& p : params) {
    if (!p.constraint) continue;
    if (p.constraint->max_norm) apply_max_norm(p.var.mutable_value(), *p.constraint->max_norm);
    if (p.constraint->min_max) apply_min_max(p.var.mutable_value(), *p.constraint->min_max);
  }
}

bool constraints_hold(const std::vector<LayerParam>& params, double tol) {
  for (const auto& p : params) {
    if (!p.constraint) continue;
    const Tensor& t = p.var.value();
    if (p.constraint->min_max) {
      for (double v : t.values())
        if (v < p.constraint->min_max->lo - tol || v > p.constraint->min_max->hi + tol) return false;
    }
    if (p.constraint->max_norm) {
      bool ok = true;
      const auto& c = *p.constraint->max_norm;
      for_each_slice(t.shape(), c.axis, [&](const std::vector<std::size_t>& idx) {
        double sq = 0.0;
        for (std::size_t i : idx) sq += t[i] * t[i];
        if (std::sqrt(sq) > c.limit * (1.0 + tol) + tol) ok = false;
      });
      if (!ok) return false;
    }
  }
  return true;
}

}  // namespace agtcnet::nn
