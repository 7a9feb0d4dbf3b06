#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "agtcnet/autodiff.hpp"
#include "agtcnet/rng.hpp"

namespace agtcnet::nn {

enum class Mode { train, infer };
enum class Padding { valid, same };

// Spatial layout for every convolution/pooling op is (B, H, W, F): H is the
// electrode axis, W the time axis, F the feature axis.
struct Conv2dOptions {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  Padding padding = Padding::valid;
};

struct PoolOptions {
  std::size_t pool_h = 1;
  std::size_t pool_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
};

// Running statistics of one batch-normalization site.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;

  explicit BatchNormState(std::size_t features = 0)
      : running_mean({features}, 0.0), running_var({features}, 1.0) {}
};

// Boolean mask for softmax over the last axis. The mask has `rows` rows of
// length N; softmax row r uses mask row (r / repeat_inner) % rows.
struct SoftmaxMask {
  std::vector<std::uint8_t> allowed;  // rows x N, 1 = keep
  std::size_t rows = 0;
  std::size_t repeat_inner = 1;
  // When set, an all-masked row puts probability 1 on the column equal to its
  // mask row index instead of raising.
  bool fallback_to_self = false;
};

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

// Output length of one spatial axis under the given padding.
std::size_t conv_out_len(std::size_t in, std::size_t k, std::size_t stride, Padding padding);
std::size_t pool_out_len(std::size_t in, std::size_t pool, std::size_t stride);

Var add(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_bias(const Var& x, const Var& bias);
Var reshape(const Var& x, Shape shape);
Var concat_last(const Var& a, const Var& b);
Var select_last(const Var& x, std::size_t index);  // (..., K) -> (...)
Var weighted_sum(const Var& x, const Tensor& weights);  // scalar

Var conv2d(const Var& x, const Var& kernel, const Conv2dOptions& opt = {});
Var depthwise_conv2d(const Var& x, const Var& kernel, const Conv2dOptions& opt = {});
Var separable_conv2d(const Var& x, const Var& depthwise_kernel, const Var& pointwise_kernel,
                     const Conv2dOptions& opt = {});

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode);

Var selu(const Var& x);
Var prelu(const Var& x, const Var& alpha);

Var avg_pool2d(const Var& x, const PoolOptions& opt);
Var dropout(const Var& x, double rate, Mode mode, RngStream& rng);
Var linear(const Var& x, const Var& weight, const Var& bias = Var());

Var softmax(const Var& x);
Var masked_softmax(const Var& x, const SoftmaxMask& mask);

// Sinusoidal table (length, dim): sin on even columns, cos on odd ones.
Tensor positional_encoding(std::size_t length, std::size_t dim);
// x + scale * pe, where pe matches the trailing (T, F) axes of x.
Var add_positional(const Var& x, const Var& scale, const Tensor& pe);

// Graph attention pieces. s, d: (B, C, T, 1) -> e: (B, C, T, C) with
// e[b,i,t,j] = s[b,i,t] + d[b,j,t].
Var pairwise_sum(const Var& src, const Var& dst);
// alpha: (B, C, T, C), values: (B, C, T, F) -> (B, C, T, F), sum over j.
Var graph_aggregate(const Var& alpha, const Var& values);

// Scaled dot-product attention pieces on (B, L, heads*dim) projections.
Var attention_scores(const Var& query, const Var& key, std::size_t heads);   // (B, H, L, S)
Var attention_context(const Var& probs, const Var& value, std::size_t heads);  // (B, L, H*dv)

// Mean of -log softmax(logits)[label]; gradient fused through the softmax.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);
// Mean binary cross-entropy on probabilities of the positive class, with
// probabilities clamped to [eps, 1 - eps].
Var binary_cross_entropy(const Var& probs, std::span<const int> labels, double eps = 1e-7);

}  // namespace agtcnet::nn
