#include "agtcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "agtcnet/error.hpp"

namespace agtcnet::nn {

namespace {

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

// Accumulates into the gradient of parent `i` if it needs one.
Tensor* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return &p.grad_buffer();
}

const Tensor& parent_value(Node& self, std::size_t i) { return self.parents[i]->value; }

struct PadInfo {
  std::size_t out;
  std::size_t before;
};

PadInfo pad_info(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (stride == 0) throw InvalidArgument("stride must be positive");
  if (padding == Padding::valid) {
    if (k > in) {
      throw ShapeError("kernel extent " + std::to_string(k) + " exceeds input extent " + std::to_string(in));
    }
    return {(in - k) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + k;
  const std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};  // odd padding leaves the extra zero trailing
}

}  // namespace

std::size_t conv_out_len(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  return pad_info(in, k, stride, padding).out;
}

std::size_t pool_out_len(std::size_t in, std::size_t pool, std::size_t stride) {
  if (pool == 0 || stride == 0) throw InvalidArgument("pool and stride must be positive");
  if (pool > in) {
    throw ShapeError("pool extent " + std::to_string(pool) + " exceeds input extent " + std::to_string(in));
  }
  return (in - pool) / stride + 1;
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= c;
  return Var::make(std::move(out), {x}, [c](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c * self.grad[i];
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t f = x.shape().back();
  if (bias.value().size() != f) throw ShapeError("add_bias: bias length does not match last axis");
  Tensor out = x.value();
  const Tensor& b = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % f];
  return Var::make(std::move(out), {x, bias}, [f](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i % f] += self.grad[i];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::make(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var concat_last(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_last: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t fa = sa.back();
  const std::size_t fb = sb.back();
  const std::size_t rows = a.value().size() / fa;
  Shape so = sa;
  so.back() = fa + fb;
  Tensor out(so);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * fa, fa, out.data() + r * (fa + fb));
    std::copy_n(b.value().data() + r * fb, fb, out.data() + r * (fa + fb) + fa);
  }
  return Var::make(std::move(out), {a, b}, [fa, fb, rows](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < fa; ++k) (*g)[r * fa + k] += self.grad[r * (fa + fb) + k];
    }
    if (Tensor* g = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < fb; ++k) (*g)[r * fb + k] += self.grad[r * (fa + fb) + fa + k];
    }
  });
}

Var select_last(const Var& x, std::size_t index) {
  const std::size_t k = x.shape().back();
  if (index >= k) throw ShapeError("select_last: index out of range");
  const std::size_t rows = x.value().size() / k;
  Shape so(x.shape().begin(), x.shape().end() - 1);
  if (so.empty()) so = {1};
  Tensor out(so);
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.value()[r * k + index];
  return Var::make(std::move(out), {x}, [k, rows, index](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) (*g)[r * k + index] += self.grad[r];
    }
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  if (weights.size() != x.value().size()) throw ShapeError("weighted_sum: weight size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.value()[i];
  return Var::make(Tensor::scalar(s), {x}, [weights](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * weights[i];
    }
  });
}

Var conv2d(const Var& x, const Var& kernel, const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d");
  require_rank(kernel, 4, "conv2d kernel");
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  const std::size_t B = xs[0], H = xs[1], W = xs[2], Ci = xs[3];
  const std::size_t KH = ks[0], KW = ks[1], Co = ks[3];
  if (ks[2] != Ci) throw ShapeError("conv2d: kernel input features " + std::to_string(ks[2]) + " != " + std::to_string(Ci));
  const PadInfo ph = pad_info(H, KH, opt.stride_h, opt.padding);
  const PadInfo pw = pad_info(W, KW, opt.stride_w, opt.padding);
  const std::size_t OH = ph.out, OW = pw.out;
  Tensor out({B, OH, OW, Co});
  const double* xd = x.value().data();
  const double* kd = kernel.value().data();
  double* od = out.data();
  const auto sh = static_cast<std::ptrdiff_t>(opt.stride_h), sw = static_cast<std::ptrdiff_t>(opt.stride_w);
  const auto pt = static_cast<std::ptrdiff_t>(ph.before), pl = static_cast<std::ptrdiff_t>(pw.before);

  // Visits every (output, kernel tap, input) triple with a valid input index.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          const std::size_t o = ((b * OH + oh) * OW + ow) * Co;
          for (std::size_t ki = 0; ki < KH; ++ki) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * sh + static_cast<std::ptrdiff_t>(ki) - pt;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kj = 0; kj < KW; ++kj) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * sw + static_cast<std::ptrdiff_t>(kj) - pl;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t xi = ((b * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)) * Ci;
              const std::size_t kk = (ki * KW + kj) * Ci * Co;
              fn(o, xi, kk);
            }
          }
        }
  };

  for_each_tap([&](std::size_t o, std::size_t xi, std::size_t kk) {
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const double xv = xd[xi + ci];
      const double* krow = kd + kk + ci * Co;
      double* orow = od + o;
      for (std::size_t co = 0; co < Co; ++co) orow[co] += xv * krow[co];
    }
  });

  return Var::make(std::move(out), {x, kernel}, [for_each_tap, Ci, Co](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    Tensor* gk = parent_grad(self, 1);
    const double* xd = parent_value(self, 0).data();
    const double* kd = parent_value(self, 1).data();
    const double* gd = self.grad.data();
    for_each_tap([&](std::size_t o, std::size_t xi, std::size_t kk) {
      const double* grow = gd + o;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* krow = kd + kk + ci * Co;
        if (gx) {
          double acc = 0.0;
          for (std::size_t co = 0; co < Co; ++co) acc += grow[co] * krow[co];
          (*gx)[xi + ci] += acc;
        }
        if (gk) {
          const double xv = xd[xi + ci];
          double* gkrow = gk->data() + kk + ci * Co;
          for (std::size_t co = 0; co < Co; ++co) gkrow[co] += xv * grow[co];
        }
      }
    });
  });
}

Var depthwise_conv2d(const Var& x, const Var& kernel, const Conv2dOptions& opt) {
  require_rank(x, 4, "depthwise_conv2d");
  require_rank(kernel, 4, "depthwise_conv2d kernel");
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  const std::size_t B = xs[0], H = xs[1], W = xs[2], Ci = xs[3];
  const std::size_t KH = ks[0], KW = ks[1], D = ks[3];
  if (ks[2] != Ci) {
    throw ShapeError("depthwise_conv2d: kernel input features " + std::to_string(ks[2]) + " != " + std::to_string(Ci));
  }
  const PadInfo ph = pad_info(H, KH, opt.stride_h, opt.padding);
  const PadInfo pw = pad_info(W, KW, opt.stride_w, opt.padding);
  const std::size_t OH = ph.out, OW = pw.out, Co = Ci * D;
  Tensor out({B, OH, OW, Co});
  const auto sh = static_cast<std::ptrdiff_t>(opt.stride_h), sw = static_cast<std::ptrdiff_t>(opt.stride_w);
  const auto pt = static_cast<std::ptrdiff_t>(ph.before), pl = static_cast<std::ptrdiff_t>(pw.before);

  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          const std::size_t o = ((b * OH + oh) * OW + ow) * Co;
          for (std::size_t ki = 0; ki < KH; ++ki) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * sh + static_cast<std::ptrdiff_t>(ki) - pt;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kj = 0; kj < KW; ++kj) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * sw + static_cast<std::ptrdiff_t>(kj) - pl;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t xi = ((b * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)) * Ci;
              const std::size_t kk = (ki * KW + kj) * Ci * D;
              fn(o, xi, kk);
            }
          }
        }
  };

  const double* xd = x.value().data();
  const double* kd = kernel.value().data();
  double* od = out.data();
  // Output feature f = ci * D + m, which is also the kernel's flat (ci, m) index.
  for_each_tap([&](std::size_t o, std::size_t xi, std::size_t kk) {
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const double xv = xd[xi + ci];
      for (std::size_t m = 0; m < D; ++m) od[o + ci * D + m] += xv * kd[kk + ci * D + m];
    }
  });

  return Var::make(std::move(out), {x, kernel}, [for_each_tap, Ci, D](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    Tensor* gk = parent_grad(self, 1);
    const double* xd = parent_value(self, 0).data();
    const double* kd = parent_value(self, 1).data();
    const double* gd = self.grad.data();
    for_each_tap([&](std::size_t o, std::size_t xi, std::size_t kk) {
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        for (std::size_t m = 0; m < D; ++m) {
          const double g = gd[o + ci * D + m];
          if (gx) (*gx)[xi + ci] += g * kd[kk + ci * D + m];
          if (gk) (*gk)[kk + ci * D + m] += g * xd[xi + ci];
        }
      }
    });
  });
}

Var separable_conv2d(const Var& x, const Var& depthwise_kernel, const Var& pointwise_kernel,
                     const Conv2dOptions& opt) {
  const auto& ps = pointwise_kernel.shape();
  if (ps.size() != 4 || ps[0] != 1 || ps[1] != 1) throw ShapeError("separable_conv2d: pointwise kernel must be (1,1,F,F_out)");
  return conv2d(depthwise_conv2d(x, depthwise_kernel, opt), pointwise_kernel, Conv2dOptions{});
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
  const std::size_t F = x.shape().back();
  if (gamma.value().size() != F || beta.value().size() != F || state.running_mean.size() != F) {
    throw ShapeError("batch_norm: feature count mismatch for input " + shape_str(x.shape()));
  }
  const Tensor& xv = x.value();
  const std::size_t N = xv.size() / F;
  const double eps = state.epsilon;
  std::vector<double> mean(F, 0.0), var(F, 0.0);
  if (mode == Mode::train) {
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t f = 0; f < F; ++f) mean[f] += xv[r * F + f];
    for (auto& m : mean) m /= static_cast<double>(N);
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t f = 0; f < F; ++f) {
        const double d = xv[r * F + f] - mean[f];
        var[f] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(N);
    const double m = state.momentum;
    for (std::size_t f = 0; f < F; ++f) {
      state.running_mean[f] = m * state.running_mean[f] + (1.0 - m) * mean[f];
      state.running_var[f] = m * state.running_var[f] + (1.0 - m) * var[f];
    }
  } else {
    for (std::size_t f = 0; f < F; ++f) {
      mean[f] = state.running_mean[f];
      var[f] = state.running_var[f];
    }
  }
  std::vector<double> inv_std(F);
  for (std::size_t f = 0; f < F; ++f) inv_std[f] = 1.0 / std::sqrt(var[f] + eps);
  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  const Tensor& g = gamma.value();
  const Tensor& b = beta.value();
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t i = r * F + f;
      xhat[i] = (xv[i] - mean[f]) * inv_std[f];
      out[i] = g[f] * xhat[i] + b[f];
    }
  const bool train = mode == Mode::train;
  return Var::make(std::move(out), {x, gamma, beta},
                   [xhat = std::move(xhat), inv_std = std::move(inv_std), F, N, train](Node& self) {
                     const Tensor& gv = parent_value(self, 1);
                     const Tensor& gy = self.grad;
                     if (Tensor* gg = parent_grad(self, 1)) {
                       for (std::size_t i = 0; i < gy.size(); ++i) (*gg)[i % F] += gy[i] * xhat[i];
                     }
                     if (Tensor* gb = parent_grad(self, 2)) {
                       for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i % F] += gy[i];
                     }
                     Tensor* gx = parent_grad(self, 0);
                     if (!gx) return;
                     if (!train) {
                       for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i] * gv[i % F] * inv_std[i % F];
                       return;
                     }
                     std::vector<double> sum_d(F, 0.0), sum_dx(F, 0.0);
                     for (std::size_t i = 0; i < gy.size(); ++i) {
                       const double d = gy[i] * gv[i % F];
                       sum_d[i % F] += d;
                       sum_dx[i % F] += d * xhat[i];
                     }
                     const double n = static_cast<double>(N);
                     for (std::size_t i = 0; i < gy.size(); ++i) {
                       const std::size_t f = i % F;
                       const double d = gy[i] * gv[f];
                       (*gx)[i] += inv_std[f] / n * (n * d - sum_d[f] - xhat[i] * sum_dx[f]);
                     }
                   });
}

Var selu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * std::expm1(v);
  return Var::make(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      const Tensor& xv = parent_value(self, 0);
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double d = xv[i] > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(xv[i]);
        (*g)[i] += self.grad[i] * d;
      }
    }
  });
}

Var prelu(const Var& x, const Var& alpha) {
  if (alpha.value().size() != 1) throw ShapeError("prelu: alpha must be a single shared scalar");
  const double a = alpha.value()[0];
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : a * v;
  return Var::make(std::move(out), {x, alpha}, [a](Node& self) {
    const Tensor& xv = parent_value(self, 0);
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (xv[i] > 0.0 ? 1.0 : a);
    }
    if (Tensor* g = parent_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] <= 0.0) acc += self.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

Var avg_pool2d(const Var& x, const PoolOptions& opt) {
  require_rank(x, 4, "avg_pool2d");
  const auto& xs = x.shape();
  const std::size_t B = xs[0], H = xs[1], W = xs[2], F = xs[3];
  const std::size_t OH = pool_out_len(H, opt.pool_h, opt.stride_h);
  const std::size_t OW = pool_out_len(W, opt.pool_w, opt.stride_w);
  const double inv = 1.0 / static_cast<double>(opt.pool_h * opt.pool_w);
  Tensor out({B, OH, OW, F});
  const Tensor& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        double* o = out.data() + ((b * OH + oh) * OW + ow) * F;
        for (std::size_t i = 0; i < opt.pool_h; ++i)
          for (std::size_t j = 0; j < opt.pool_w; ++j) {
            const double* src = xv.data() + ((b * H + oh * opt.stride_h + i) * W + ow * opt.stride_w + j) * F;
            for (std::size_t f = 0; f < F; ++f) o[f] += src[f];
          }
        for (std::size_t f = 0; f < F; ++f) o[f] *= inv;
      }
  return Var::make(std::move(out), {x}, [=](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          const double* go = self.grad.data() + ((b * OH + oh) * OW + ow) * F;
          for (std::size_t i = 0; i < opt.pool_h; ++i)
            for (std::size_t j = 0; j < opt.pool_w; ++j) {
              double* dst = g->data() + ((b * H + oh * opt.stride_h + i) * W + ow * opt.stride_w + j) * F;
              for (std::size_t f = 0; f < F; ++f) dst[f] += go[f] * inv;
            }
        }
  });
}

Var dropout(const Var& x, double rate, Mode mode, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  for (auto& m : mask.values()) m = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return Var::make(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * mask[i];
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(weight, 2, "linear weight");
  const std::size_t in = weight.dim(0), out_f = weight.dim(1);
  if (x.shape().back() != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.value().size() != out_f) throw ShapeError("linear: bias length mismatch");
  const std::size_t rows = x.value().size() / in;
  Shape so = x.shape();
  so.back() = out_f;
  Tensor out(so);
  const double* xd = x.value().data();
  const double* wd = weight.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * out_f;
    if (has_bias) std::copy_n(bias.value().data(), out_f, o);
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xd[r * in + i];
      const double* w = wd + i * out_f;
      for (std::size_t j = 0; j < out_f; ++j) o[j] += xv * w[j];
    }
  }
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var::make(std::move(out), std::move(parents), [rows, in, out_f, has_bias](Node& self) {
    const double* xd = parent_value(self, 0).data();
    const double* wd = parent_value(self, 1).data();
    const double* gd = self.grad.data();
    Tensor* gx = parent_grad(self, 0);
    Tensor* gw = parent_grad(self, 1);
    Tensor* gb = has_bias ? parent_grad(self, 2) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* go = gd + r * out_f;
      for (std::size_t i = 0; i < in; ++i) {
        const double* w = wd + i * out_f;
        if (gx) {
          double acc = 0.0;
          for (std::size_t j = 0; j < out_f; ++j) acc += go[j] * w[j];
          (*gx)[r * in + i] += acc;
        }
        if (gw) {
          const double xv = xd[r * in + i];
          double* gwr = gw->data() + i * out_f;
          for (std::size_t j = 0; j < out_f; ++j) gwr[j] += xv * go[j];
        }
      }
      if (gb) {
        for (std::size_t j = 0; j < out_f; ++j) (*gb)[j] += go[j];
      }
    }
  });
}

namespace {

// Shared softmax backward: dx = p * (g - sum(g * p)) per row.
void softmax_backward(Node& self, std::size_t n) {
  Tensor* g = parent_grad(self, 0);
  if (!g) return;
  const Tensor& p = self.value;
  const std::size_t rows = p.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pr = p.data() + r * n;
    const double* gr = self.grad.data() + r * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += gr[j] * pr[j];
    for (std::size_t j = 0; j < n; ++j) (*g)[r * n + j] += pr[j] * (gr[j] - dot);
  }
}

}  // namespace

Var softmax(const Var& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().size() / n;
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  return Var::make(std::move(out), {x}, [n](Node& self) { softmax_backward(self, n); });
}

Var masked_softmax(const Var& x, const SoftmaxMask& mask) {
  const std::size_t n = x.shape().back();
  if (mask.rows == 0 || mask.allowed.size() != mask.rows * n || mask.repeat_inner == 0) {
    throw ShapeError("masked_softmax: mask layout does not match last axis " + std::to_string(n));
  }
  const std::size_t rows = x.value().size() / n;
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t mr = (r / mask.repeat_inner) % mask.rows;
    const std::uint8_t* m = mask.allowed.data() + mr * n;
    double* row = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (m[j]) mx = std::isnan(row[j]) || std::isnan(mx) ? row[j] + mx : std::max(mx, row[j]);
    if (std::isnan(mx)) {
      // Propagate so the loss check reports it.
      for (std::size_t j = 0; j < n; ++j) row[j] = m[j] ? mx : 0.0;
      continue;
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      if (!mask.fallback_to_self || mr >= n) throw InvalidArgument("masked_softmax: every position of a row is masked");
      std::fill(row, row + n, 0.0);
      row[mr] = 1.0;
      continue;
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = m[j] ? std::exp(row[j] - mx) : 0.0;
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  // Masked entries have p == 0, so the shared backward gives them exactly 0.
  // Fallback rows are constant in x: p*(g - dot) is 0 there too.
  return Var::make(std::move(out), {x}, [n](Node& self) { softmax_backward(self, n); });
}

Tensor positional_encoding(std::size_t length, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw InvalidArgument("positional encoding dimension must be even and positive");
  Tensor pe({length, dim});
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe[t * dim + 2 * i] = std::sin(angle);
      pe[t * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

Var add_positional(const Var& x, const Var& scale_param, const Tensor& pe) {
  const std::size_t block = pe.size();
  const auto& xs = x.shape();
  if (xs.size() < 2 || xs[xs.size() - 2] != pe.dim(0) || xs.back() != pe.dim(1)) {
    throw ShapeError("add_positional: input " + shape_str(xs) + " vs table " + shape_str(pe.shape()));
  }
  if (scale_param.value().size() != 1) throw ShapeError("add_positional: scale must be scalar");
  const double s = scale_param.value()[0];
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * pe[i % block];
  return Var::make(std::move(out), {x, scale_param}, [pe, block](Node& self) {
    if (Tensor* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = parent_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pe[i % block];
      (*g)[0] += acc;
    }
  });
}

Var pairwise_sum(const Var& src, const Var& dst) {
  require_rank(src, 4, "pairwise_sum");
  if (src.shape() != dst.shape() || src.shape()[3] != 1) {
    throw ShapeError("pairwise_sum: expected matching (B,C,T,1) inputs");
  }
  const std::size_t B = src.dim(0), C = src.dim(1), T = src.dim(2);
  Tensor out({B, C, T, C});
  const Tensor& s = src.value();
  const Tensor& d = dst.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t t = 0; t < T; ++t) {
        const double si = s[(b * C + i) * T + t];
        double* row = out.data() + ((b * C + i) * T + t) * C;
        for (std::size_t j = 0; j < C; ++j) row[j] = si + d[(b * C + j) * T + t];
      }
  return Var::make(std::move(out), {src, dst}, [B, C, T](Node& self) {
    Tensor* gs = parent_grad(self, 0);
    Tensor* gd = parent_grad(self, 1);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t t = 0; t < T; ++t) {
          const double* row = self.grad.data() + ((b * C + i) * T + t) * C;
          if (gs) {
            double acc = 0.0;
            for (std::size_t j = 0; j < C; ++j) acc += row[j];
            (*gs)[(b * C + i) * T + t] += acc;
          }
          if (gd) {
            for (std::size_t j = 0; j < C; ++j) (*gd)[(b * C + j) * T + t] += row[j];
          }
        }
  });
}

Var graph_aggregate(const Var& alpha, const Var& values) {
  require_rank(alpha, 4, "graph_aggregate alpha");
  require_rank(values, 4, "graph_aggregate values");
  const std::size_t B = values.dim(0), C = values.dim(1), T = values.dim(2), F = values.dim(3);
  if (alpha.shape() != Shape{B, C, T, C}) {
    throw ShapeError("graph_aggregate: alpha " + shape_str(alpha.shape()) + " vs values " + shape_str(values.shape()));
  }
  Tensor out(values.shape());
  const Tensor& a = alpha.value();
  const Tensor& v = values.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t t = 0; t < T; ++t) {
        const double* arow = a.data() + ((b * C + i) * T + t) * C;
        double* o = out.data() + ((b * C + i) * T + t) * F;
        for (std::size_t j = 0; j < C; ++j) {
          const double w = arow[j];
          if (w == 0.0) continue;
          const double* vj = v.data() + ((b * C + j) * T + t) * F;
          for (std::size_t f = 0; f < F; ++f) o[f] += w * vj[f];
        }
      }
  return Var::make(std::move(out), {alpha, values}, [B, C, T, F](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    Tensor* gv = parent_grad(self, 1);
    const Tensor& a = parent_value(self, 0);
    const Tensor& v = parent_value(self, 1);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t arow = ((b * C + i) * T + t) * C;
          const double* go = self.grad.data() + ((b * C + i) * T + t) * F;
          for (std::size_t j = 0; j < C; ++j) {
            const std::size_t vj = ((b * C + j) * T + t) * F;
            if (ga) {
              double acc = 0.0;
              for (std::size_t f = 0; f < F; ++f) acc += go[f] * v[vj + f];
              (*ga)[arow + j] += acc;
            }
            if (gv) {
              const double w = a[arow + j];
              for (std::size_t f = 0; f < F; ++f) (*gv)[vj + f] += w * go[f];
            }
          }
        }
  });
}

Var attention_scores(const Var& query, const Var& key, std::size_t heads) {
  require_rank(query, 3, "attention_scores query");
  require_rank(key, 3, "attention_scores key");
  const std::size_t B = query.dim(0), L = query.dim(1), S = key.dim(1);
  if (key.dim(0) != B || query.dim(2) != key.dim(2) || heads == 0 || query.dim(2) % heads != 0) {
    throw ShapeError("attention_scores: query " + shape_str(query.shape()) + " vs key " + shape_str(key.shape()));
  }
  const std::size_t HD = query.dim(2), dk = HD / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor out({B, heads, L, S});
  const Tensor& q = query.value();
  const Tensor& k = key.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t s = 0; s < S; ++s) {
          double acc = 0.0;
          for (std::size_t d = 0; d < dk; ++d) acc += q[(b * L + l) * HD + h * dk + d] * k[(b * S + s) * HD + h * dk + d];
          out[((b * heads + h) * L + l) * S + s] = acc * inv;
        }
  return Var::make(std::move(out), {query, key}, [B, L, S, HD, dk, heads, inv](Node& self) {
    Tensor* gq = parent_grad(self, 0);
    Tensor* gk = parent_grad(self, 1);
    const Tensor& q = parent_value(self, 0);
    const Tensor& k = parent_value(self, 1);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t s = 0; s < S; ++s) {
            const double g = self.grad[((b * heads + h) * L + l) * S + s] * inv;
            const std::size_t qi = (b * L + l) * HD + h * dk;
            const std::size_t ki = (b * S + s) * HD + h * dk;
            for (std::size_t d = 0; d < dk; ++d) {
              if (gq) (*gq)[qi + d] += g * k[ki + d];
              if (gk) (*gk)[ki + d] += g * q[qi + d];
            }
          }
  });
}

Var attention_context(const Var& probs, const Var& value, std::size_t heads) {
  require_rank(probs, 4, "attention_context probs");
  require_rank(value, 3, "attention_context value");
  const std::size_t B = probs.dim(0), L = probs.dim(2), S = probs.dim(3);
  if (probs.dim(1) != heads || value.dim(0) != B || value.dim(1) != S || value.dim(2) % heads != 0) {
    throw ShapeError("attention_context: probs " + shape_str(probs.shape()) + " vs value " + shape_str(value.shape()));
  }
  const std::size_t HD = value.dim(2), dv = HD / heads;
  Tensor out({B, L, HD});
  const Tensor& p = probs.value();
  const Tensor& v = value.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < L; ++l) {
        double* o = out.data() + (b * L + l) * HD + h * dv;
        for (std::size_t s = 0; s < S; ++s) {
          const double w = p[((b * heads + h) * L + l) * S + s];
          const double* vs = v.data() + (b * S + s) * HD + h * dv;
          for (std::size_t d = 0; d < dv; ++d) o[d] += w * vs[d];
        }
      }
  return Var::make(std::move(out), {probs, value}, [B, L, S, HD, dv, heads](Node& self) {
    Tensor* gp = parent_grad(self, 0);
    Tensor* gv = parent_grad(self, 1);
    const Tensor& p = parent_value(self, 0);
    const Tensor& v = parent_value(self, 1);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < L; ++l) {
          const double* go = self.grad.data() + (b * L + l) * HD + h * dv;
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t pi = ((b * heads + h) * L + l) * S + s;
            const std::size_t vi = (b * S + s) * HD + h * dv;
            if (gp) {
              double acc = 0.0;
              for (std::size_t d = 0; d < dv; ++d) acc += go[d] * v[vi + d];
              (*gp)[pi] += acc;
            }
            if (gv) {
              for (std::size_t d = 0; d < dv; ++d) (*gv)[vi + d] += p[pi] * go[d];
            }
          }
        }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) throw ShapeError("softmax_cross_entropy: label count mismatch");
  Tensor probs(logits.shape());
  double loss = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t b = 0; b < B; ++b) {
    if (lab[b] < 0 || static_cast<std::size_t>(lab[b]) >= K) {
      throw InvalidArgument("label " + std::to_string(lab[b]) + " out of range for " + std::to_string(K) + " classes");
    }
    const double* row = logits.value().data() + b * K;
    const double mx = *std::max_element(row, row + K);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
    const double log_z = mx + std::log(sum);
    for (std::size_t k = 0; k < K; ++k) probs[b * K + k] = std::exp(row[k] - log_z);
    loss += log_z - row[lab[b]];
  }
  loss /= static_cast<double>(B);
  return Var::make(Tensor::scalar(loss), {logits}, [probs = std::move(probs), lab = std::move(lab), B, K](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    const double scale_b = self.grad[0] / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k) {
        const double onehot = static_cast<std::size_t>(lab[b]) == k ? 1.0 : 0.0;
        (*g)[b * K + k] += scale_b * (probs[b * K + k] - onehot);
      }
  });
}

Var binary_cross_entropy(const Var& probs, std::span<const int> labels, double eps) {
  const std::size_t n = probs.value().size();
  if (labels.size() != n) throw ShapeError("binary_cross_entropy: label count mismatch");
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[i] != 0 && lab[i] != 1) throw InvalidArgument("binary_cross_entropy: labels must be 0 or 1");
    const double p = std::clamp(probs.value()[i], eps, 1.0 - eps);
    loss -= lab[i] ? std::log(p) : std::log(1.0 - p);
  }
  loss /= static_cast<double>(n);
  return Var::make(Tensor::scalar(loss), {probs}, [lab = std::move(lab), n, eps](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    const Tensor& pv = parent_value(self, 0);
    const double s = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = pv[i];
      if (p < eps || p > 1.0 - eps) continue;  // clamped: flat
      (*g)[i] += s * (lab[i] ? -1.0 / p : 1.0 / (1.0 - p));
    }
  });
}

}  // namespace agtcnet::nn
