#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "agtcnet/autodiff.hpp"
#include "agtcnet/eval.hpp"
#include "agtcnet/model.hpp"
#include "agtcnet/rng.hpp"

namespace testing {

using agtcnet::RngStream;
using agtcnet::nn::Shape;
using agtcnet::nn::Tensor;
using agtcnet::nn::Var;

inline Tensor random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Exact element-wise equality, shapes included.
inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central finite differences of the scalar `loss()` against reverse-mode
// gradients for every tensor in `inputs`. With `max_per_tensor` set, a
// seeded sample of entries is checked instead of all of them.
inline GradCheck grad_check(std::vector<Var> inputs, const std::function<Var()>& loss, double h = 1e-5,
                            std::size_t max_per_tensor = 0, std::uint64_t seed = 7) {
  for (auto& v : inputs) v.zero_grad();
  Var out = loss();
  agtcnet::nn::backward(out);
  std::vector<Tensor> analytic;
  for (auto& v : inputs) analytic.push_back(v.has_grad() ? v.grad() : Tensor(v.shape()));

  GradCheck r;
  RngStream rng(seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = inputs[i].mutable_value();
    std::vector<std::size_t> idx(x.size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    if (max_per_tensor && idx.size() > max_per_tensor) {
      for (std::size_t j = idx.size(); j > 1; --j) std::swap(idx[j - 1], idx[rng.below(j)]);
      idx.resize(max_per_tensor);
    }
    for (std::size_t j : idx) {
      const double keep = x[j];
      x[j] = keep + h;
      const double up = loss().value()[0];
      x[j] = keep - h;
      const double down = loss().value()[0];
      x[j] = keep;
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[i][j], (up - down) / (2.0 * h)));
      ++r.checked;
    }
  }
  return r;
}

// Small configuration with every stage present, for gradient checks and
// training runs.
inline agtcnet::model::ModelConfig micro_config(std::size_t classes = 2) {
  agtcnet::model::ModelConfig c;
  c.num_channels = 4;
  c.num_samples = 64;
  c.num_classes = classes;
  c.ctc_kernel = 8;
  c.ctc_filters = 4;
  c.gcat_out_features = 4;
  c.gtc_filters = 8;
  c.mha_key_dim = 4;
  return c;
}

inline std::vector<std::string> micro_montage() { return {"FCz", "C3", "Cz", "C4"}; }

// Trials whose class is encoded in the sign of a per-class channel pattern,
// plus noise: separable by a linear read-out.
inline agtcnet::eval::TrialSet separable_trials(std::size_t n, std::size_t channels, std::size_t samples,
                                                std::size_t classes, std::uint64_t seed,
                                                const std::string& subject = "S1") {
  agtcnet::eval::TrialSet set;
  RngStream rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    agtcnet::signal::EpochedTrial t;
    t.label = static_cast<int>(i % classes);
    t.sampling_rate = 125.0;
    t.subject_id = subject;
    t.session_id = "A";
    t.run_id = "1";
    t.window_span = {static_cast<std::int64_t>(i * samples), static_cast<std::int64_t>((i + 1) * samples)};
    for (std::size_t c = 0; c < channels; ++c) {
      std::vector<double> row(samples);
      const double sign = (c % classes) == static_cast<std::size_t>(t.label) ? 1.0 : -1.0;
      for (std::size_t s = 0; s < samples; ++s) {
        row[s] = sign * std::sin(2.0 * M_PI * 6.0 * static_cast<double>(s) / 125.0 + 0.3 * static_cast<double>(c)) +
                 0.2 * rng.uniform(-1.0, 1.0);
      }
      t.data.push_back(std::move(row));
    }
    set.trials.push_back(std::move(t));
    set.ids.push_back(subject + "-" + std::to_string(i));
  }
  return set;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("agtcnet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
