#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "agtcnet/eval.hpp"
#include "agtcnet/model.hpp"

namespace agtcnet::train {

enum class LossKind { categorical, binary };

// Mean categorical cross-entropy on logits, softmax fused in.
nn::Var cce_loss(const nn::Var& logits, std::span<const int> labels);
// Mean binary cross-entropy on the positive-class column of (B, 2) probs.
nn::Var bce_loss(const nn::Var& probs, std::span<const int> labels);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

class Adam {
 public:
  Adam(std::vector<nn::LayerParam>& params, double learning_rate, AdamConfig config = {});

  // One update from the parameters' current gradients (missing gradients
  // count as zero), then constraint projection.
  void step();
  void zero_grad();

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<nn::LayerParam>* params_;
  AdamConfig config_;
  double lr_;
  std::uint64_t t_ = 0;
  std::vector<nn::Tensor> m_, v_;
};

// Multiplicative decay when the monitored loss stops improving.
struct PlateauScheduler {
  double factor = 0.9;
  std::size_t patience = 10;
  std::size_t cooldown = 0;
  double min_lr = 1e-4;
  double min_delta = 1e-4;

  double best = std::numeric_limits<double>::infinity();
  std::size_t wait = 0;
  std::size_t cooldown_left = 0;

  // Returns the learning rate for the next epoch.
  double step(double monitored, double lr);
};

// True once the epochs elapsed since the best validation accuracy exceed
// `patience`.
bool early_stop_check(const eval::MetricTrace& trace, std::size_t patience);

struct TrainOptions {
  std::size_t max_epochs = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  LossKind loss = LossKind::categorical;
  std::size_t early_stop_patience = 300;
  bool lr_decay = true;
  PlateauScheduler scheduler;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::string tag;
};

constexpr double kFineTuneLearningRate = 5e-4;

struct EvalResult {
  double loss = 0.0;
  double acc = 0.0;
  std::vector<int> preds;
  std::vector<int> labels;
  nn::Tensor probs;  // (N, K)
};

// Batched inference-mode evaluation.
EvalResult evaluate(model::Agtcnet& model, const eval::TrialSet& data, LossKind loss, std::size_t batch_size = 32);

// (B, C, T, 1) input tensor for trials[indices].
nn::Tensor make_batch(const eval::TrialSet& data, std::span<const std::size_t> indices, const model::ModelConfig& config);

struct TrainReport {
  std::string tag;
  eval::MetricTrace trace;
  std::size_t best_epoch = 0;  // 1-based, 0 when no epoch ran
  double best_val_acc = 0.0;
  eval::EpochValue best_sma;
  model::Agtcnet::Snapshot best_state;
  double initial_lr = 0.0;
  EvalResult initial_val;  // validation metrics before the first update
  bool early_stopped = false;
  double wall_seconds = 0.0;
};

// Refuses (LeakageError) when train and val share a trial or overlapping
// window. Leaves the model holding its final-epoch state; the best state is
// in the report.
TrainReport train(model::Agtcnet& model, const eval::TrialSet& train_set, const eval::TrialSet& val_set,
                  const TrainOptions& options);

// Loads the checkpoint into `model` and trains at the fine-tuning rate.
TrainReport fine_tune(model::Agtcnet& model, const std::filesystem::path& checkpoint,
                      const eval::TrialSet& train_set, const eval::TrialSet& val_set, TrainOptions options);

}  // namespace agtcnet::train
