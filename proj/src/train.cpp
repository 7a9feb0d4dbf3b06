#include "agtcnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "agtcnet/rng.hpp"

namespace agtcnet::train {

nn::Var cce_loss(const nn::Var& logits, std::span<const int> labels) {
  return nn::softmax_cross_entropy(logits, labels);
}

nn::Var bce_loss(const nn::Var& probs, std::span<const int> labels) {
  if (probs.shape().size() != 2 || probs.dim(1) != 2) throw ShapeError("bce_loss expects (B, 2) probabilities");
  return nn::binary_cross_entropy(nn::select_last(probs, 1), labels);
}

Adam::Adam(std::vector<nn::LayerParam>& params, double learning_rate, AdamConfig config)
    : params_(&params), config_(config), lr_(learning_rate) {
  for (const auto& p : params) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void Adam::zero_grad() {
  for (auto& p : *params_) p.var.zero_grad();
}

void Adam::step() {
  ++t_;
  const double t = static_cast<double>(t_);
  const double lr_t = lr_ * std::sqrt(1.0 - std::pow(config_.beta2, t)) / (1.0 - std::pow(config_.beta1, t));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    nn::Var& var = (*params_)[i].var;
    if (!var.has_grad()) {
      // Zero gradient still decays the moments.
      for (auto& x : m_[i].values()) x *= config_.beta1;
      for (auto& x : v_[i].values()) x *= config_.beta2;
    } else {
      const auto g = var.grad().values();
      auto m = m_[i].values();
      auto v = v_[i].values();
      for (std::size_t j = 0; j < g.size(); ++j) {
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      }
    }
    auto w = var.mutable_value().values();
    const auto m = m_[i].values();
    const auto v = v_[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr_t * m[j] / (std::sqrt(v[j]) + config_.epsilon);
  }
  nn::apply_constraints(*params_);
}

double PlateauScheduler::step(double monitored, double lr) {
  if (cooldown_left > 0) {
    --cooldown_left;
    wait = 0;
  }
  if (monitored < best - min_delta) {
    best = monitored;
    wait = 0;
    return lr;
  }
  if (cooldown_left > 0) return lr;
  ++wait;
  if (wait > patience) {
    wait = 0;
    cooldown_left = cooldown;
    if (lr > min_lr) return std::max(lr * factor, min_lr);
  }
  return lr;
}

bool early_stop_check(const eval::MetricTrace& trace, std::size_t patience) {
  const auto& acc = trace.val_acc;
  if (acc.empty()) return false;
  const std::size_t best = static_cast<std::size_t>(std::max_element(acc.begin(), acc.end()) - acc.begin());
  return acc.size() - 1 - best > patience;
}

nn::Tensor make_batch(const eval::TrialSet& data, std::span<const std::size_t> indices,
                      const model::ModelConfig& config) {
  const std::size_t C = config.num_channels, T = config.num_samples;
  nn::Tensor x({indices.size(), C, T, 1});
  double* out = x.data();
  for (std::size_t i : indices) {
    const auto& trial = data.trials.at(i);
    if (trial.channels() != C || trial.samples() != T) {
      throw DataError("trial '" + data.ids.at(i) + "' is " + std::to_string(trial.channels()) + "x" +
                      std::to_string(trial.samples()) + ", model expects " + std::to_string(C) + "x" +
                      std::to_string(T));
    }
    for (const auto& row : trial.data) out = std::copy(row.begin(), row.end(), out);
  }
  return x;
}

namespace {

std::vector<int> labels_of(const eval::TrialSet& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  for (std::size_t i : indices) out.push_back(data.trials[i].label);
  return out;
}

nn::Var loss_of(const model::ForwardResult& r, std::span<const int> labels, LossKind kind) {
  return kind == LossKind::categorical ? cce_loss(r.logits, labels) : bce_loss(r.probs, labels);
}

int argmax_row(const nn::Tensor& probs, std::size_t row) {
  const std::size_t K = probs.dim(1);
  const double* p = probs.data() + row * K;
  return static_cast<int>(std::max_element(p, p + K) - p);
}

void check_finite(double loss, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite training loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                       ", batch " + std::to_string(batch));
  }
}

}  // namespace

EvalResult evaluate(model::Agtcnet& model, const eval::TrialSet& data, LossKind loss, std::size_t batch_size) {
  if (data.size() == 0) throw InvalidArgument("evaluate: empty trial set");
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  const std::size_t K = model.config().num_classes;
  EvalResult r;
  r.probs = nn::Tensor({data.size(), K});
  double loss_sum = 0.0;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    const std::span<const std::size_t> batch(idx.data() + b, std::min(batch_size, idx.size() - b));
    const auto labels = labels_of(data, batch);
    auto out = model.forward(nn::Var(make_batch(data, batch, model.config())), {nn::Mode::infer, nullptr});
    loss_sum += loss_of(out, labels, loss).value()[0] * static_cast<double>(batch.size());
    const nn::Tensor& p = out.probs.value();
    std::copy(p.values().begin(), p.values().end(), r.probs.data() + b * K);
    for (std::size_t i = 0; i < batch.size(); ++i) r.preds.push_back(argmax_row(p, i));
    r.labels.insert(r.labels.end(), labels.begin(), labels.end());
  }
  r.loss = loss_sum / static_cast<double>(data.size());
  r.acc = eval::accuracy(r.preds, r.labels);
  return r;
}

TrainReport train(model::Agtcnet& model, const eval::TrialSet& train_set, const eval::TrialSet& val_set,
                  const TrainOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  if (train_set.size() == 0 || val_set.size() == 0) throw InvalidArgument("train and validation sets must be nonempty");
  if (options.batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (auto leaks = eval::audit_sets(train_set.metas(), val_set.metas()); !leaks.empty()) {
    throw eval::LeakageError(std::move(leaks));
  }

  TrainReport report;
  report.tag = options.tag;
  report.initial_lr = options.learning_rate;
  report.initial_val = evaluate(model, val_set, options.loss, options.batch_size);
  report.best_val_acc = -1.0;

  Adam adam(model.params(), options.learning_rate, options.adam);
  PlateauScheduler sched = options.scheduler;
  const RngStream root(options.seed);
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle = root.fork("shuffle").fork(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    RngStream dropout_rng = root.fork("dropout").fork(epoch);

    const double lr = adam.learning_rate();
    double loss_sum = 0.0;
    std::size_t correct = 0, batch_no = 0;
    for (std::size_t b = 0; b < order.size(); b += options.batch_size, ++batch_no) {
      const std::span<const std::size_t> batch(order.data() + b, std::min(options.batch_size, order.size() - b));
      const auto labels = labels_of(train_set, batch);
      adam.zero_grad();
      auto out = model.forward(nn::Var(make_batch(train_set, batch, model.config())), {nn::Mode::train, &dropout_rng});
      nn::Var loss = loss_of(out, labels, options.loss);
      const double l = loss.value()[0];
      check_finite(l, epoch, batch_no);
      nn::backward(loss);
      adam.step();
      loss_sum += l * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) correct += argmax_row(out.probs.value(), i) == labels[i];
    }

    const EvalResult val = evaluate(model, val_set, options.loss, options.batch_size);
    if (!std::isfinite(val.loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    auto& tr = report.trace;
    tr.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    tr.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(order.size()));
    tr.val_loss.push_back(val.loss);
    tr.val_acc.push_back(val.acc);
    tr.lr.push_back(lr);
    if (options.lr_decay) adam.set_learning_rate(sched.step(val.loss, lr));

    if (val.acc > report.best_val_acc) {
      report.best_val_acc = val.acc;
      report.best_epoch = epoch;
      report.best_state = model.snapshot();
    }
    if (early_stop_check(tr, options.early_stop_patience)) {
      report.early_stopped = epoch < options.max_epochs;
      break;
    }
  }
  if (report.best_epoch == 0) report.best_val_acc = report.initial_val.acc;
  if (report.trace.epochs() > 0) report.best_sma = eval::max_sma(report.trace);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

TrainReport fine_tune(model::Agtcnet& model, const std::filesystem::path& checkpoint,
                      const eval::TrialSet& train_set, const eval::TrialSet& val_set, TrainOptions options) {
  model::load_weights_into(model, checkpoint);
  options.learning_rate = kFineTuneLearningRate;
  options.tag = eval::framework_name(eval::Framework::sl_ds_ft);
  return train(model, train_set, val_set, options);
}

}  // namespace agtcnet::train
