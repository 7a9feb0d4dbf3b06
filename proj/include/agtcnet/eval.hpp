#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agtcnet/error.hpp"
#include "agtcnet/signal.hpp"

namespace agtcnet::eval {

enum class Framework { sl_ds, sl_rs, sm_ds, sm_rs, sn, sl_ds_ft };

std::string framework_name(Framework f);  // "SL-DS", ...
// Accepts the display name or its lowercase/underscore form ("sl_ds", "sl-ds").
Framework parse_framework(const std::string& s);

enum class CvScheme { loso, lmso };

// Provenance of one trial, enough to audit a split.
struct TrialMeta {
  std::string id;
  std::string subject;
  std::string session;
  std::string run;
  int label = 0;
  signal::WindowSpan span;
};

// Trials plus their unique ids. Index positions are what split folds refer to.
struct TrialSet {
  std::vector<signal::EpochedTrial> trials;
  std::vector<std::string> ids;

  std::size_t size() const { return trials.size(); }
  TrialMeta meta(std::size_t i) const;
  std::vector<TrialMeta> metas() const;
  TrialSet subset(std::span<const std::size_t> indices) const;
};

struct Fold {
  std::string name;
  std::vector<std::size_t> train;  // indices into SplitPlan::trials
  std::vector<std::size_t> val;
};

struct SplitPlan {
  Framework framework = Framework::sn;
  std::string scheme;  // "loso", "lmso", "loseo", "stratified"
  std::vector<TrialMeta> trials;
  std::vector<Fold> folds;
};

struct SplitOptions {
  CvScheme cv = CvScheme::loso;
  std::size_t k = 5;  // LMSO blocks / stratified folds
  std::uint64_t seed = 0;
  // Use the run id as the session key (datasets whose runs are sessions).
  bool runs_as_sessions = false;
};

SplitPlan make_splits(Framework framework, const std::vector<TrialMeta>& trials, const SplitOptions& opt = {});

struct LeakageViolation {
  std::size_t fold = 0;
  std::string train_id;
  std::string val_id;
  bool same_id = false;
  std::int64_t overlap = 0;  // samples shared by the two windows
};

// Every train/val pair that is the same trial or whose windows overlap within
// one (subject, session, run).
std::vector<LeakageViolation> audit_sets(const std::vector<TrialMeta>& train, const std::vector<TrialMeta>& val);
std::vector<LeakageViolation> leakage_audit(const SplitPlan& plan);

class LeakageError : public DataError {
 public:
  explicit LeakageError(std::vector<LeakageViolation> v);
  const std::vector<LeakageViolation>& violations() const { return violations_; }

 private:
  std::vector<LeakageViolation> violations_;
};

// Natural order: digit runs compare numerically ("S2" < "S10").
bool natural_less(const std::string& a, const std::string& b);

double accuracy(std::span<const int> preds, std::span<const int> labels);
// Sets *degenerate when both marginals put all mass on one class (kappa := 0).
double cohens_kappa(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes,
                    bool* degenerate = nullptr);

// rows = true class, columns = predicted.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;
ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes);

// Trailing mean over min(e, window) values.
std::vector<double> sma(std::span<const double> series, std::size_t window = 20);

struct MetricTrace {
  std::vector<double> train_loss, train_acc, val_loss, val_acc, lr;
  std::size_t epochs() const { return val_acc.size(); }
};

struct EpochValue {
  std::size_t epoch = 0;  // 1-based
  double value = 0.0;
};
// Maximum of the smoothed validation accuracy; earliest epoch on ties.
EpochValue max_sma(const MetricTrace& trace, std::size_t window = 20);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 0.0;
};
// H1: mean(a) > mean(b).
WelchResult welch_t_test_right(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
// P(T <= t) for Student's t with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

struct FoldResult {
  std::string fold;
  MetricTrace trace;
  double acc = 0.0;
  double ma_acc = 0.0;
  double kappa = 0.0;
  ConfusionMatrix confusion;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // n - 1 convention; 0 when n == 1
  std::size_t n = 0;
};

struct Summary {
  Stat ma_acc, acc, kappa;
  std::vector<FoldResult> folds;
  // Present when a baseline was given: this model vs. baseline, right-tailed.
  std::optional<WelchResult> ma_acc_vs_baseline, acc_vs_baseline, kappa_vs_baseline;
};

Stat describe(std::span<const double> v);
Summary aggregate_report(const std::vector<FoldResult>& results, const std::vector<FoldResult>* baseline = nullptr);

}  // namespace agtcnet::eval
