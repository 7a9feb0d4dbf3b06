#include "agtcnet/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <tuple>
#include <unordered_map>

#include "agtcnet/rng.hpp"

namespace agtcnet::eval {

std::string framework_name(Framework f) {
  switch (f) {
    case Framework::sl_ds: return "SL-DS";
    case Framework::sl_rs: return "SL-RS";
    case Framework::sm_ds: return "SM-DS";
    case Framework::sm_rs: return "SM-RS";
    case Framework::sn: return "SN";
    case Framework::sl_ds_ft: return "SL-DS-FT";
  }
  return "?";
}

Framework parse_framework(const std::string& s) {
  std::string key;
  for (char c : s) key += c == '_' ? '-' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Framework f : {Framework::sl_ds, Framework::sl_rs, Framework::sm_ds, Framework::sm_rs, Framework::sn,
                      Framework::sl_ds_ft}) {
    if (framework_name(f) == key) return f;
  }
  throw InvalidArgument("unknown framework '" + s + "'");
}

TrialMeta TrialSet::meta(std::size_t i) const {
  const auto& t = trials.at(i);
  return TrialMeta{ids.at(i), t.subject_id, t.session_id, t.run_id, t.label, t.window_span};
}

std::vector<TrialMeta> TrialSet::metas() const {
  std::vector<TrialMeta> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(meta(i));
  return out;
}

TrialSet TrialSet::subset(std::span<const std::size_t> indices) const {
  TrialSet out;
  for (std::size_t i : indices) {
    out.trials.push_back(trials.at(i));
    out.ids.push_back(ids.at(i));
  }
  return out;
}

bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  while (i < a.size() && j < b.size()) {
    if (digit(a[i]) && digit(b[j])) {
      std::size_t ei = i, ej = j;
      while (ei < a.size() && digit(a[ei])) ++ei;
      while (ej < b.size() && digit(b[ej])) ++ej;
      std::string na = a.substr(i, ei - i), nb = b.substr(j, ej - j);
      na.erase(0, std::min(na.find_first_not_of('0'), na.size()));
      nb.erase(0, std::min(nb.find_first_not_of('0'), nb.size()));
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = ei;
      j = ej;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  if (a.size() - i != b.size() - j) return a.size() - i < b.size() - j;
  return a < b;
}

namespace {

struct NaturalLess {
  bool operator()(const std::string& a, const std::string& b) const { return natural_less(a, b); }
};

using RunKey = std::tuple<std::string, std::string, std::string>;

RunKey run_key(const TrialMeta& m) { return {m.subject, m.session, m.run}; }

std::int64_t overlap(const signal::WindowSpan& a, const signal::WindowSpan& b) {
  return std::min(a.end, b.end) - std::max(a.start, b.start);
}

// Groups trials whose windows overlap (transitively) within one run. Every
// randomized split moves whole groups so overlapping crops never straddle it.
std::vector<std::vector<std::size_t>> overlap_clusters(const std::vector<TrialMeta>& trials,
                                                       const std::vector<std::size_t>& members) {
  std::map<RunKey, std::vector<std::size_t>> by_run;
  for (std::size_t i : members) by_run[run_key(trials[i])].push_back(i);
  std::vector<std::vector<std::size_t>> clusters;
  std::size_t open_cluster = 0;
  for (auto& [key, idx] : by_run) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return trials[a].span.start < trials[b].span.start; });
    std::int64_t end = 0;
    bool open = false;
    for (std::size_t i : idx) {
      const auto& s = trials[i].span;
      if (s.start >= s.end) {
        clusters.push_back({i});  // empty window overlaps nothing
      } else if (open && s.start < end) {
        clusters[open_cluster].push_back(i);
        end = std::max(end, s.end);
      } else {
        open_cluster = clusters.size();
        clusters.push_back({i});
        end = s.end;
        open = true;
      }
    }
  }
  return clusters;
}

std::vector<Fold> stratified_folds(const std::vector<TrialMeta>& trials, const std::vector<std::size_t>& members,
                                   std::size_t k, RngStream rng, const std::string& prefix) {
  if (k < 2) throw InvalidArgument("stratified split needs k >= 2");
  auto clusters = overlap_clusters(trials, members);
  std::map<int, std::vector<std::size_t>> by_class;  // class -> cluster indices
  for (std::size_t c = 0; c < clusters.size(); ++c) by_class[trials[clusters[c].front()].label].push_back(c);
  std::vector<std::vector<std::size_t>> val(k);
  std::size_t cursor = 0;
  for (auto& [label, cs] : by_class) {
    RngStream r = rng.fork(static_cast<std::uint64_t>(static_cast<std::int64_t>(label)));
    for (std::size_t i = cs.size(); i > 1; --i) std::swap(cs[i - 1], cs[r.below(i)]);
    for (std::size_t c : cs) {
      auto& dst = val[cursor++ % k];
      dst.insert(dst.end(), clusters[c].begin(), clusters[c].end());
    }
  }
  std::vector<Fold> folds;
  for (std::size_t f = 0; f < k; ++f) {
    if (val[f].empty()) {
      throw InvalidArgument(prefix + "too few trial groups (" + std::to_string(clusters.size()) + ") for " +
                            std::to_string(k) + " folds");
    }
    std::sort(val[f].begin(), val[f].end());
    Fold fold;
    fold.name = prefix + "fold" + std::to_string(f + 1);
    fold.val = val[f];
    std::set<std::size_t> in_val(val[f].begin(), val[f].end());
    for (std::size_t i : members)
      if (!in_val.count(i)) fold.train.push_back(i);
    std::sort(fold.train.begin(), fold.train.end());
    folds.push_back(std::move(fold));
  }
  return folds;
}

Fold hold_out(const std::string& name, const std::vector<std::size_t>& members, auto&& in_val) {
  Fold f;
  f.name = name;
  for (std::size_t i : members) (in_val(i) ? f.val : f.train).push_back(i);
  return f;
}

}  // namespace

SplitPlan make_splits(Framework framework, const std::vector<TrialMeta>& trials, const SplitOptions& opt) {
  if (trials.empty()) throw InvalidArgument("no trials to split");
  {
    std::set<std::string> ids;
    for (const auto& t : trials)
      if (!ids.insert(t.id).second) throw InvalidArgument("duplicate trial id '" + t.id + "'");
  }
  auto session_of = [&](const TrialMeta& m) -> const std::string& { return opt.runs_as_sessions ? m.run : m.session; };

  SplitPlan plan;
  plan.framework = framework;
  plan.trials = trials;
  std::vector<std::size_t> all(trials.size());
  std::iota(all.begin(), all.end(), 0);
  std::map<std::string, std::vector<std::size_t>, NaturalLess> by_subject;
  for (std::size_t i = 0; i < trials.size(); ++i) by_subject[trials[i].subject].push_back(i);
  const RngStream rng = RngStream(opt.seed).fork("split");

  switch (framework) {
    case Framework::sn: {
      if (by_subject.size() < 2) throw InvalidArgument("SN needs at least two subjects");
      std::vector<std::string> subjects;
      for (const auto& [s, _] : by_subject) subjects.push_back(s);
      if (opt.cv == CvScheme::loso) {
        plan.scheme = "loso";
        for (const auto& s : subjects)
          plan.folds.push_back(hold_out(s, all, [&](std::size_t i) { return trials[i].subject == s; }));
      } else {
        plan.scheme = "lmso";
        const std::size_t k = opt.k;
        if (k < 2 || k > subjects.size()) {
          throw InvalidArgument("LMSO needs 2 <= k <= " + std::to_string(subjects.size()) + ", got " + std::to_string(k));
        }
        std::size_t begin = 0;
        for (std::size_t f = 0; f < k; ++f) {
          const std::size_t len = subjects.size() / k + (f < subjects.size() % k ? 1 : 0);
          std::set<std::string> block(subjects.begin() + begin, subjects.begin() + begin + len);
          begin += len;
          plan.folds.push_back(
              hold_out("fold" + std::to_string(f + 1), all, [&](std::size_t i) { return block.count(trials[i].subject) > 0; }));
        }
      }
      break;
    }
    case Framework::sl_ds:
    case Framework::sl_ds_ft: {
      plan.scheme = "loseo";
      for (const auto& [s, members] : by_subject) {
        std::set<std::string, NaturalLess> sessions;
        for (std::size_t i : members) sessions.insert(session_of(trials[i]));
        if (sessions.size() < 2) {
          throw InvalidArgument("subject '" + s + "' has a single session; nothing to leave out");
        }
        for (const auto& e : sessions)
          plan.folds.push_back(
              hold_out(s + "/" + e, members, [&](std::size_t i) { return session_of(trials[i]) == e; }));
      }
      break;
    }
    case Framework::sm_ds: {
      plan.scheme = "loseo";
      std::set<std::string, NaturalLess> sessions;
      for (const auto& t : trials) sessions.insert(session_of(t));
      if (sessions.size() < 2) throw InvalidArgument("SM-DS needs at least two sessions");
      for (const auto& e : sessions)
        plan.folds.push_back(hold_out(e, all, [&](std::size_t i) { return session_of(trials[i]) == e; }));
      break;
    }
    case Framework::sl_rs: {
      plan.scheme = "stratified";
      for (const auto& [s, members] : by_subject) {
        auto folds = stratified_folds(trials, members, opt.k, rng.fork(s), s + "/");
        for (auto& f : folds) plan.folds.push_back(std::move(f));
      }
      break;
    }
    case Framework::sm_rs: {
      plan.scheme = "stratified";
      plan.folds = stratified_folds(trials, all, opt.k, rng.fork("mixed"), "");
      break;
    }
  }
  for (const auto& f : plan.folds) {
    if (f.train.empty() || f.val.empty()) throw InvalidArgument("fold '" + f.name + "' has an empty side");
  }
  return plan;
}

std::vector<LeakageViolation> audit_sets(const std::vector<TrialMeta>& train, const std::vector<TrialMeta>& val) {
  std::map<RunKey, std::vector<const TrialMeta*>> val_by_run;
  std::unordered_map<std::string, const TrialMeta*> val_by_id;
  for (const auto& v : val) {
    val_by_run[run_key(v)].push_back(&v);
    val_by_id.emplace(v.id, &v);
  }
  std::vector<LeakageViolation> out;
  for (const auto& t : train) {
    const TrialMeta* same = nullptr;
    if (auto it = val_by_id.find(t.id); it != val_by_id.end()) {
      same = it->second;
      out.push_back({0, t.id, t.id, true, std::max<std::int64_t>(0, overlap(t.span, same->span))});
    }
    auto it = val_by_run.find(run_key(t));
    if (it == val_by_run.end()) continue;
    for (const TrialMeta* v : it->second) {
      if (v == same) continue;
      const std::int64_t ov = overlap(t.span, v->span);
      if (ov >= 1) out.push_back({0, t.id, v->id, false, ov});
    }
  }
  return out;
}

std::vector<LeakageViolation> leakage_audit(const SplitPlan& plan) {
  std::vector<LeakageViolation> out;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    std::vector<TrialMeta> train, val;
    for (std::size_t i : plan.folds[f].train) train.push_back(plan.trials.at(i));
    for (std::size_t i : plan.folds[f].val) val.push_back(plan.trials.at(i));
    for (auto v : audit_sets(train, val)) {
      v.fold = f;
      out.push_back(std::move(v));
    }
  }
  return out;
}

LeakageError::LeakageError(std::vector<LeakageViolation> v)
    : DataError("train/validation leakage: " + std::to_string(v.size()) + " violation(s), first " +
                (v.empty() ? std::string("-") : v.front().train_id + " vs " + v.front().val_id)),
      violations_(std::move(v)) {}

namespace {

void check_pairs(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw InvalidArgument("predictions and labels differ in length");
  if (preds.empty()) throw InvalidArgument("no predictions");
}

void check_class(int c, std::size_t k) {
  if (c < 0 || static_cast<std::size_t>(c) >= k) {
    throw InvalidArgument("class " + std::to_string(c) + " out of range for " + std::to_string(k) + " classes");
  }
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pairs(preds, labels);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes) {
  check_pairs(preds, labels);
  ConfusionMatrix m(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check_class(labels[i], num_classes);
    check_class(preds[i], num_classes);
    ++m[labels[i]][preds[i]];
  }
  return m;
}

double cohens_kappa(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes,
                    bool* degenerate) {
  const ConfusionMatrix m = confusion_matrix(preds, labels, num_classes);
  const double n = static_cast<double>(preds.size());
  double agree = 0.0, chance = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    agree += static_cast<double>(m[c][c]);
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < num_classes; ++j) {
      row += static_cast<double>(m[c][j]);
      col += static_cast<double>(m[j][c]);
    }
    chance += row * col;
  }
  const double pa = agree / n;
  const double pe = chance / (n * n);
  const bool degen = pe >= 1.0;
  if (degenerate) *degenerate = degen;
  if (degen) return 0.0;
  return (pa - pe) / (1.0 - pe);
}

std::vector<double> sma(std::span<const double> series, std::size_t window) {
  if (window == 0) throw InvalidArgument("SMA window must be positive");
  std::vector<double> out(series.size());
  for (std::size_t e = 0; e < series.size(); ++e) {
    const std::size_t first = e + 1 >= window ? e + 1 - window : 0;
    double s = 0.0;
    for (std::size_t i = first; i <= e; ++i) s += series[i];
    out[e] = s / static_cast<double>(e + 1 - first);
  }
  return out;
}

EpochValue max_sma(const MetricTrace& trace, std::size_t window) {
  if (trace.val_acc.empty()) throw InvalidArgument("empty metric trace");
  const auto s = sma(trace.val_acc, window);
  const auto it = std::max_element(s.begin(), s.end());
  return {static_cast<std::size_t>(it - s.begin()) + 1, *it};
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw InvalidArgument("incomplete_beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
  // Modified Lentz evaluation of the continued fraction.
  auto cf = [](double a, double b, double x) {
    constexpr double kTiny = 1e-300;
    constexpr double kTolerance = 1e-10;
    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
      const double m2 = 2.0 * m;
      double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
      d = 1.0 + num * d;
      if (std::abs(d) < kTiny) d = kTiny;
      c = 1.0 + num / c;
      if (std::abs(c) < kTiny) c = kTiny;
      d = 1.0 / d;
      h *= d * c;
      num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
      d = 1.0 + num * d;
      if (std::abs(d) < kTiny) d = kTiny;
      c = 1.0 + num / c;
      if (std::abs(c) < kTiny) c = kTiny;
      d = 1.0 / d;
      const double delta = d * c;
      h *= delta;
      if (std::abs(delta - 1.0) < kTolerance) return h;
    }
    throw NumericError("incomplete_beta: continued fraction did not converge");
  };
  if (x < (a + 1.0) / (a + b + 2.0)) return front * cf(a, b, x) / a;
  return 1.0 - front * cf(b, a, 1.0 - x) / b;
}

namespace {

// P(T > t).
double student_t_sf(double t, double dof) {
  const double tail = 0.5 * incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? tail : 1.0 - tail;
}

}  // namespace

double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw InvalidArgument("degrees of freedom must be positive");
  return 1.0 - student_t_sf(t, dof);
}

WelchResult welch_t_test_right(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidArgument("Welch's t-test needs at least two values per sample");
  auto moments = [](std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  if (!(va > 0.0) || !(vb > 0.0)) throw InvalidArgument("Welch's t-test: a sample has zero variance");
  const double qa = va / static_cast<double>(a.size());
  const double qb = vb / static_cast<double>(b.size());
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(qa + qb);
  r.dof = (qa + qb) * (qa + qb) /
          (qa * qa / static_cast<double>(a.size() - 1) + qb * qb / static_cast<double>(b.size() - 1));
  r.p = student_t_sf(r.t, r.dof);
  return r;
}

Stat describe(std::span<const double> v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

Summary aggregate_report(const std::vector<FoldResult>& results, const std::vector<FoldResult>* baseline) {
  if (results.empty()) throw InvalidArgument("no fold results to aggregate");
  auto column = [](const std::vector<FoldResult>& rs, double FoldResult::*field) {
    std::vector<double> v;
    for (const auto& r : rs) v.push_back(r.*field);
    return v;
  };
  Summary s;
  s.folds = results;
  s.ma_acc = describe(column(results, &FoldResult::ma_acc));
  s.acc = describe(column(results, &FoldResult::acc));
  s.kappa = describe(column(results, &FoldResult::kappa));
  if (baseline) {
    auto compare = [&](double FoldResult::*field) -> std::optional<WelchResult> {
      try {
        return welch_t_test_right(column(results, field), column(*baseline, field));
      } catch (const InvalidArgument&) {
        return std::nullopt;  // too few values or zero variance
      }
    };
    s.ma_acc_vs_baseline = compare(&FoldResult::ma_acc);
    s.acc_vs_baseline = compare(&FoldResult::acc);
    s.kappa_vs_baseline = compare(&FoldResult::kappa);
  }
  return s;
}

}  // namespace agtcnet::eval
