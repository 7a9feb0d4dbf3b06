// Acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "agtcnet/edf.hpp"
#include "agtcnet/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace agtcnet;
using nn::Mode;
using nn::Tensor;
using nn::Var;
using testing::grad_check;
using testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

Var probe(const Var& y) {
  RngStream rng(99);
  return nn::weighted_sum(y, random_tensor(y.shape(), rng));
}

void perturb_bn(model::Agtcnet& m, std::uint64_t seed) {
  RngStream rng(seed);
  for (auto& nt : m.state_tensors()) {
    if (nt.trainable) continue;
    const bool is_var = nt.name.find("moving_var") != std::string::npos;
    for (auto& v : nt.tensor->values()) v = is_var ? rng.uniform(0.5, 1.5) : rng.uniform(-0.2, 0.2);
  }
}

model::Agtcnet reference_model(std::uint64_t seed) {
  return model::Agtcnet(model::bciciv2a_config(), graph::build_adjacency(graph::bciciv2a_montage()), seed);
}

Outcome param_count() {
  auto m = reference_model(1);
  const auto rep = m.param_count();
  const double rel = (static_cast<double>(rep.total()) - 75069.0) / 75069.0;
  std::ostringstream s;
  s << rep.total() << " vs 75069 (" << num(100.0 * rel) << "%); ";
  for (const char* stage : {"ctc.", "gcat.", "gcap.", "gtc.", "tce.", "classifier."})
    s << stage << rep.count_prefix(stage) << " ";
  s << "non-trainable " << rep.non_trainable;
  return {std::abs(rel) <= 0.02, s.str()};
}

Outcome shape_chain() {
  auto m = reference_model(2);
  RngStream rng(3);
  const auto r = m.forward(Var(random_tensor({1, 22, 375, 1}, rng)), {});
  const std::vector<std::pair<nn::Shape, nn::Shape>> checks = {
      {r.ctc_conv.shape(), {1, 22, 344, 8}}, {r.ctc.shape(), {1, 22, 171, 8}},   {r.gcat.shape(), {1, 22, 171, 24}},
      {r.gcap.shape(), {1, 1, 171, 48}},     {r.gtc_conv.shape(), {1, 1, 42, 96}}, {r.gtc.shape(), {1, 1, 10, 96}},
      {r.logits.shape(), {1, 4}}};
  std::string chain;
  bool ok = true;
  for (const auto& [got, want] : checks) {
    ok = ok && got == want;
    chain += (chain.empty() ? "" : " -> ") + nn::shape_str(got);
  }
  return {ok, chain};
}

Outcome gradients() {
  RngStream rng(4);
  std::vector<std::pair<std::string, std::function<testing::GradCheck()>>> ops;
  {
    Var x(random_tensor({2, 2, 6, 2}, rng), true), k(random_tensor({1, 3, 2, 3}, rng), true);
    ops.push_back({"conv2d", [=] { return grad_check({x, k}, [=] { return probe(nn::conv2d(x, k, {1, 1, nn::Padding::same})); }); }});
  }
  {
    Var x(random_tensor({2, 3, 4, 2}, rng), true), k(random_tensor({3, 1, 2, 2}, rng), true);
    ops.push_back({"depthwise", [=] { return grad_check({x, k}, [=] { return probe(nn::depthwise_conv2d(x, k)); }); }});
  }
  {
    Var x(random_tensor({1, 2, 8, 2}, rng), true), d(random_tensor({1, 3, 2, 2}, rng), true),
        p(random_tensor({1, 1, 4, 3}, rng), true);
    ops.push_back({"separable", [=] {
                     return grad_check({x, d, p}, [=] { return probe(nn::separable_conv2d(x, d, p, {1, 1, nn::Padding::same})); });
                   }});
  }
  {
    Var x(random_tensor({3, 2, 4, 2}, rng), true), g(random_tensor({2}, rng, 0.5, 1.5), true), b(random_tensor({2}, rng), true);
    ops.push_back({"batch_norm", [=] {
                     nn::BatchNormState st(2);
                     return grad_check({x, g, b}, [&] { return probe(nn::batch_norm(x, g, b, st, Mode::train)); });
                   }});
  }
  {
    Var x(random_tensor({3, 5}, rng), true), a(Tensor::scalar(0.25), true);
    ops.push_back({"selu", [=] { return grad_check({x}, [=] { return probe(nn::selu(x)); }); }});
    ops.push_back({"prelu", [=] { return grad_check({x, a}, [=] { return probe(nn::prelu(x, a)); }); }});
  }
  {
    Var x(random_tensor({1, 2, 9, 2}, rng), true);
    ops.push_back({"avg_pool", [=] { return grad_check({x}, [=] { return probe(nn::avg_pool2d(x, {1, 4, 1, 2})); }); }});
    ops.push_back({"dropout", [=] {
                     return grad_check({x}, [=] {
                       RngStream r(5);
                       return probe(nn::dropout(x, 0.4, Mode::train, r));
                     });
                   }});
  }
  {
    Var x(random_tensor({3, 4}, rng), true), w(random_tensor({4, 2}, rng), true), b(random_tensor({2}, rng), true);
    ops.push_back({"linear", [=] { return grad_check({x, w, b}, [=] { return probe(nn::linear(x, w, b)); }); }});
  }
  {
    Var x(random_tensor({2, 3, 3}, rng), true);
    nn::SoftmaxMask m{{1, 1, 0, 0, 1, 1, 1, 0, 1}, 3, 1, false};
    ops.push_back({"softmax", [=] { return grad_check({x}, [=] { return probe(nn::softmax(x)); }); }});
    ops.push_back({"masked_softmax", [=] { return grad_check({x}, [=] { return probe(nn::masked_softmax(x, m)); }); }});
  }
  {
    Var x(random_tensor({2, 5, 4}, rng), true), s(Tensor::scalar(0.3), true);
    const Tensor pe = nn::positional_encoding(5, 4);
    ops.push_back({"positional", [=] { return grad_check({x, s}, [=] { return probe(nn::add_positional(x, s, pe)); }); }});
  }
  {
    Var s(random_tensor({2, 3, 4, 1}, rng), true), d(random_tensor({2, 3, 4, 1}, rng), true);
    Var a(random_tensor({2, 3, 4, 3}, rng), true), v(random_tensor({2, 3, 4, 2}, rng), true);
    ops.push_back({"pairwise_sum", [=] { return grad_check({s, d}, [=] { return probe(nn::pairwise_sum(s, d)); }); }});
    ops.push_back({"graph_aggregate", [=] { return grad_check({a, v}, [=] { return probe(nn::graph_aggregate(a, v)); }); }});
  }
  {
    Var q(random_tensor({2, 3, 4}, rng), true), k(random_tensor({2, 3, 4}, rng), true), v(random_tensor({2, 3, 4}, rng), true);
    ops.push_back({"attention", [=] {
                     return grad_check({q, k, v}, [=] {
                       return probe(nn::attention_context(nn::softmax(nn::attention_scores(q, k, 2)), v, 2));
                     });
                   }});
  }
  {
    Var a(random_tensor({2, 3}, rng), true), b(random_tensor({2, 2}, rng), true), bias(random_tensor({5}, rng), true);
    ops.push_back({"reshape/concat/select/bias", [=] {
                     return grad_check({a, b, bias}, [=] {
                       return probe(nn::reshape(
                           nn::select_last(nn::reshape(nn::add_bias(nn::concat_last(a, b), bias), {2, 5, 1}), 0), {10}));
                     });
                   }});
  }
  {
    Var logits(random_tensor({4, 3}, rng), true), p(random_tensor({4}, rng, 0.1, 0.9), true);
    ops.push_back({"cross_entropy", [=] {
                     const std::vector<int> l{0, 2, 1, 2};
                     return grad_check({logits}, [=] { return nn::softmax_cross_entropy(logits, l); });
                   }});
    ops.push_back({"binary_cross_entropy", [=] {
                     const std::vector<int> l{1, 0, 0, 1};
                     return grad_check({p}, [=] { return nn::binary_cross_entropy(p, l); });
                   }});
  }
  double worst_op = 0.0;
  std::string worst_name;
  for (auto& [name, fn] : ops) {
    const double e = fn().max_rel_error;
    if (e >= worst_op) {
      worst_op = e;
      worst_name = name;
    }
  }
  auto cfg = testing::micro_config(4);
  cfg.dropout = model::DropoutRates::none();
  model::Agtcnet m(cfg, graph::build_adjacency(testing::micro_montage()), 3);
  Var x(random_tensor({3, 4, 64, 1}, rng), true);
  const std::vector<int> labels{0, 3, 1};
  std::vector<Var> inputs{x};
  for (auto& p : m.params()) inputs.push_back(p.var);
  const auto e2e = grad_check(inputs, [&] { return train::cce_loss(m.forward(x, {Mode::train, nullptr}).logits, labels); },
                              1e-5, 12);
  return {worst_op < 1e-5 && e2e.max_rel_error < 1e-4,
          std::to_string(ops.size()) + " ops, worst " + num(worst_op) + " (" + worst_name + "); end-to-end " +
              num(e2e.max_rel_error) + " over " + std::to_string(e2e.checked) + " entries"};
}

Outcome gcat_invariants() {
  auto m = reference_model(9);
  perturb_bn(m, 10);
  const auto& g = m.adjacency();
  RngStream rng(11);
  Var x(random_tensor({1, 22, 171, 8}, rng));
  model::EdgeAttention att;
  const Tensor base = m.gcat_forward(x, {}, &att).value();

  double norm_err = 0.0;
  bool masked = true;
  for (const auto& a : att.heads)
    for (std::size_t i = 0; i < 22; ++i)
      for (std::size_t t = 0; t < 171; ++t) {
        double s = 0.0;
        for (std::size_t j = 0; j < 22; ++j) {
          const double v = a.at({0, i, t, j});
          if (i != j && !g.connected(i, j) && v != 0.0) masked = false;
          s += v;
        }
        norm_err = std::max(norm_err, std::abs(s - 1.0));
      }

  bool local = true;
  for (std::size_t far = 0; far < 22; ++far) {
    Tensor bumped = x.value();
    for (std::size_t t = 0; t < 171; ++t)
      for (std::size_t f = 0; f < 8; ++f) bumped.at({0, far, t, f}) += 2.0;
    const Tensor out = m.gcat_forward(Var(bumped), {}).value();
    for (std::size_t i = 0; i < 22; ++i) {
      if (i == far || g.connected(i, far)) continue;
      for (std::size_t t = 0; t < 171; ++t)
        for (std::size_t f = 0; f < 24; ++f) local = local && out.at({0, i, t, f}) == base.at({0, i, t, f});
    }
  }

  const auto labels = graph::bciciv2a_montage();
  std::vector<std::size_t> perm(22);
  for (std::size_t i = 0; i < 22; ++i) perm[i] = i;
  for (std::size_t i = 22; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<std::string> permuted;
  for (auto p : perm) permuted.push_back(labels[p]);
  model::Agtcnet b(model::bciciv2a_config(), graph::build_adjacency(permuted), 12);
  b.restore(m.snapshot());
  Tensor xp(x.shape());
  for (std::size_t i = 0; i < 22; ++i)
    for (std::size_t t = 0; t < 171; ++t)
      for (std::size_t f = 0; f < 8; ++f) xp.at({0, i, t, f}) = x.value().at({0, perm[i], t, f});
  const Tensor yb = b.gcat_forward(Var(xp), {}).value();
  double equiv = 0.0;
  bool residual = true;
  for (std::size_t i = 0; i < 22; ++i)
    for (std::size_t t = 0; t < 171; ++t) {
      for (std::size_t f = 0; f < 24; ++f) equiv = std::max(equiv, std::abs(yb.at({0, i, t, f}) - base.at({0, perm[i], t, f})));
      for (std::size_t f = 0; f < 8; ++f) residual = residual && base.at({0, i, t, f}) == x.value().at({0, i, t, f});
    }
  return {norm_err < 1e-6 && masked && local && equiv < 1e-12 && residual,
          "normalization " + num(norm_err) + ", mask " + (masked ? "ok" : "broken") + ", locality " +
              (local ? "ok" : "broken") + ", permutation " + num(equiv) + ", residual " + (residual ? "ok" : "broken")};
}

Outcome preprocessing() {
  RngStream rng(13);
  const double scale = 200.0;
  std::vector<std::vector<double>> rows(22, std::vector<double>(1000));
  for (auto& r : rows)
    for (auto& v : r) v = scale * rng.uniform(-1.0, 1.0);
  const auto car = signal::apply_car(rows);
  double col = 0.0, idem = 0.0;
  const auto twice = signal::apply_car(car);
  for (std::size_t t = 0; t < 1000; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < 22; ++c) {
      s += car[c][t];
      idem = std::max(idem, std::abs(twice[c][t] - car[c][t]));
    }
    col = std::max(col, std::abs(s));
  }
  const auto f = signal::design_butterworth_lowpass(12, 62.5, 250.0);
  const double at_cut = 20.0 * std::log10(std::abs(signal::frequency_response(f, 62.5)));
  const double stop = 20.0 * std::log10(std::abs(signal::frequency_response(f, 93.75)));

  double worst_rms = 0.0;
  for (double freq : {5.0, 7.3, 21.0}) {
    std::vector<double> x(1000);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * M_PI * freq * static_cast<double>(i) / 250.0);
    const auto y = signal::fft_resample(x, 250.0, 125.0);
    double acc = 0.0;
    for (std::size_t i = 125; i < 375; ++i) {
      const double e = y[i] - std::sin(2.0 * M_PI * freq * static_cast<double>(i) / 125.0);
      acc += e * e;
    }
    worst_rms = std::max(worst_rms, std::sqrt(acc / 250.0));
  }
  const bool ok = col < 1e-9 * scale && idem < 1e-9 * scale && std::abs(at_cut + 3.0103) <= 0.1 && stop <= -40.0 &&
                  worst_rms < 1e-3;
  return {ok, "CAR sum " + num(col) + ", idempotence " + num(idem) + ", |H(62.5)| " + num(at_cut) + " dB, |H(93.75)| " +
                  num(stop) + " dB, resample RMS " + num(worst_rms)};
}

Outcome metric_oracles() {
  RngStream rng(14);
  double worst = 0.0, worst_p = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> p(n), l(n);
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
      p[i] = rng.uniform(0.0, 1.0) < 0.5 ? l[i] : static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    }
    double correct = 0.0;
    for (std::size_t i = 0; i < n; ++i) correct += p[i] == l[i];
    worst = std::max(worst, std::abs(eval::accuracy(p, l) - correct / static_cast<double>(n)));
    worst = std::max(worst, std::abs(eval::cohens_kappa(p, l, static_cast<std::size_t>(k)) - testing::brute_kappa(p, l, k)));

    std::vector<double> series(1 + rng.below(60));
    for (auto& v : series) v = rng.uniform(0.0, 1.0);
    const auto s = eval::sma(series, 20);
    for (std::size_t e = 0; e < series.size(); ++e) worst = std::max(worst, std::abs(s[e] - testing::brute_sma_at(series, e, 20)));

    std::vector<double> a(2 + rng.below(10)), b(2 + rng.below(10));
    const double shift = rng.uniform(-1.0, 1.0);
    for (auto& v : a) v = rng.uniform(0.0, 1.0) + shift;
    for (auto& v : b) v = rng.uniform(0.0, 2.0);
    const auto r = eval::welch_t_test_right(a, b);
    worst_p = std::max(worst_p, std::abs(r.p - testing::t_upper_tail_quadrature(r.t, r.dof)));
  }
  return {worst < 1e-9 && worst_p < 1e-6,
          "1000 instances; acc/kappa/SMA max error " + num(worst) + ", Welch p max error " + num(worst_p)};
}

Outcome splits() {
  std::vector<eval::TrialMeta> metas;
  for (std::size_t s = 1; s <= 9; ++s)
    for (std::size_t se = 0; se < 2; ++se)
      for (std::size_t k = 0; k < 8; ++k) {
        const std::string subj = "S" + std::to_string(s), sess = se ? "E" : "T";
        metas.push_back({subj + "/" + sess + "/" + std::to_string(k), subj, sess, "1", static_cast<int>(k % 4),
                         {static_cast<std::int64_t>(k * 1000), static_cast<std::int64_t>(k * 1000 + 375)}});
      }
  bool clean = true;
  std::string counts;
  for (auto fw : {eval::Framework::sn, eval::Framework::sl_ds, eval::Framework::sl_ds_ft, eval::Framework::sm_ds,
                  eval::Framework::sl_rs, eval::Framework::sm_rs}) {
    eval::SplitOptions opt;
    opt.k = 4;
    opt.seed = 15;
    const auto plan = eval::make_splits(fw, metas, opt);
    clean = clean && eval::leakage_audit(plan).empty();
    counts += eval::framework_name(fw) + ":" + std::to_string(plan.folds.size()) + " ";
  }
  const auto loso = eval::make_splits(eval::Framework::sn, metas);
  bool disjoint = loso.folds.size() == 9;
  for (const auto& f : loso.folds) {
    std::set<std::string> tr, va;
    for (auto i : f.train) tr.insert(loso.trials[i].subject);
    for (auto i : f.val) va.insert(loso.trials[i].subject);
    disjoint = disjoint && va.size() == 1 && tr.size() == 8 && !tr.count(*va.begin());
  }
  eval::SplitPlan swc;
  swc.trials = {{"w0", "S1", "T", "1", 0, {0, 500}}, {"w1", "S1", "T", "1", 1, {250, 750}}};
  swc.folds = {{"random", {0}, {1}}};
  const auto v = eval::leakage_audit(swc);
  const bool caught = !v.empty() && v[0].overlap == 250;
  return {clean && disjoint && caught, counts + "folds, all audits clean; SN-LOSO 9 subject-disjoint folds: " +
                                           (disjoint ? "yes" : "no") + "; SWC violations " + std::to_string(v.size()) +
                                           (v.empty() ? "" : " (overlap " + std::to_string(v[0].overlap) + ")")};
}

Outcome training() {
  auto cfg = testing::micro_config(2);
  cfg.dropout = model::DropoutRates::none();
  model::Agtcnet m(cfg, graph::build_adjacency(testing::micro_montage()), 41);
  const auto tr = testing::separable_trials(32, 4, 64, 2, 42, "S1");
  const auto va = testing::separable_trials(16, 4, 64, 2, 43, "S2");
  train::TrainOptions opt;
  opt.max_epochs = 200;
  opt.batch_size = 8;
  opt.seed = 44;
  const auto rep = train::train(m, tr, va, opt);
  std::size_t reached = 0;
  for (std::size_t e = 0; e < rep.trace.epochs() && !reached; ++e)
    if (rep.trace.train_acc[e] >= 0.95) reached = e + 1;

  train::PlateauScheduler s;
  double lr = s.step(1.0, 1e-3);
  bool held = true;
  for (int i = 0; i < 10; ++i) held = held && (lr = s.step(1.0, lr)) == 1e-3;
  lr = s.step(1.0, lr);
  const bool decayed = held && std::abs(lr - 9e-4) < 1e-15;
  train::PlateauScheduler fl;
  double low = fl.step(1.0, 1.05e-4);
  for (int i = 0; i < 100; ++i) low = fl.step(1.0, low);

  auto trace = [](std::size_t len) {
    eval::MetricTrace t;
    t.val_acc.assign(len, 0.5);
    t.val_acc[9] = 0.9;
    return t;
  };
  const bool stop = !train::early_stop_check(trace(310), 300) && train::early_stop_check(trace(311), 300);
  return {reached > 0 && decayed && low == 1e-4 && stop,
          "train acc >= 95% at epoch " + (reached ? std::to_string(reached) : std::string("never")) +
              "; lr after 11 stagnant epochs " + num(lr) + ", floor " + num(low) + "; early stop at 311: " +
              (stop ? "yes" : "no")};
}

Outcome io_fidelity() {
  const auto dir = testing::temp_dir("acceptance_io");
  auto cfg = testing::micro_config(4);
  model::Agtcnet m(cfg, graph::build_adjacency(testing::micro_montage()), 51);
  perturb_bn(m, 52);
  RngStream rng(53);
  Var x(random_tensor({3, 4, 64, 1}, rng));
  const Tensor before = m.forward(x, {}).logits.value();
  model::save_weights(m, dir / "m.agtc");
  auto loaded = model::load_weights(dir / "m.agtc");
  const bool weights = testing::bit_equal(loaded.forward(x, {}).logits.value(), before);

  const auto raw = testing::write_edf_dataset(dir / "edf", 1, 1, 3);
  const auto bytes = [&] {
    std::ifstream in(dir / "edf" / "S1R1.edf", std::ios::binary);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
  }();
  const auto edf = io::parse_edf(bytes);
  const bool edf_ok = io::serialize_edf(edf) == bytes && io::parse_edf(io::serialize_edf(edf)).digital == edf.digital;
  const bool ann_ok = edf.annotations.size() == 3 && edf.annotations[1].onset == 3.0 &&
                      edf.annotations[1].duration == 1.0 && !edf.annotations[1].text.empty();
  const auto tal = io::parse_tals(std::string("+1.5\x14T1\x14\0", 9));
  const bool tal_ok = tal.size() == 1 && tal[0].onset == 1.5 && tal[0].text == "T1";
  (void)raw;
  return {weights && edf_ok && ann_ok && tal_ok, std::string("weights forward bit-exact: ") + (weights ? "yes" : "no") +
                                                     "; EDF digital round trip: " + (edf_ok ? "yes" : "no") +
                                                     "; TAL annotations: " + (ann_ok && tal_ok ? "yes" : "no")};
}

void run_pipeline(const fs::path& root, const fs::path& raw) {
  const fs::path keep = fs::current_path();
  fs::create_directories(root);
  fs::current_path(root);
  io::write_text("run.ini", testing::micro_run_config("pre/manifest.json", "out", "SN", 5, 61));
  const auto rel_raw = fs::relative(raw, root).string();
  const std::vector<std::vector<std::string>> steps = {
      {"preprocess", "--manifest", rel_raw, "--out", "pre", "--t-start", "0", "--t-end", "0.512", "--target-fs", "125"},
      {"split", "--manifest", "pre/manifest.json", "--framework", "SN", "--out", "plan.json"},
      {"train", "--config", "run.ini"},
  };
  for (const auto& s : steps) {
    const auto r = testing::run_cli(s);
    if (r.code != cli::kOk) {
      fs::current_path(keep);
      throw std::runtime_error(s[0] + " failed (" + std::to_string(r.code) + "): " + r.err);
    }
  }
  const auto r = testing::run_cli({"eval", "--checkpoint", "out/S1/best.agtc", "--manifest", "pre/manifest.json",
                                   "--plan", "out/split_plan.json", "--fold", "1", "--out", "eval"});
  fs::current_path(keep);
  if (r.code != cli::kOk) throw std::runtime_error("eval failed: " + r.err);
}

Outcome determinism() {
  const auto dir = testing::temp_dir("acceptance_pipeline");
  const auto raw = testing::write_edf_dataset(dir / "raw", 3, 1, 6);
  run_pipeline(dir / "run1", raw);
  run_pipeline(dir / "run2", raw);
  std::size_t csvs = 0, files = 0;
  std::string mismatch;
  for (const auto& e : fs::recursive_directory_iterator(dir / "run1")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "run1");
    ++files;
    if (e.path().extension() == ".csv") ++csvs;
    const auto other = dir / "run2" / rel;
    if (!fs::exists(other) || io::read_text(e.path()) != io::read_text(other)) mismatch = rel.string();
  }
  return {mismatch.empty() && csvs >= 8, std::to_string(csvs) + " CSV files (" + std::to_string(files) +
                                             " files total) byte-identical across two runs" +
                                             (mismatch.empty() ? "" : "; first mismatch " + mismatch)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"parameter count within 2% of 75,069", param_count},
      {"forward shape chain", shape_chain},
      {"finite-difference gradient suite", gradients},
      {"GCAT invariants", gcat_invariants},
      {"preprocessing oracles", preprocessing},
      {"metric oracles", metric_oracles},
      {"split and leakage soundness", splits},
      {"training sanity and schedule rules", training},
      {"I/O fidelity", io_fidelity},
      {"pipeline determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("CRITERION %zu %s: %s [%.2fs] %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
