#include "agtcnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "agtcnet/binary_io.hpp"
#include "agtcnet/data_io.hpp"
#include "agtcnet/edf.hpp"
#include "agtcnet/train.hpp"

namespace agtcnet::cli {

namespace {

namespace fs = std::filesystem;

std::string join_args(int argc, const char* const* argv) {
  std::string s;
  for (int i = 1; i < argc; ++i) s += std::string(i > 1 ? " " : "") + argv[i];
  return s;
}

std::string safe_name(std::string s) {
  for (char& c : s)
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  return s;
}

std::vector<std::string> read_montage(const fs::path& path) {
  std::string text = io::read_text(path);
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in(text);
  std::vector<std::string> labels;
  for (std::string l; in >> l;) labels.push_back(l);
  if (labels.empty()) throw DataError("montage file lists no electrodes: " + path.string());
  return labels;
}

// Rows of `rec` reordered to the manifest's channel list.
signal::RawRecording select_channels(signal::RawRecording rec, const std::vector<std::string>& wanted) {
  if (wanted.empty()) return rec;
  signal::RawRecording out = rec;
  out.channel_labels.clear();
  out.data.clear();
  for (const auto& w : wanted) {
    const auto target = graph::parse_label(w);
    bool found = false;
    for (std::size_t i = 0; i < rec.channel_labels.size() && !found; ++i) {
      try {
        if (graph::parse_label(rec.channel_labels[i]) == target) {
          out.channel_labels.push_back(rec.channel_labels[i]);
          out.data.push_back(rec.data[i]);
          found = true;
        }
      } catch (const ParseError&) {
        // non-electrode channel
      }
    }
    if (!found) throw DataError("recording lacks channel '" + w + "'");
  }
  return out;
}

int cmd_preprocess(const fs::path& manifest_path, const fs::path& out_dir, double t_start, double t_end,
                   std::optional<double> target_fs, std::ostream& out, std::ostream& err) {
  io::DatasetManifest m = io::load_manifest(manifest_path);
  io::DatasetManifest result = m;
  result.recordings.clear();
  std::size_t written = 0;
  for (const auto& r : m.recordings) {
    auto rec = select_channels(io::read_edf(r.file), m.channels);
    rec = signal::preprocess(std::move(rec), target_fs);
    auto epochs = signal::extract_epochs(rec, t_start, t_end, r.events, {r.subject, r.session, r.run});
    for (const auto& s : epochs.skipped)
      err << "warning: " << r.file.string() << " event " << s.event_index << ": " << s.message << "\n";
    for (std::size_t k = 0; k < epochs.trials.size(); ++k) {
      const auto& t = epochs.trials[k];
      const std::string id = r.subject + "/" + r.session + "/" + r.run + "/" + std::to_string(k);
      const fs::path file = out_dir / "trials" / (safe_name(id) + ".eegt");
      io::write_trial(file, t);
      result.trials.push_back({id, file, r.subject, r.session, r.run, t.window_span});
      ++written;
    }
  }
  io::save_manifest(out_dir / "manifest.json", result);
  out << "wrote " << written << " trial(s) and " << (out_dir / "manifest.json").string() << "\n";
  return kOk;
}

int cmd_graph(const std::optional<fs::path>& montage, const std::string& preset, const fs::path& out_dir,
              std::ostream& out) {
  std::vector<std::string> labels;
  if (montage) {
    labels = read_montage(*montage);
  } else if (preset == "bciciv2a") {
    labels = graph::bciciv2a_montage();
  } else if (preset == "eegmmidb") {
    labels = graph::eegmmidb_montage();
  } else {
    throw io::ConfigError("graph needs --montage or --preset bciciv2a|eegmmidb");
  }
  const auto g = graph::build_adjacency(labels);
  io::write_text(out_dir / "adjacency.json", io::adjacency_json(g));
  io::write_text(out_dir / "adjacency.csv", io::adjacency_csv(g));
  out << g.size() << " channels, " << g.edge_count() << " edges, " << graph::degree_histogram(g).components
      << " component(s)\n";
  return kOk;
}

void report_violations(const std::vector<eval::LeakageViolation>& v, const eval::SplitPlan& plan, std::ostream& os) {
  for (const auto& x : v) {
    os << "fold " << (x.fold < plan.folds.size() ? plan.folds[x.fold].name : std::to_string(x.fold)) << ": train "
       << x.train_id << " / val " << x.val_id << (x.same_id ? " same trial" : "") << ", overlap " << x.overlap
       << " samples\n";
  }
}

int cmd_split(const fs::path& manifest_path, const std::string& framework, const std::string& cv, std::size_t k,
              std::uint64_t seed, const fs::path& out_path, const std::string& args, std::ostream& out,
              std::ostream& err) {
  const auto m = io::load_manifest(manifest_path);
  const auto trials = io::load_trials(m);
  eval::SplitOptions opt;
  if (cv != "loso" && cv != "lmso") throw io::ConfigError("--cv must be loso or lmso");
  opt.cv = cv == "loso" ? eval::CvScheme::loso : eval::CvScheme::lmso;
  opt.k = k;
  opt.seed = seed;
  opt.runs_as_sessions = m.runs_as_sessions;
  eval::Framework fw;
  try {
    fw = eval::parse_framework(framework);
  } catch (const InvalidArgument& e) {
    throw io::ConfigError(e.what());
  }
  const auto plan = eval::make_splits(fw, trials.metas(), opt);
  const auto violations = eval::leakage_audit(plan);
  if (!violations.empty()) {
    report_violations(violations, plan, err);
    throw eval::LeakageError(violations);
  }
  io::write_text(out_path, io::split_plan_json(plan, {io::fnv1a_hex(args), "-"}));
  out << plan.folds.size() << " fold(s), audit clean, wrote " << out_path.string() << "\n";
  return kOk;
}

int cmd_audit(const fs::path& plan_path, std::ostream& out) {
  const auto plan = io::parse_split_plan(io::read_text(plan_path));
  const auto v = eval::leakage_audit(plan);
  if (v.empty()) {
    out << "audit clean: " << plan.folds.size() << " fold(s), no shared or overlapping trials\n";
    return kOk;
  }
  out << v.size() << " leakage violation(s)\n";
  report_violations(v, plan, out);
  return kDataError;
}

int cmd_train(const fs::path& config_path, const std::optional<fs::path>& base_checkpoint, std::ostream& out) {
  const io::RunConfig cfg = io::load_run_config(config_path);
  const io::DatasetManifest m = io::load_manifest(cfg.manifest);
  const eval::TrialSet data = io::load_trials(m);
  if (data.size() == 0) throw DataError("manifest lists no trials");

  eval::Framework fw = cfg.framework;
  if (base_checkpoint) fw = eval::Framework::sl_ds_ft;
  eval::SplitOptions opt{cfg.cv, cfg.k, cfg.train.seed, m.runs_as_sessions};
  const eval::SplitPlan plan = eval::make_splits(fw, data.metas(), opt);
  if (auto v = eval::leakage_audit(plan); !v.empty()) throw eval::LeakageError(std::move(v));

  std::vector<std::size_t> selected = cfg.folds;
  if (selected.empty())
    for (std::size_t f = 1; f <= plan.folds.size(); ++f) selected.push_back(f);

  const fs::path out_dir = cfg.output_dir;
  io::write_text(out_dir / "run_config.ini", cfg.text);
  io::write_text(out_dir / "split_plan.json", io::split_plan_json(plan, {cfg.hash(), "-"}));

  const std::size_t C = data.trials.front().channels(), T = data.trials.front().samples();
  const model::ModelConfig mc = io::model_config_for(cfg, C, T, m.classes.size());
  const auto adjacency = graph::build_adjacency(m.channels);

  std::vector<eval::FoldResult> results;
  std::vector<std::size_t> best_epochs, best_sma_epochs;
  for (std::size_t f : selected) {
    if (f > plan.folds.size()) {
      throw io::ConfigError("fold " + std::to_string(f) + " requested, plan has " + std::to_string(plan.folds.size()));
    }
    const eval::Fold& fold = plan.folds[f - 1];
    const auto train_set = data.subset(fold.train);
    const auto val_set = data.subset(fold.val);
    train::TrainOptions topt = cfg.train;
    topt.seed = RngStream(cfg.train.seed).fork(fold.name).next_u64();
    topt.tag = eval::framework_name(fw);

    const fs::path fold_dir = out_dir / safe_name(fold.name);
    model::Agtcnet model = base_checkpoint ? model::load_weights(*base_checkpoint)
                                           : model::Agtcnet(mc, adjacency, topt.seed);
    if (model.config().num_channels != C || model.config().num_samples != T ||
        model.config().num_classes != m.classes.size()) {
      throw DataError("checkpoint expects " + std::to_string(model.config().num_channels) + "x" +
                      std::to_string(model.config().num_samples) + " trials with " +
                      std::to_string(model.config().num_classes) + " classes");
    }
    train::TrainReport report = base_checkpoint
                                    ? train::fine_tune(model, *base_checkpoint, train_set, val_set, topt)
                                    : train::train(model, train_set, val_set, topt);
    if (!report.best_state.empty()) model.restore(report.best_state);
    const fs::path ckpt = fold_dir / "best.agtc";
    model::save_weights(model, ckpt);
    const io::Provenance prov{cfg.hash(), io::weights_version(ckpt)};

    const auto val = train::evaluate(model, val_set, topt.loss, topt.batch_size);
    eval::FoldResult r;
    r.fold = fold.name;
    r.trace = report.trace;
    r.acc = val.acc;
    r.kappa = eval::cohens_kappa(val.preds, val.labels, mc.num_classes);
    r.ma_acc = report.trace.epochs() ? report.best_sma.value : val.acc;
    r.confusion = eval::confusion_matrix(val.preds, val.labels, mc.num_classes);
    io::write_text(fold_dir / "trace.csv", io::trace_csv(report.trace, prov));
    io::write_text(fold_dir / "confusion.csv", io::confusion_csv(r.confusion, m.classes, prov));
    io::write_text(fold_dir / "metrics.json", io::metrics_json(r.acc, r.kappa, val.loss, val_set.size(), prov, cfg.text));
    out << report.tag << " " << fold.name << ": epochs " << report.trace.epochs() << ", acc " << r.acc << ", ma_acc "
        << r.ma_acc << ", kappa " << r.kappa << "\n";
    results.push_back(std::move(r));
    best_epochs.push_back(report.best_epoch);
    best_sma_epochs.push_back(report.best_sma.epoch);
  }
  const auto summary = eval::aggregate_report(results);
  io::write_text(out_dir / "summary.csv", io::summary_csv(summary, best_epochs, best_sma_epochs, {cfg.hash(), "-"}));
  out << "MA Acc (%)  Acc (%)  kappa\n"
      << summary.ma_acc.mean * 100 << " +- " << summary.ma_acc.std * 100 << "  " << summary.acc.mean * 100 << " +- "
      << summary.acc.std * 100 << "  " << summary.kappa.mean << " +- " << summary.kappa.std << "\n";
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& manifest_path, const std::optional<fs::path>& plan_path,
             std::size_t fold, const fs::path& out_dir, const std::string& args, std::ostream& out) {
  model::Agtcnet model = model::load_weights(checkpoint);
  const auto m = io::load_manifest(manifest_path);
  eval::TrialSet data = io::load_trials(m);
  if (plan_path) {
    const auto plan = io::parse_split_plan(io::read_text(*plan_path));
    if (fold == 0 || fold > plan.folds.size()) throw io::ConfigError("--fold must be in 1.." + std::to_string(plan.folds.size()));
    std::vector<std::size_t> keep;
    for (std::size_t i : plan.folds[fold - 1].val) {
      auto it = std::find(data.ids.begin(), data.ids.end(), plan.trials[i].id);
      if (it == data.ids.end()) throw DataError("plan trial '" + plan.trials[i].id + "' not in manifest");
      keep.push_back(static_cast<std::size_t>(it - data.ids.begin()));
    }
    data = data.subset(keep);
  }
  if (data.size() == 0) throw DataError("nothing to evaluate");
  const auto loss = model.config().num_classes == 2 ? train::LossKind::binary : train::LossKind::categorical;
  const auto r = train::evaluate(model, data, loss);
  const std::size_t K = model.config().num_classes;
  const double kappa = eval::cohens_kappa(r.preds, r.labels, K);
  const io::Provenance prov{io::fnv1a_hex(args), io::weights_version(checkpoint)};
  io::write_text(out_dir / "metrics.json", io::metrics_json(r.acc, kappa, r.loss, data.size(), prov, args));
  io::write_text(out_dir / "confusion.csv", io::confusion_csv(eval::confusion_matrix(r.preds, r.labels, K), m.classes, prov));
  out << "acc " << r.acc << ", kappa " << kappa << ", loss " << r.loss << " on " << data.size() << " trial(s)\n";
  return kOk;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& trial_path, std::ostream& out) {
  model::Agtcnet model = model::load_weights(checkpoint);
  eval::TrialSet one;
  one.trials.push_back(io::read_trial(trial_path));
  one.ids.push_back(trial_path.string());
  const std::size_t idx = 0;
  auto res = model.forward(nn::Var(train::make_batch(one, std::span(&idx, 1), model.config())), {});
  const auto& p = res.probs.value();
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!std::isfinite(p[k])) throw NumericError("non-finite class probability");
    out << k << "," << io::format_double(p[k]) << "\n";
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"AGTCNet EEG motor-imagery toolkit", "agtcnet"};
  app.require_subcommand(1);
  const std::string args = join_args(argc, argv);

  fs::path manifest, out_dir = "out", config, checkpoint, plan_file, trial, montage_path;
  std::string framework = "sn", cv = "loso", preset;
  std::size_t k = 5, fold = 0;
  std::uint64_t seed = 0;
  double t_start = 0.0, t_end = 3.0, target_fs = 0.0;

  auto* pre = app.add_subcommand("preprocess", "EDF recordings -> preprocessed trial containers");
  pre->add_option("--manifest", manifest, "dataset manifest with recordings")->required();
  pre->add_option("--out", out_dir, "output directory")->required();
  pre->add_option("--t-start", t_start, "epoch start relative to the cue, seconds");
  pre->add_option("--t-end", t_end, "epoch end relative to the cue, seconds");
  pre->add_option("--target-fs", target_fs, "resample rate in Hz (0 keeps the native rate)");

  auto* gr = app.add_subcommand("graph", "electrode list -> adjacency JSON and matrix CSV");
  auto* montage_opt = gr->add_option("--montage", montage_path, "file of electrode labels");
  gr->add_option("--preset", preset, "bciciv2a or eegmmidb")->excludes(montage_opt);
  gr->add_option("--out", out_dir, "output directory")->required();

  auto* sp = app.add_subcommand("split", "manifest -> audited split-plan JSON");
  sp->add_option("--manifest", manifest)->required();
  sp->add_option("--framework", framework, "SN, SL-DS, SL-RS, SM-DS, SM-RS, SL-DS-FT")->required();
  sp->add_option("--cv", cv, "loso or lmso (SN only)");
  sp->add_option("--k", k, "LMSO blocks or stratified folds");
  sp->add_option("--seed", seed);
  sp->add_option("--out", plan_file, "split-plan JSON path")->required();

  auto* tr = app.add_subcommand("train", "train every selected fold of a run config");
  tr->add_option("--config", config)->required()->check(CLI::ExistingFile);

  auto* ft = app.add_subcommand("finetune", "fine-tune a checkpoint per subject session fold");
  ft->add_option("--config", config)->required()->check(CLI::ExistingFile);
  ft->add_option("--checkpoint", checkpoint)->required();

  auto* ev = app.add_subcommand("eval", "checkpoint + trials -> metrics JSON and confusion CSV");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--manifest", manifest)->required();
  ev->add_option("--plan", plan_file, "restrict to a fold's validation side");
  ev->add_option("--fold", fold, "1-based fold index into --plan");
  ev->add_option("--out", out_dir)->required();

  auto* in = app.add_subcommand("infer", "per-class probabilities for one trial container");
  in->add_option("--checkpoint", checkpoint)->required();
  in->add_option("--trial", trial)->required();

  auto* au = app.add_subcommand("audit", "leakage report for a split plan");
  au->add_option("--plan", plan_file)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*pre) {
      return cmd_preprocess(manifest, out_dir, t_start, t_end, target_fs > 0 ? std::optional(target_fs) : std::nullopt,
                            out, err);
    }
    if (*gr) return cmd_graph(montage_path.empty() ? std::nullopt : std::optional(montage_path), preset, out_dir, out);
    if (*sp) return cmd_split(manifest, framework, cv, k, seed, plan_file, args, out, err);
    if (*tr) return cmd_train(config, std::nullopt, out);
    if (*ft) return cmd_train(config, checkpoint, out);
    if (*ev) {
      return cmd_eval(checkpoint, manifest, plan_file.empty() ? std::nullopt : std::optional(plan_file), fold, out_dir,
                      args, out);
    }
    if (*in) return cmd_infer(checkpoint, trial, out);
    if (*au) return cmd_audit(plan_file, out);
  } catch (const io::ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace agtcnet::cli
