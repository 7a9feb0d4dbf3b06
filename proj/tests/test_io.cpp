#include <doctest.h>

#include <fstream>
#include <json.hpp>

#include "agtcnet/edf.hpp"
#include "fixtures.hpp"

using namespace agtcnet;
using namespace agtcnet::io;
namespace fs = std::filesystem;

namespace {

EdfSignalHeader eeg_signal(const std::string& label, std::size_t spr) {
  EdfSignalHeader s;
  s.label = label;
  s.transducer = "AgAgCl electrode";
  s.physical_dimension = "uV";
  s.physical_min = -1000.0;
  s.physical_max = 1000.0;
  s.prefilter = "HP:0.1Hz";
  s.samples_per_record = spr;
  return s;
}

// Two EEG signals at 160 Hz plus an annotation signal, three 1 s records.
EdfFile reference_edf() {
  EdfFile f;
  f.header.patient = "X X X X";
  f.header.recording = "Startdate X X X X";
  f.header.reserved = "EDF+C";
  f.header.records = 3;
  f.header.record_duration = 1.0;
  f.header.signals = {eeg_signal("C3.", 160), eeg_signal("C4.", 160)};
  EdfSignalHeader ann;
  ann.label = "EDF Annotations";
  ann.physical_min = -1;
  ann.physical_max = 1;
  ann.samples_per_record = 30;
  f.header.signals.push_back(ann);
  RngStream rng(5);
  for (int s = 0; s < 2; ++s) {
    std::vector<std::int16_t> d(480);
    for (auto& v : d) v = static_cast<std::int16_t>(static_cast<std::int64_t>(rng.below(65536)) - 32768);
    d[0] = -32768;
    d[1] = 32767;
    f.digital.push_back(d);
  }
  f.digital.push_back(encode_tal_signal({{{0.5, 4.2, "T0"}}, {{1.5, std::nullopt, "T1"}}, {}}, 1.0, 60));
  return f;
}

template <class F>
std::int64_t parse_offset(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.offset();
  }
  return -2;
}

}  // namespace

TEST_CASE("EDF physical scaling") {
  const auto s = eeg_signal("Cz", 1);
  CHECK(s.to_physical(0) == doctest::Approx(0.015259).epsilon(1e-5));
  CHECK(s.to_physical(-32768) == doctest::Approx(-1000.0));
  CHECK(s.to_physical(32767) == doctest::Approx(1000.0));
}

TEST_CASE("TAL grammar") {
  const std::string one("+1.5\x14T1\x14\0", 9);
  const auto a = parse_tals(one);
  REQUIRE(a.size() == 1);
  CHECK(a[0].onset == 1.5);
  CHECK_FALSE(a[0].duration.has_value());
  CHECK(a[0].text == "T1");

  const char raw[] = "+0\x14\x14\0+12.25\x15" "4.1\x14T2\x14" "Cue\x14\0\0\0\0";
  const std::string block(raw, sizeof raw - 1);
  const auto b = parse_tals(block);
  REQUIRE(b.size() == 2);  // timekeeping entry dropped
  CHECK(b[0].onset == 12.25);
  CHECK(*b[0].duration == doctest::Approx(4.1));
  CHECK(b[0].text == "T2");
  CHECK(b[1].text == "Cue");
  CHECK(parse_tals(std::string("-0.5\x14X\x14\0", 9))[0].onset == -0.5);

  CHECK(parse_offset([] { parse_tals(std::string("1.5\x14T1\x14\0", 8), 100); }) >= 100);
  CHECK(parse_offset([] { parse_tals(std::string("+1.5\x14T1", 6)); }) >= 0);
  CHECK(parse_offset([] { parse_tals(std::string("+abc\x14T1\x14\0", 9)); }) >= 0);
}

TEST_CASE("EDF write/read round trip is bit exact") {
  const auto ref = reference_edf();
  const auto bytes = serialize_edf(ref);
  CHECK(bytes.size() == 256 + 3 * 256 + 3 * 2 * (160 + 160 + 30));
  const auto back = parse_edf(bytes);
  CHECK(back.header.records == 3);
  CHECK(back.header.header_bytes == 256 + 3 * 256);
  CHECK(back.header.reserved == "EDF+C");
  REQUIRE(back.digital.size() == 3);
  for (std::size_t s = 0; s < 3; ++s) CHECK(back.digital[s] == ref.digital[s]);
  REQUIRE(back.annotations.size() == 2);
  CHECK(back.annotations[0].text == "T0");
  CHECK(*back.annotations[0].duration == doctest::Approx(4.2));
  CHECK(back.annotations[1].onset == 1.5);
  CHECK(serialize_edf(back) == bytes);

  const auto rec = edf_to_recording(back);
  CHECK(rec.sampling_rate == 160.0);
  CHECK(rec.channel_labels == std::vector<std::string>{"C3.", "C4."});
  CHECK(rec.samples() == 480);
  REQUIRE(rec.events.size() == 2);
  CHECK(rec.events[1].code == "T1");
  CHECK(rec.events[1].onset_sample == 240);
  CHECK(rec.events[0].onset_sample == 80);
  CHECK(rec.data[0][0] == doctest::Approx(-1000.0));
}

TEST_CASE("EDF parse errors carry byte offsets") {
  const auto good = serialize_edf(reference_edf());
  CHECK(parse_offset([&] { parse_edf(std::vector<std::uint8_t>(good.begin(), good.begin() + 100)); }) >= 0);
  auto bad = good;
  std::copy_n("abc     ", 8, bad.begin() + 236);
  CHECK(parse_offset([&] { parse_edf(bad); }) == 236);
  bad = good;
  std::copy_n("1000    ", 8, bad.begin() + 184);
  CHECK(parse_offset([&] { parse_edf(bad); }) == 184);
  bad = good;
  bad.pop_back();
  CHECK(parse_offset([&] { parse_edf(bad); }) >= 0);
  // records = -1 is inferred from the file size.
  bad = good;
  std::copy_n("-1      ", 8, bad.begin() + 236);
  CHECK(parse_edf(bad).header.records == 3);

  auto volts = reference_edf();
  volts.header.signals[0].physical_dimension = "mV";
  volts.header.signals[1].physical_dimension = "mV";
  const auto mv = edf_to_recording(parse_edf(serialize_edf(volts)));
  CHECK(mv.data[0][0] == doctest::Approx(-1e6));
  volts.header.signals[0].physical_dimension = "furlong";
  CHECK_THROWS_AS(edf_to_recording(parse_edf(serialize_edf(volts))), DataError);
}

TEST_CASE("trial container round trip and truncation") {
  auto set = testing::separable_trials(1, 3, 17, 2, 9);
  auto t = set.trials[0];
  t.label = 1;
  const auto bytes = serialize_trial(t);
  CHECK(bytes.size() == 4 + 2 + 4 + 4 + 8 + 4 + 8 * 3 * 17);
  const auto back = parse_trial(bytes);
  CHECK(back.data == t.data);
  CHECK(back.label == 1);
  CHECK(back.sampling_rate == 125.0);
  CHECK(back.window_span.start == 0);
  CHECK(back.window_span.end == 17);

  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(parse_trial(cut), ParseError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(parse_trial(magic), ParseError);
  auto ver = bytes;
  ver[4] = 2;
  CHECK_THROWS_AS(parse_trial(ver), ParseError);

  const auto dir = testing::temp_dir("eegt");
  write_trial(dir / "t.eegt", t);
  CHECK(read_trial(dir / "t.eegt").data == t.data);
  CHECK_THROWS(read_trial(dir / "missing.eegt"));
}

TEST_CASE("manifest load, exclusion and validation") {
  const auto dir = testing::temp_dir("manifest");
  const auto path = testing::write_dataset(dir, 3, 1, 4);
  auto m = load_manifest(path);
  CHECK(m.trials.size() == 12);
  CHECK(m.trials[0].file.is_absolute() == fs::path(dir).is_absolute());
  CHECK(fs::exists(m.trials[0].file));
  const auto set = load_trials(m);
  CHECK(set.size() == 12);
  CHECK(set.meta(5).subject == "S2");

  auto doc = nlohmann::json::parse(read_text(path));
  doc["excluded_subjects"] = {"S2"};
  write_text(dir / "excl.json", doc.dump());
  CHECK(load_manifest(dir / "excl.json").trials.size() == 8);

  doc["surprise"] = 1;
  write_text(dir / "unknown.json", doc.dump());
  CHECK_THROWS(load_manifest(dir / "unknown.json"));

  doc.erase("surprise");
  doc["trials"][1]["id"] = doc["trials"][0]["id"];
  write_text(dir / "dup.json", doc.dump());
  CHECK_THROWS(load_manifest(dir / "dup.json"));

  doc = nlohmann::json::parse(read_text(path));
  doc["trials"][0]["file"] = "trials/nope.eegt";
  write_text(dir / "missing.json", doc.dump());
  CHECK_THROWS(load_manifest(dir / "missing.json"));
}

TEST_CASE("run config parsing") {
  const std::string text =
      "[data]\nmanifest = data/m.json\n[epoch]\nt_start = -0.5\nt_end = 4\ntarget_fs = none\n"
      "[split]\nframework = SL-DS\nfolds = 2, 4\n[train]\nmax_epochs = 7\nloss = bce\nseed = 3\n"
      "[model]\ngtc_filters = 48\ndropout = false\n";
  const auto cfg = parse_run_config(text, "/base");
  CHECK(cfg.manifest == fs::path("/base/data/m.json"));
  CHECK(cfg.t_start == -0.5);
  CHECK_FALSE(cfg.target_fs.has_value());
  CHECK(cfg.framework == eval::Framework::sl_ds);
  CHECK(cfg.folds == std::vector<std::size_t>{2, 4});
  CHECK(cfg.train.max_epochs == 7);
  CHECK(cfg.train.loss == train::LossKind::binary);
  CHECK(cfg.text == text);
  CHECK(cfg.hash().size() == 16);
  const auto mc = model_config_for(cfg, 22, 375, 4);
  CHECK(mc.gtc_filters == 48);
  CHECK(mc.dropout == model::DropoutRates::none());

  CHECK_THROWS_AS(parse_run_config("[data]\nmanifest = m\nsurprise = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[data]\nmanifest = m\n[extra]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[data]\nmanifest = m\n[train]\nmax_epochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[split]\nframework = SN\n"), ConfigError);
  CHECK_THROWS_AS(model_config_for(parse_run_config("[data]\nmanifest = m\n[model]\nmha_heads = 0\n"), 22, 375, 4),
                  InvalidArgument);
}

TEST_CASE("CSV and JSON schemas") {
  eval::MetricTrace t;
  t.train_loss = {1.5, 0.25};
  t.train_acc = {0.5, 0.75};
  t.val_loss = {1.25, 1.0};
  t.val_acc = {0.5, 1.0};
  t.lr = {0.001, 0.0009};
  const Provenance prov{"00ff00ff00ff00ff", "-"};
  CHECK(trace_csv(t, prov) ==
        "# run_config=00ff00ff00ff00ff weights=-\n"
        "epoch,train_loss,train_acc,val_loss,val_acc,lr,sma_val_acc\n"
        "1,1.5,0.5,1.25,0.5,0.001,0.5\n"
        "2,0.25,0.75,1,1,0.0009,0.75\n");

  eval::FoldResult a, b;
  a.fold = "S1";
  a.acc = 0.5;
  a.ma_acc = 0.25;
  b.fold = "S2";
  b.acc = 1.0;
  b.ma_acc = 0.75;
  b.kappa = 1.0;
  const auto s = eval::aggregate_report({a, b});
  CHECK(summary_csv(s, {3, 4}, {5, 6}, prov) ==
        "# run_config=00ff00ff00ff00ff weights=-\n"
        "# std uses the n-1 convention over 2 fold result(s)\n"
        "fold,ma_acc,acc,kappa,best_epoch,best_sma_epoch\n"
        "S1,0.25,0.5,0,3,5\n"
        "S2,0.75,1,1,4,6\n"
        "mean,0.5,0.75,0.5,,\n"
        "std," + format_double(std::sqrt(0.125)) + "," + format_double(std::sqrt(0.125)) + "," +
            format_double(std::sqrt(0.5)) + ",,\n");

  CHECK(confusion_csv({{2, 0}, {1, 3}}, {"left", "right"}, prov) ==
        "# run_config=00ff00ff00ff00ff weights=-\n"
        "true\\pred,left,right\n"
        "left,2,0\n"
        "right,1,3\n");

  const auto mj = nlohmann::json::parse(metrics_json(0.75, 0.5, 0.6, 8, prov, "[data]\n"));
  CHECK(mj["acc"] == 0.75);
  CHECK(mj["kappa"] == 0.5);
  CHECK(mj["n"] == 8);
  CHECK(mj["run_config"] == "00ff00ff00ff00ff");
  CHECK(mj["config"] == "[data]\n");

  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e-4) == "0.0001");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("adjacency and split-plan serialization") {
  const auto g = graph::build_adjacency({"C3", "C1", "Cz", "FCz"});
  const auto j = nlohmann::json::parse(adjacency_json(g));
  CHECK(j["labels"].size() == 4);
  CHECK(j["edge_count"] == 3);
  CHECK(j["components"] == 1);
  CHECK(j["edges"].size() == 3);
  const auto csv = adjacency_csv(g);
  CHECK(csv.rfind("channel,C3,C1,Cz,FCz\n", 0) == 0);
  CHECK(csv.find("Cz,0,1,0,1\n") != std::string::npos);

  std::vector<eval::TrialMeta> metas;
  for (int s = 1; s <= 3; ++s)
    for (int i = 0; i < 2; ++i)
      metas.push_back({"S" + std::to_string(s) + "-" + std::to_string(i), "S" + std::to_string(s), "A", "1", i,
                       {i * 100, i * 100 + 50}});
  const auto plan = eval::make_splits(eval::Framework::sn, metas);
  const auto back = parse_split_plan(split_plan_json(plan, {"abc", "-"}));
  CHECK(back.framework == plan.framework);
  CHECK(back.scheme == plan.scheme);
  REQUIRE(back.folds.size() == 3);
  CHECK(back.folds[1].val == plan.folds[1].val);
  CHECK(back.folds[1].name == plan.folds[1].name);
  CHECK(back.trials[3].span.end == 150);
  CHECK(eval::leakage_audit(back).empty());
}

TEST_CASE("CLI usage errors and graph presets") {
  CHECK(testing::run_cli({}).code == cli::kUsage);
  CHECK(testing::run_cli({"bogus"}).code == cli::kUsage);
  CHECK(testing::run_cli({"graph", "--out"}).code == cli::kUsage);
  const auto dir = testing::temp_dir("cli_graph");
  const auto r = testing::run_cli({"graph", "--preset", "bciciv2a", "--out", dir.string()});
  CHECK(r.code == cli::kOk);
  CHECK(r.out.find("22 channels, 31 edges") != std::string::npos);
  CHECK(fs::exists(dir / "adjacency.json"));
  write_text(dir / "montage.txt", "C3\nCz\nC4\n");
  CHECK(testing::run_cli({"graph", "--montage", (dir / "montage.txt").string(), "--out", dir.string()}).code ==
        cli::kOk);
  CHECK(nlohmann::json::parse(read_text(dir / "adjacency.json"))["edge_count"] == 2);
  write_text(dir / "bad.txt", "C3\nQQ7\n");
  CHECK(testing::run_cli({"graph", "--montage", (dir / "bad.txt").string(), "--out", dir.string()}).code ==
        cli::kDataError);
}

TEST_CASE("CLI split and audit") {
  const auto dir = testing::temp_dir("cli_split");
  const auto manifest = testing::write_dataset(dir / "data", 9, 1, 2);
  const auto plan = dir / "plan.json";
  const auto r = testing::run_cli(
      {"split", "--manifest", manifest.string(), "--framework", "sn", "--cv", "loso", "--out", plan.string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(nlohmann::json::parse(read_text(plan))["folds"].size() == 9);
  CHECK(testing::run_cli({"audit", "--plan", plan.string()}).code == cli::kOk);

  auto doc = nlohmann::json::parse(read_text(plan));
  doc["folds"][0]["train"].push_back(doc["folds"][0]["val"][0]);
  write_text(dir / "leaky.json", doc.dump());
  const auto leak = testing::run_cli({"audit", "--plan", (dir / "leaky.json").string()});
  CHECK(leak.code == cli::kDataError);
  CHECK(leak.out.find("leakage violation") != std::string::npos);

  CHECK(testing::run_cli({"split", "--manifest", (dir / "none.json").string(), "--framework", "sn", "--out",
                          plan.string()})
            .code == cli::kDataError);
  CHECK(testing::run_cli(
            {"split", "--manifest", manifest.string(), "--framework", "SL-DS", "--out", plan.string()})
            .code == cli::kDataError);  // single session per subject
}

TEST_CASE("CLI infer on a zero-weight checkpoint is uniform") {
  const auto dir = testing::temp_dir("cli_infer");
  auto cfg = testing::micro_config(4);
  model::Agtcnet m(cfg, graph::build_adjacency(testing::micro_montage()), 1);
  for (auto& p : m.params())
    for (auto& v : p.var.mutable_value().values()) v = 0.0;
  model::save_weights(m, dir / "zero.agtc");
  auto t = testing::separable_trials(1, 4, 64, 4, 2).trials[0];
  write_trial(dir / "t.eegt", t);
  const auto r = testing::run_cli({"infer", "--checkpoint", (dir / "zero.agtc").string(), "--trial",
                                   (dir / "t.eegt").string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.out == "0,0.25\n1,0.25\n2,0.25\n3,0.25\n");

  auto wrong = testing::separable_trials(1, 3, 64, 4, 2).trials[0];
  write_trial(dir / "w.eegt", wrong);
  CHECK(testing::run_cli({"infer", "--checkpoint", (dir / "zero.agtc").string(), "--trial",
                          (dir / "w.eegt").string()})
            .code == cli::kDataError);
}

TEST_CASE("CLI train, eval and config errors") {
  const auto dir = testing::temp_dir("cli_train");
  const auto manifest = testing::write_dataset(dir / "data", 3, 1, 6);
  write_text(dir / "run.ini", testing::micro_run_config(manifest, dir / "out", "SN", 3, 7, "1"));
  const auto r = testing::run_cli({"train", "--config", (dir / "run.ini").string()});
  REQUIRE(r.code == cli::kOk);
  const auto fold_dirs = std::distance(fs::directory_iterator(dir / "out"), fs::directory_iterator{});
  CHECK(fold_dirs == 4);  // run_config.ini, split_plan.json, summary.csv and one fold
  CHECK(read_text(dir / "out" / "run_config.ini") == read_text(dir / "run.ini"));
  const auto summary = read_text(dir / "out" / "summary.csv");
  CHECK(summary.rfind("# run_config=" + parse_run_config(read_text(dir / "run.ini")).hash(), 0) == 0);

  fs::path fold;
  for (const auto& e : fs::directory_iterator(dir / "out"))
    if (e.is_directory()) fold = e.path();
  REQUIRE(fs::exists(fold / "best.agtc"));
  const auto trace = read_text(fold / "trace.csv");
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 2 + 3);
  const auto ev = testing::run_cli({"eval", "--checkpoint", (fold / "best.agtc").string(), "--manifest",
                                    manifest.string(), "--plan", (dir / "out" / "split_plan.json").string(),
                                    "--fold", "1", "--out", (dir / "eval").string()});
  REQUIRE(ev.code == cli::kOk);
  const auto mj = nlohmann::json::parse(read_text(dir / "eval" / "metrics.json"));
  const auto fm = nlohmann::json::parse(read_text(fold / "metrics.json"));
  CHECK(mj["acc"] == fm["acc"]);
  CHECK(mj["n"] == 6);
  CHECK(read_text(dir / "eval" / "confusion.csv").find("weights=" + weights_version(fold / "best.agtc")) !=
        std::string::npos);

  write_text(dir / "bad.ini", read_text(dir / "run.ini") + "[train]\nwarp = 9\n");
  CHECK(testing::run_cli({"train", "--config", (dir / "bad.ini").string()}).code == cli::kUsage);
  CHECK(testing::run_cli({"finetune", "--config", (dir / "run.ini").string(), "--checkpoint",
                          (dir / "nope.agtc").string()})
            .code == cli::kDataError);
}

TEST_CASE("CLI preprocess from EDF recordings") {
  const auto dir = testing::temp_dir("cli_pre");
  auto edf = reference_edf();
  // Long enough for 1 s epochs after both cues.
  write_edf(dir / "r1.edf", edf);
  const nlohmann::json manifest = {
      {"dataset", "mini"},
      {"classes", {"rest", "left"}},
      {"channels", {"C3", "C4"}},
      {"recordings",
       {{{"file", "r1.edf"}, {"subject", "S1"}, {"session", "A"}, {"run", "3"}, {"events", {{"T0", 0}, {"T1", 1}}}}}}};
  write_text(dir / "raw.json", manifest.dump());
  const auto r = testing::run_cli({"preprocess", "--manifest", (dir / "raw.json").string(), "--out",
                                   (dir / "pre").string(), "--t-start", "0", "--t-end", "1"});
  REQUIRE(r.code == cli::kOk);
  const auto m = load_manifest(dir / "pre" / "manifest.json");
  REQUIRE(m.trials.size() == 2);
  const auto set = load_trials(m);
  CHECK(set.trials[0].samples() == 160);
  CHECK(set.trials[1].label == 1);
  CHECK(m.trials[1].span.start == 240);
  for (std::size_t t = 0; t < 160; ++t)
    CHECK(std::abs(set.trials[0].data[0][t] + set.trials[0].data[1][t]) < 1e-9 * 1000.0);
}
