#include "agtcnet/data_io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "agtcnet/binary_io.hpp"
#include "json.hpp"

namespace agtcnet::io {

using nlohmann::json;

namespace {

constexpr char kTrialMagic[4] = {'E', 'E', 'G', 'T'};
constexpr std::uint16_t kTrialVersion = 1;

[[noreturn]] void trial_fail(const std::string& what, std::size_t offset) {
  throw ParseError("trial container: " + what, static_cast<std::int64_t>(offset));
}

}  // namespace

std::vector<std::uint8_t> serialize_trial(const signal::EpochedTrial& trial) {
  const std::size_t C = trial.channels(), T = trial.samples();
  for (const auto& row : trial.data)
    if (row.size() != T) throw InvalidArgument("trial rows differ in length");
  if (trial.label < 0) throw InvalidArgument("trial label must be non-negative");
  ByteWriter w;
  w.put_bytes(std::string_view(kTrialMagic, 4));
  w.put<std::uint16_t>(kTrialVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(C));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(T));
  w.put<double>(trial.sampling_rate);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(trial.label));
  for (const auto& row : trial.data)
    for (double v : row) w.put<double>(v);
  return w.bytes();
}

signal::EpochedTrial parse_trial(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, trial_fail);
  if (r.get_string(4, "magic") != std::string(kTrialMagic, 4)) throw ParseError("not an EEGT trial container", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kTrialVersion) throw ParseError("unsupported trial container version " + std::to_string(version), 4);
  const auto C = r.get<std::uint32_t>("channel count");
  const auto T = r.get<std::uint32_t>("sample count");
  signal::EpochedTrial t;
  t.sampling_rate = r.get<double>("sampling rate");
  t.label = static_cast<int>(r.get<std::uint32_t>("label"));
  const std::uint64_t payload = 8ULL * C * T;
  if (r.remaining() != payload) {
    throw ParseError("payload is " + std::to_string(r.remaining()) + " bytes, expected 8*" + std::to_string(C) + "*" +
                         std::to_string(T) + " = " + std::to_string(payload),
                     static_cast<std::int64_t>(r.pos()));
  }
  t.data.assign(C, std::vector<double>(T));
  for (auto& row : t.data)
    for (auto& v : row) v = r.get<double>("payload");
  t.window_span = {0, static_cast<std::int64_t>(T)};
  return t;
}

void write_trial(const std::filesystem::path& path, const signal::EpochedTrial& trial) {
  write_file(path, serialize_trial(trial));
}

signal::EpochedTrial read_trial(const std::filesystem::path& path) {
  try {
    return parse_trial(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, _] : obj.items())
    if (!allowed.count(k)) throw DataError(where + ": unknown key '" + k + "'");
}

std::string str_or(const json& obj, const char* key, const std::string& fallback = "") {
  return obj.contains(key) ? obj.at(key).get<std::string>() : fallback;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), static_cast<std::int64_t>(e.byte));
  }
  const auto base = path.parent_path();
  DatasetManifest m;
  try {
    reject_unknown(doc, {"dataset", "classes", "channels", "excluded_subjects", "runs_as_sessions", "trials", "recordings"},
                   path.string());
    m.dataset = str_or(doc, "dataset");
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    m.channels = doc.at("channels").get<std::vector<std::string>>();
    if (doc.contains("excluded_subjects")) m.excluded_subjects = doc["excluded_subjects"].get<std::vector<std::string>>();
    m.runs_as_sessions = doc.value("runs_as_sessions", false);
    const std::set<std::string> excluded(m.excluded_subjects.begin(), m.excluded_subjects.end());
    std::set<std::string> ids;
    for (const auto& t : doc.value("trials", json::array())) {
      reject_unknown(t, {"id", "file", "subject", "session", "run", "window"}, path.string() + " trial");
      ManifestTrial mt;
      mt.id = t.at("id").get<std::string>();
      mt.file = base / t.at("file").get<std::string>();
      mt.subject = t.at("subject").get<std::string>();
      mt.session = str_or(t, "session");
      mt.run = str_or(t, "run");
      if (t.contains("window")) {
        const auto w = t["window"].get<std::vector<std::int64_t>>();
        if (w.size() != 2 || w[0] > w[1]) throw DataError("trial '" + mt.id + "': window must be [start, end]");
        mt.span = {w[0], w[1]};
      }
      if (!ids.insert(mt.id).second) throw DataError("duplicate trial id '" + mt.id + "'");
      if (excluded.count(mt.subject)) continue;
      if (!std::filesystem::exists(mt.file)) throw DataError("trial file not found: " + mt.file.string());
      m.trials.push_back(std::move(mt));
    }
    for (const auto& r : doc.value("recordings", json::array())) {
      reject_unknown(r, {"file", "subject", "session", "run", "events"}, path.string() + " recording");
      ManifestRecording mr;
      mr.file = base / r.at("file").get<std::string>();
      mr.subject = r.at("subject").get<std::string>();
      mr.session = str_or(r, "session");
      mr.run = str_or(r, "run");
      mr.events = r.at("events").get<std::map<std::string, int>>();
      for (const auto& [code, label] : mr.events) {
        if (label < 0 || static_cast<std::size_t>(label) >= m.classes.size()) {
          throw DataError(mr.file.string() + ": event '" + code + "' maps to class " + std::to_string(label) +
                          " outside the " + std::to_string(m.classes.size()) + " declared classes");
        }
      }
      if (excluded.count(mr.subject)) continue;
      if (!std::filesystem::exists(mr.file)) throw DataError("recording not found: " + mr.file.string());
      m.recordings.push_back(std::move(mr));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  const auto base = path.parent_path();
  json doc;
  doc["dataset"] = m.dataset;
  doc["classes"] = m.classes;
  doc["channels"] = m.channels;
  doc["excluded_subjects"] = m.excluded_subjects;
  doc["runs_as_sessions"] = m.runs_as_sessions;
  doc["trials"] = json::array();
  for (const auto& t : m.trials) {
    doc["trials"].push_back({{"id", t.id},
                             {"file", std::filesystem::relative(t.file, base.empty() ? "." : base).generic_string()},
                             {"subject", t.subject},
                             {"session", t.session},
                             {"run", t.run},
                             {"window", {t.span.start, t.span.end}}});
  }
  doc["recordings"] = json::array();
  for (const auto& r : m.recordings) {
    doc["recordings"].push_back({{"file", std::filesystem::relative(r.file, base.empty() ? "." : base).generic_string()},
                                 {"subject", r.subject},
                                 {"session", r.session},
                                 {"run", r.run},
                                 {"events", r.events}});
  }
  write_text(path, doc.dump(2) + "\n");
}

eval::TrialSet load_trials(const DatasetManifest& manifest) {
  eval::TrialSet set;
  for (const auto& mt : manifest.trials) {
    signal::EpochedTrial t = read_trial(mt.file);
    if (static_cast<std::size_t>(t.label) >= manifest.classes.size()) {
      throw DataError(mt.file.string() + ": label " + std::to_string(t.label) + " outside the " +
                      std::to_string(manifest.classes.size()) + " declared classes");
    }
    if (!manifest.channels.empty() && t.channels() != manifest.channels.size()) {
      throw DataError(mt.file.string() + ": " + std::to_string(t.channels()) + " channels, manifest lists " +
                      std::to_string(manifest.channels.size()));
    }
    t.subject_id = mt.subject;
    t.session_id = mt.session;
    t.run_id = mt.run;
    t.window_span = mt.span;
    set.trials.push_back(std::move(t));
    set.ids.push_back(mt.id);
  }
  return set;
}

std::string RunConfig::hash() const { return fnv1a_hex(text); }

namespace {

const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"data", {"manifest"}},
      {"epoch", {"t_start", "t_end", "target_fs"}},
      {"split", {"framework", "cv", "k", "folds"}},
      {"train",
       {"max_epochs", "batch_size", "learning_rate", "loss", "early_stop_patience", "lr_decay", "seed"}},
      {"model",
       {"ctc_kernel", "ctc_filters", "gcat_heads", "gcat_out_features", "gcat_kernel", "gtc_filters", "gtc_kernel",
        "mha_heads", "mha_key_dim", "dropout"}},
      {"output", {"dir"}},
  };
  return schema;
}

template <typename T>
T convert(const std::string& section, const std::string& key, const std::string& value) {
  T v{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (value.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("[" + section + "] " + key + ": cannot parse '" + value + "'");
  }
  return v;
}

bool convert_bool(const std::string& section, const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "yes" || value == "1") return true;
  if (value == "false" || value == "off" || value == "no" || value == "0") return false;
  throw ConfigError("[" + section + "] " + key + ": expected a boolean, got '" + value + "'");
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig cfg;
  cfg.text = text;
  const auto& schema = config_schema();
  for (const auto& [section, body] : tree) {
    auto it = schema.find(section);
    if (body.empty() || it == schema.end()) throw ConfigError("unknown config section or top-level key '" + section + "'");
    for (const auto& [key, node] : body) {
      if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      const std::string v = node.get_value<std::string>();
      if (section == "data") {
        cfg.manifest = base_dir / v;
      } else if (section == "epoch") {
        if (key == "t_start") cfg.t_start = convert<double>(section, key, v);
        if (key == "t_end") cfg.t_end = convert<double>(section, key, v);
        if (key == "target_fs") cfg.target_fs = v == "none" ? std::nullopt : std::optional(convert<double>(section, key, v));
      } else if (section == "split") {
        if (key == "framework") {
          try {
            cfg.framework = eval::parse_framework(v);
          } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("[split] framework: ") + e.what());
          }
        }
        if (key == "cv") {
          if (v != "loso" && v != "lmso") throw ConfigError("[split] cv must be loso or lmso, got '" + v + "'");
          cfg.cv = v == "loso" ? eval::CvScheme::loso : eval::CvScheme::lmso;
        }
        if (key == "k") cfg.k = convert<std::size_t>(section, key, v);
        if (key == "folds" && v != "all") {
          std::istringstream list(v);
          for (std::string item; std::getline(list, item, ',');) {
            item.erase(0, item.find_first_not_of(' '));
            item.erase(item.find_last_not_of(' ') + 1);
            const auto f = convert<std::size_t>(section, key, item);
            if (f == 0) throw ConfigError("[split] folds are numbered from 1");
            cfg.folds.push_back(f);
          }
        }
      } else if (section == "train") {
        auto& t = cfg.train;
        if (key == "max_epochs") t.max_epochs = convert<std::size_t>(section, key, v);
        if (key == "batch_size") t.batch_size = convert<std::size_t>(section, key, v);
        if (key == "learning_rate") t.learning_rate = convert<double>(section, key, v);
        if (key == "early_stop_patience") t.early_stop_patience = convert<std::size_t>(section, key, v);
        if (key == "lr_decay") t.lr_decay = convert_bool(section, key, v);
        if (key == "seed") t.seed = convert<std::uint64_t>(section, key, v);
        if (key == "loss") {
          if (v != "cce" && v != "bce") throw ConfigError("[train] loss must be cce or bce, got '" + v + "'");
          t.loss = v == "cce" ? train::LossKind::categorical : train::LossKind::binary;
        }
      } else if (section == "model") {
        if (key == "dropout") {
          cfg.dropout = convert_bool(section, key, v);
        } else {
          cfg.model_sizes[key] = convert<std::size_t>(section, key, v);
        }
      } else if (section == "output") {
        cfg.output_dir = base_dir / v;
      }
    }
  }
  if (cfg.manifest.empty()) throw ConfigError("[data] manifest is required");
  if (!(cfg.t_start < cfg.t_end)) throw ConfigError("[epoch] t_start must be below t_end");
  if (cfg.train.batch_size == 0) throw ConfigError("[train] batch_size must be positive");
  if (!(cfg.train.learning_rate > 0.0)) throw ConfigError("[train] learning_rate must be positive");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text(path), path.parent_path());
}

model::ModelConfig model_config_for(const RunConfig& cfg, std::size_t channels, std::size_t samples,
                                    std::size_t classes) {
  model::ModelConfig c = model::bciciv2a_config();
  c.num_channels = channels;
  c.num_samples = samples;
  c.num_classes = classes;
  for (const auto& [key, v] : cfg.model_sizes) {
    if (key == "ctc_kernel") c.ctc_kernel = v;
    if (key == "ctc_filters") c.ctc_filters = v;
    if (key == "gcat_heads") c.gcat_heads = v;
    if (key == "gcat_out_features") c.gcat_out_features = v;
    if (key == "gcat_kernel") c.gcat_kernel = v;
    if (key == "gtc_filters") c.gtc_filters = v;
    if (key == "gtc_kernel") c.gtc_kernel = v;
    if (key == "mha_heads") c.mha_heads = v;
    if (key == "mha_key_dim") c.mha_key_dim = v;
  }
  if (!cfg.dropout) c.dropout = model::DropoutRates::none();
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model configuration: ") + e.what());
  }
  return c;
}

std::string weights_version(const std::filesystem::path& checkpoint) { return git_blob_id(read_file(checkpoint)); }

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
  return std::string(buf, ptr);
}

namespace {

std::string provenance_line(const Provenance& p) {
  return "# run_config=" + p.config_hash + " weights=" + p.weights_version + "\n";
}

}  // namespace

std::string trace_csv(const eval::MetricTrace& trace, const Provenance& prov) {
  std::string out = provenance_line(prov);
  out += "epoch,train_loss,train_acc,val_loss,val_acc,lr,sma_val_acc\n";
  const auto smooth = eval::sma(trace.val_acc);
  for (std::size_t e = 0; e < trace.epochs(); ++e) {
    out += std::to_string(e + 1) + "," + format_double(trace.train_loss[e]) + "," + format_double(trace.train_acc[e]) +
           "," + format_double(trace.val_loss[e]) + "," + format_double(trace.val_acc[e]) + "," +
           format_double(trace.lr[e]) + "," + format_double(smooth[e]) + "\n";
  }
  return out;
}

std::string summary_csv(const eval::Summary& s, const std::vector<std::size_t>& best_epochs,
                        const std::vector<std::size_t>& best_sma_epochs, const Provenance& prov) {
  std::string out = provenance_line(prov);
  out += "# std uses the n-1 convention over " + std::to_string(s.acc.n) + " fold result(s)\n";
  out += "fold,ma_acc,acc,kappa,best_epoch,best_sma_epoch\n";
  for (std::size_t i = 0; i < s.folds.size(); ++i) {
    const auto& f = s.folds[i];
    out += f.fold + "," + format_double(f.ma_acc) + "," + format_double(f.acc) + "," + format_double(f.kappa) + "," +
           (i < best_epochs.size() ? std::to_string(best_epochs[i]) : "") + "," +
           (i < best_sma_epochs.size() ? std::to_string(best_sma_epochs[i]) : "") + "\n";
  }
  out += "mean," + format_double(s.ma_acc.mean) + "," + format_double(s.acc.mean) + "," + format_double(s.kappa.mean) + ",,\n";
  out += "std," + format_double(s.ma_acc.std) + "," + format_double(s.acc.std) + "," + format_double(s.kappa.std) + ",,\n";
  return out;
}

std::string confusion_csv(const eval::ConfusionMatrix& m, const std::vector<std::string>& classes,
                          const Provenance& prov) {
  std::string out = provenance_line(prov);
  auto name = [&](std::size_t c) { return c < classes.size() ? classes[c] : std::to_string(c); };
  out += "true\\pred";
  for (std::size_t c = 0; c < m.size(); ++c) out += "," + name(c);
  out += "\n";
  for (std::size_t r = 0; r < m.size(); ++r) {
    out += name(r);
    for (std::size_t v : m[r]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

std::string metrics_json(double acc, double kappa, double loss, std::size_t n, const Provenance& prov,
                         const std::string& config_text) {
  json doc = {{"acc", acc},
              {"kappa", kappa},
              {"loss", loss},
              {"n", n},
              {"run_config", prov.config_hash},
              {"weights", prov.weights_version},
              {"config", config_text}};
  return doc.dump(2) + "\n";
}

std::string adjacency_json(const graph::AdjacencyGraph& g) {
  json doc;
  doc["labels"] = json::array();
  for (const auto& l : g.labels) doc["labels"].push_back(graph::format_label(l));
  doc["edges"] = json::array();
  for (const auto& [i, j] : g.edges()) doc["edges"].push_back({graph::format_label(g.labels[i]), graph::format_label(g.labels[j])});
  const auto report = graph::degree_histogram(g);
  doc["edge_count"] = g.edge_count();
  doc["components"] = report.components;
  doc["degree"] = report.degree;
  return doc.dump(2) + "\n";
}

std::string adjacency_csv(const graph::AdjacencyGraph& g) {
  std::string out = "channel";
  for (const auto& l : g.labels) out += "," + graph::format_label(l);
  out += "\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    out += graph::format_label(g.labels[i]);
    for (std::size_t j = 0; j < g.size(); ++j) out += g.connected(i, j) ? ",1" : ",0";
    out += "\n";
  }
  return out;
}

std::string split_plan_json(const eval::SplitPlan& plan, const Provenance& prov) {
  json doc;
  doc["framework"] = eval::framework_name(plan.framework);
  doc["scheme"] = plan.scheme;
  doc["run_config"] = prov.config_hash;
  doc["trials"] = json::array();
  for (const auto& t : plan.trials) {
    doc["trials"].push_back({{"id", t.id},
                             {"subject", t.subject},
                             {"session", t.session},
                             {"run", t.run},
                             {"label", t.label},
                             {"window", {t.span.start, t.span.end}}});
  }
  doc["folds"] = json::array();
  for (const auto& f : plan.folds) doc["folds"].push_back({{"name", f.name}, {"train", f.train}, {"val", f.val}});
  return doc.dump(2) + "\n";
}

eval::SplitPlan parse_split_plan(const std::string& text) {
  eval::SplitPlan plan;
  try {
    const json doc = json::parse(text);
    plan.framework = eval::parse_framework(doc.at("framework").get<std::string>());
    plan.scheme = doc.value("scheme", "");
    for (const auto& t : doc.at("trials")) {
      const auto w = t.at("window").get<std::vector<std::int64_t>>();
      if (w.size() != 2) throw DataError("split plan: window must be [start, end]");
      plan.trials.push_back({t.at("id").get<std::string>(), t.at("subject").get<std::string>(),
                             t.value("session", ""), t.value("run", ""), t.value("label", 0), {w[0], w[1]}});
    }
    for (const auto& f : doc.at("folds")) {
      eval::Fold fold{f.at("name").get<std::string>(), f.at("train").get<std::vector<std::size_t>>(),
                      f.at("val").get<std::vector<std::size_t>>()};
      for (std::size_t i : fold.train)
        if (i >= plan.trials.size()) throw DataError("split plan: fold '" + fold.name + "' index out of range");
      for (std::size_t i : fold.val)
        if (i >= plan.trials.size()) throw DataError("split plan: fold '" + fold.name + "' index out of range");
      plan.folds.push_back(std::move(fold));
    }
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("split plan: ") + e.what(), static_cast<std::int64_t>(e.byte));
  } catch (const json::exception& e) {
    throw DataError(std::string("split plan: ") + e.what());
  }
  return plan;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace agtcnet::io
