#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agtcnet/electrode_graph.hpp"
#include "agtcnet/eval.hpp"
#include "agtcnet/model.hpp"
#include "agtcnet/signal.hpp"
#include "agtcnet/train.hpp"

namespace agtcnet::io {

// "EEGT" trial container: magic, u16 version, u32 channels, u32 samples,
// f64 sampling rate, u32 label, channels x samples f64 payload (row-major).
std::vector<std::uint8_t> serialize_trial(const signal::EpochedTrial& trial);
signal::EpochedTrial parse_trial(const std::vector<std::uint8_t>& bytes);
void write_trial(const std::filesystem::path& path, const signal::EpochedTrial& trial);
signal::EpochedTrial read_trial(const std::filesystem::path& path);

struct ManifestTrial {
  std::string id;
  std::filesystem::path file;  // resolved against the manifest directory
  std::string subject, session, run;
  signal::WindowSpan span;
};

struct ManifestRecording {
  std::filesystem::path file;  // EDF/EDF+
  std::string subject, session, run;
  std::map<std::string, int> events;  // event code -> class index
};

struct DatasetManifest {
  std::string dataset;
  std::vector<std::string> classes;
  std::vector<std::string> channels;  // electrode labels in row order
  std::vector<std::string> excluded_subjects;
  bool runs_as_sessions = false;
  std::vector<ManifestTrial> trials;
  std::vector<ManifestRecording> recordings;
};

// Parses and validates: referenced files exist, ids unique, class maps in
// range. Excluded subjects are dropped here.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Reads every container trial and checks labels against the class list.
eval::TrialSet load_trials(const DatasetManifest& manifest);

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct RunConfig {
  std::filesystem::path manifest;
  double t_start = 0.0;
  double t_end = 3.0;
  std::optional<double> target_fs;
  eval::Framework framework = eval::Framework::sn;
  eval::CvScheme cv = eval::CvScheme::loso;
  std::size_t k = 5;
  std::vector<std::size_t> folds;  // empty: all
  train::TrainOptions train;
  std::map<std::string, std::size_t> model_sizes;  // ModelConfig overrides
  bool dropout = true;
  std::filesystem::path output_dir = "out";

  std::string text;  // source, echoed verbatim into outputs
  std::string hash() const;
};

// Sectioned key = value text. Unknown sections or keys are errors.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Reference configuration resized to the data and with the config's
// overrides applied.
model::ModelConfig model_config_for(const RunConfig& cfg, std::size_t channels, std::size_t samples,
                                    std::size_t classes);

// Identifies what produced an output file.
struct Provenance {
  std::string config_hash;
  std::string weights_version;  // git blob id of the checkpoint, or "-"
};

std::string weights_version(const std::filesystem::path& checkpoint);

// Formats doubles so equal values always print identically.
std::string format_double(double v);

// epoch,train_loss,train_acc,val_loss,val_acc,lr,sma_val_acc
std::string trace_csv(const eval::MetricTrace& trace, const Provenance& prov);
// fold,ma_acc,acc,kappa,best_epoch,best_sma_epoch then mean / std rows.
std::string summary_csv(const eval::Summary& summary, const std::vector<std::size_t>& best_epochs,
                        const std::vector<std::size_t>& best_sma_epochs, const Provenance& prov);
// true\pred matrix.
std::string confusion_csv(const eval::ConfusionMatrix& m, const std::vector<std::string>& classes,
                          const Provenance& prov);
std::string metrics_json(double acc, double kappa, double loss, std::size_t n, const Provenance& prov,
                         const std::string& config_text);

std::string adjacency_json(const graph::AdjacencyGraph& g);
std::string adjacency_csv(const graph::AdjacencyGraph& g);

std::string split_plan_json(const eval::SplitPlan& plan, const Provenance& prov);
eval::SplitPlan parse_split_plan(const std::string& json);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace agtcnet::io
