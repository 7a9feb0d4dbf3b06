#pragma once

#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "agtcnet/cli.hpp"
#include "agtcnet/data_io.hpp"
#include "agtcnet/edf.hpp"
#include "support.hpp"

namespace testing {

// Container trials for `subjects` x `sessions`, written under dir/trials,
// plus dir/manifest.json. Class is encoded as in separable_trials.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir, std::size_t subjects,
                                           std::size_t sessions, std::size_t per_session, std::size_t classes = 2,
                                           std::uint64_t seed = 1) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "trials");
  agtcnet::io::DatasetManifest m;
  m.dataset = "synthetic";
  for (std::size_t k = 0; k < classes; ++k) m.classes.push_back("class" + std::to_string(k));
  m.channels = micro_montage();
  for (std::size_t s = 1; s <= subjects; ++s) {
    for (std::size_t se = 0; se < sessions; ++se) {
      const std::string subject = "S" + std::to_string(s);
      const std::string session = std::string(1, static_cast<char>('A' + se));
      auto set = separable_trials(per_session, 4, 64, classes, seed + s * 100 + se, subject);
      for (std::size_t i = 0; i < set.size(); ++i) {
        auto& t = set.trials[i];
        t.session_id = session;
        agtcnet::io::ManifestTrial mt;
        mt.id = subject + "/" + session + "/1/" + std::to_string(i);
        mt.file = dir / "trials" / (subject + "_" + session + "_" + std::to_string(i) + ".eegt");
        mt.subject = subject;
        mt.session = session;
        mt.run = "1";
        mt.span = t.window_span;
        agtcnet::io::write_trial(mt.file, t);
        m.trials.push_back(mt);
      }
    }
  }
  agtcnet::io::save_manifest(dir / "manifest.json", m);
  return dir / "manifest.json";
}

// Run config for the micro model on a written dataset.
inline std::string micro_run_config(const std::filesystem::path& manifest, const std::filesystem::path& out,
                                    const std::string& framework, std::size_t epochs, std::uint64_t seed,
                                    const std::string& folds = "all") {
  std::ostringstream s;
  s << "[data]\nmanifest = " << manifest.string() << "\n\n"
    << "[split]\nframework = " << framework << "\ncv = loso\nk = 3\nfolds = " << folds << "\n\n"
    << "[train]\nmax_epochs = " << epochs << "\nbatch_size = 8\nlearning_rate = 0.001\nloss = cce\n"
    << "early_stop_patience = 300\nlr_decay = true\nseed = " << seed << "\n\n"
    << "[model]\nctc_kernel = 8\nctc_filters = 4\ngcat_out_features = 4\ngtc_filters = 8\nmha_key_dim = 4\n\n"
    << "[output]\ndir = " << out.string() << "\n";
  return s.str();
}

// EDF+ recordings at 250 Hz on the micro montage, one per (subject, run),
// with a T1/T2 cue every 2 s, and a raw manifest listing them.
inline std::filesystem::path write_edf_dataset(const std::filesystem::path& dir, std::size_t subjects,
                                               std::size_t runs, std::size_t cues, std::uint64_t seed = 1) {
  namespace fs = std::filesystem;
  using agtcnet::io::EdfAnnotation;
  fs::create_directories(dir);
  constexpr std::size_t kFs = 250;
  const std::size_t records = 2 * cues + 2;
  nlohmann::json recordings = nlohmann::json::array();
  RngStream rng(seed);
  for (std::size_t s = 1; s <= subjects; ++s) {
    for (std::size_t r = 1; r <= runs; ++r) {
      agtcnet::io::EdfFile f;
      f.header.reserved = "EDF+C";
      f.header.record_duration = 1.0;
      for (const auto& label : micro_montage()) {
        agtcnet::io::EdfSignalHeader h;
        h.label = label + ".";
        h.physical_dimension = "uV";
        h.physical_min = -1000.0;
        h.physical_max = 1000.0;
        h.samples_per_record = kFs;
        f.header.signals.push_back(h);
      }
      std::vector<std::vector<double>> uv(4, std::vector<double>(records * kFs, 0.0));
      std::vector<std::vector<EdfAnnotation>> ann(records);
      for (std::size_t c = 0; c < cues; ++c) {
        const std::size_t onset = (1 + 2 * c) * kFs;
        const int label = static_cast<int>((c + s + r) % 2);
        ann[1 + 2 * c].push_back({static_cast<double>(1 + 2 * c), 1.0, label == 0 ? "T1" : "T2"});
        for (std::size_t ch = 0; ch < 4; ++ch) {
          const double sign = (ch % 2) == static_cast<std::size_t>(label) ? 1.0 : -1.0;
          for (std::size_t i = 0; i < kFs; ++i)
            uv[ch][onset + i] += 40.0 * sign * std::sin(2.0 * M_PI * 6.0 * static_cast<double>(i) / kFs + 0.3 * ch);
        }
      }
      for (auto& row : uv) {
        std::vector<std::int16_t> d(row.size());
        for (std::size_t i = 0; i < row.size(); ++i) {
          const double v = row[i] + 5.0 * rng.uniform(-1.0, 1.0);
          d[i] = static_cast<std::int16_t>(std::lround((v + 1000.0) / 2000.0 * 65535.0 - 32768.0));
        }
        f.digital.push_back(std::move(d));
      }
      agtcnet::io::EdfSignalHeader a;
      a.label = "EDF Annotations";
      a.physical_min = -1;
      a.physical_max = 1;
      a.samples_per_record = 30;
      f.header.signals.push_back(a);
      f.digital.push_back(agtcnet::io::encode_tal_signal(ann, 1.0, 60));
      const std::string name = "S" + std::to_string(s) + "R" + std::to_string(r) + ".edf";
      agtcnet::io::write_edf(dir / name, f);
      recordings.push_back({{"file", name},
                            {"subject", "S" + std::to_string(s)},
                            {"session", "A"},
                            {"run", std::to_string(r)},
                            {"events", {{"T1", 0}, {"T2", 1}}}});
    }
  }
  const nlohmann::json doc = {{"dataset", "synthetic-edf"},
                              {"classes", {"T1", "T2"}},
                              {"channels", micro_montage()},
                              {"recordings", recordings}};
  agtcnet::io::write_text(dir / "raw.json", doc.dump(2) + "\n");
  return dir / "raw.json";
}

struct CliResult {
  int code = 0;
  std::string out, err;
};

inline CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "agtcnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = agtcnet::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

}  // namespace testing
