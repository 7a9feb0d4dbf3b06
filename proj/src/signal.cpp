#include "agtcnet/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "agtcnet/error.hpp"

namespace agtcnet::signal {

void RawRecording::validate() const {
  if (!(sampling_rate > 0.0)) throw InvalidArgument("sampling rate must be positive");
  if (data.size() != channel_labels.size()) {
    throw InvalidArgument("recording has " + std::to_string(data.size()) + " rows but " +
                          std::to_string(channel_labels.size()) + " channel labels");
  }
  for (const auto& row : data)
    if (row.size() != samples()) throw InvalidArgument("recording rows differ in length");
}

RawRecording scale_to_microvolts(RawRecording rec) {
  if (rec.unit == Unit::volts) {
    for (auto& row : rec.data)
      for (auto& v : row) v *= 1e6;
    rec.unit = Unit::microvolts;
  }
  return rec;
}

SosFilter design_butterworth_lowpass(int order, double cutoff_hz, double sampling_rate_hz) {
  if (order <= 0) throw InvalidArgument("filter order must be positive");
  if (!(sampling_rate_hz > 0.0)) throw InvalidArgument("sampling rate must be positive");
  if (!(cutoff_hz > 0.0 && cutoff_hz < sampling_rate_hz / 2.0)) {
    throw InvalidArgument("invalid cutoff " + std::to_string(cutoff_hz) + " Hz: must lie in (0, " +
                          std::to_string(sampling_rate_hz / 2.0) + ") Hz");
  }
  const double k = 2.0 * sampling_rate_hz;
  const double wc = k * std::tan(std::numbers::pi * cutoff_hz / sampling_rate_hz);  // prewarped
  const double w2 = wc * wc;

  // Conjugate pole pairs of the normalized prototype; Q = 1 / (-2 cos theta).
  struct Pair {
    double q;
    double damping;  // -2 Re(p) * wc
  };
  std::vector<Pair> pairs;
  for (int i = 0; i < order / 2; ++i) {
    const double theta = std::numbers::pi * (2.0 * i + order + 1) / (2.0 * order);
    const double re = std::cos(theta);
    pairs.push_back({1.0 / (-2.0 * re), -2.0 * re * wc});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.q < b.q; });

  SosFilter f;
  f.order = order;
  f.cutoff_hz = cutoff_hz;
  f.sampling_rate_hz = sampling_rate_hz;
  if (order % 2 == 1) {
    const double a0 = k + wc;
    f.sections.push_back(Biquad{wc / a0, wc / a0, 0.0, (wc - k) / a0, 0.0});
  }
  for (const auto& p : pairs) {
    const double a0 = k * k + p.damping * k + w2;
    f.sections.push_back(
        Biquad{w2 / a0, 2.0 * w2 / a0, w2 / a0, (2.0 * w2 - 2.0 * k * k) / a0, (k * k - p.damping * k + w2) / a0});
  }
  return f;
}

std::complex<double> frequency_response(const SosFilter& filter, double freq_hz) {
  const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / filter.sampling_rate_hz);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : filter.sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

std::vector<double> apply_filter(const SosFilter& filter, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  for (const auto& s : filter.sections) {
    double s1 = 0.0, s2 = 0.0;
    for (auto& v : y) {
      const double in = v;
      const double out = s.b0 * in + s1;
      s1 = s.b1 * in - s.a1 * out + s2;
      s2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

std::int64_t round_half_even(double v) { return static_cast<std::int64_t>(std::nearbyint(v)); }

std::size_t resampled_length(std::size_t n, double fs_old, double fs_new) {
  if (!(fs_old > 0.0 && fs_new > 0.0)) throw InvalidArgument("sampling rates must be positive");
  const std::int64_t m = round_half_even(static_cast<double>(n) * fs_new / fs_old);
  return static_cast<std::size_t>(std::max<std::int64_t>(m, 0));
}

namespace {

// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<std::complex<double>> rfft(std::vector<double> in) {
  const int n = static_cast<int>(in.size());
  std::vector<std::complex<double>> out(in.size() / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

// Unnormalized inverse of rfft for an output of length n.
std::vector<double> irfft(std::vector<std::complex<double>> in, std::size_t n) {
  std::vector<double> out(n);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()), out.data(),
                                FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

}  // namespace

std::vector<double> fft_resample(std::span<const double> x, double fs_old, double fs_new) {
  if (x.empty()) throw InvalidArgument("fft_resample: empty input");
  const std::size_t n = x.size();
  const std::size_t m = resampled_length(n, fs_old, fs_new);
  if (m == 0) throw InvalidArgument("fft_resample: output would be empty");
  if (m == n) return std::vector<double>(x.begin(), x.end());

  const auto spectrum = rfft(std::vector<double>(x.begin(), x.end()));
  std::vector<std::complex<double>> y(m / 2 + 1);
  const std::size_t keep = std::min(n, m);
  const std::size_t bins = std::min(keep / 2 + 1, y.size());
  std::copy_n(spectrum.begin(), bins, y.begin());
  if (keep % 2 == 0) {
    if (m < n) {
      y[keep / 2] *= 2.0;  // fold the discarded negative-frequency twin
    } else {
      y[keep / 2] *= 0.5;  // old Nyquist becomes an ordinary +/- pair
    }
  }
  auto out = irfft(std::move(y), m);
  const double s = 1.0 / static_cast<double>(n);  // irfft scale 1/m times amplitude m/n
  for (auto& v : out) v *= s;
  return out;
}

std::vector<std::vector<double>> apply_car(const std::vector<std::vector<double>>& data) {
  if (data.size() < 2) throw InvalidArgument("common average reference needs at least two channels");
  const std::size_t t = data.front().size();
  for (const auto& row : data)
    if (row.size() != t) throw InvalidArgument("channels differ in length");
  std::vector<double> mean(t, 0.0);
  for (const auto& row : data)
    for (std::size_t i = 0; i < t; ++i) mean[i] += row[i];
  const double inv = 1.0 / static_cast<double>(data.size());
  for (auto& m : mean) m *= inv;
  auto out = data;
  for (auto& row : out)
    for (std::size_t i = 0; i < t; ++i) row[i] -= mean[i];
  return out;
}

RawRecording preprocess(RawRecording rec, std::optional<double> target_fs) {
  rec.validate();
  rec = scale_to_microvolts(std::move(rec));
  constexpr double kResampleAbove = 200.0;
  if (target_fs && rec.sampling_rate > kResampleAbove && *target_fs != rec.sampling_rate) {
    if (*target_fs > rec.sampling_rate) throw InvalidArgument("preprocess only downsamples");
    const SosFilter aa = design_butterworth_lowpass(12, *target_fs / 2.0, rec.sampling_rate);
    for (auto& row : rec.data) row = fft_resample(apply_filter(aa, row), rec.sampling_rate, *target_fs);
    const double ratio = *target_fs / rec.sampling_rate;
    for (auto& e : rec.events) e.onset_sample = round_half_even(static_cast<double>(e.onset_sample) * ratio);
    rec.sampling_rate = *target_fs;
  }
  rec.data = apply_car(rec.data);
  return rec;
}

EpochResult extract_epochs(const RawRecording& rec, double t_start, double t_end,
                           const std::map<std::string, int>& label_map, const EpochProvenance& provenance) {
  if (!(t_start < t_end)) throw InvalidArgument("epoch window must have t_start < t_end");
  rec.validate();
  const std::int64_t offset = round_half_even(t_start * rec.sampling_rate);
  const std::int64_t length = round_half_even((t_end - t_start) * rec.sampling_rate);
  const auto total = static_cast<std::int64_t>(rec.samples());
  EpochResult result;
  for (std::size_t k = 0; k < rec.events.size(); ++k) {
    const auto& ev = rec.events[k];
    auto it = label_map.find(ev.code);
    if (it == label_map.end()) continue;
    const std::int64_t start = ev.onset_sample + offset;
    const std::int64_t end = start + length;
    if (start < 0 || end > total) {
      result.skipped.push_back({k, "window [" + std::to_string(start) + ", " + std::to_string(end) +
                                       ") outside recording of " + std::to_string(total) + " samples"});
      continue;
    }
    EpochedTrial trial;
    trial.sampling_rate = rec.sampling_rate;
    trial.label = it->second;
    trial.subject_id = provenance.subject_id;
    trial.session_id = provenance.session_id;
    trial.run_id = provenance.run_id;
    trial.window_span = {start, end};
    trial.data.reserve(rec.channels());
    for (const auto& row : rec.data) trial.data.emplace_back(row.begin() + start, row.begin() + end);
    result.trials.push_back(std::move(trial));
  }
  return result;
}

}  // namespace agtcnet::signal
