#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace agtcnet::signal {

enum class Unit { volts, microvolts };

struct Event {
  std::int64_t onset_sample = 0;
  std::string code;
};

// Continuous multichannel recording, one row per channel.
struct RawRecording {
  std::vector<std::string> channel_labels;
  std::vector<std::vector<double>> data;
  double sampling_rate = 0.0;
  Unit unit = Unit::microvolts;
  std::vector<Event> events;

  std::size_t channels() const { return data.size(); }
  std::size_t samples() const { return data.empty() ? 0 : data.front().size(); }
  // Throws InvalidArgument when the row/label/rate invariants do not hold.
  void validate() const;
};

// Half-open sample interval in the post-resample timeline of its recording.
struct WindowSpan {
  std::int64_t start = 0;
  std::int64_t end = 0;
};

struct EpochedTrial {
  std::vector<std::vector<double>> data;  // channels x samples, microvolts
  double sampling_rate = 0.0;
  int label = 0;
  std::string subject_id;
  std::string session_id;
  std::string run_id;
  WindowSpan window_span;

  std::size_t channels() const { return data.size(); }
  std::size_t samples() const { return data.empty() ? 0 : data.front().size(); }
};

struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

struct SosFilter {
  std::vector<Biquad> sections;
  int order = 0;
  double cutoff_hz = 0.0;
  double sampling_rate_hz = 0.0;
};

RawRecording scale_to_microvolts(RawRecording rec);

// Digital Butterworth low-pass: analog prototype, prewarped cutoff, bilinear
// transform, one biquad per conjugate pole pair (plus a first-order section
// for odd orders), sections ordered by ascending pole Q.
SosFilter design_butterworth_lowpass(int order, double cutoff_hz, double sampling_rate_hz);

// Complex frequency response of the cascade at `freq_hz`.
std::complex<double> frequency_response(const SosFilter& filter, double freq_hz);

// Causal single pass through the cascade from zero state (direct form II
// transposed). Introduces the filter's phase delay; no compensation.
std::vector<double> apply_filter(const SosFilter& filter, std::span<const double> x);

// round-half-even(n * fs_new / fs_old).
std::size_t resampled_length(std::size_t n, double fs_old, double fs_new);

// Fourier-domain resampling with a rectangular spectral window: the spectrum
// is truncated or zero-padded, the shared Nyquist bin split or folded
// symmetrically, then inverted and rescaled by fs_new / fs_old.
std::vector<double> fft_resample(std::span<const double> x, double fs_old, double fs_new);

// Common average reference, accumulated in double precision.
std::vector<std::vector<double>> apply_car(const std::vector<std::vector<double>>& data);

// Scaling, then (for rates above 200 Hz with a target set) anti-alias filter
// at target/2 and resample, then CAR. Event onsets follow the resample.
RawRecording preprocess(RawRecording rec, std::optional<double> target_fs);

// Round-half-even of a real value to an integer.
std::int64_t round_half_even(double v);

struct EpochError {
  std::size_t event_index;
  std::string message;
};

struct EpochResult {
  std::vector<EpochedTrial> trials;
  std::vector<EpochError> skipped;
};

struct EpochProvenance {
  std::string subject_id;
  std::string session_id;
  std::string run_id;
};

// Cuts one epoch per mapped event. Windows extending past the recording are
// reported in `skipped` rather than thrown.
EpochResult extract_epochs(const RawRecording& rec, double t_start, double t_end,
                           const std::map<std::string, int>& label_map, const EpochProvenance& provenance = {});

}  // namespace agtcnet::signal
