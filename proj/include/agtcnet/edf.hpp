#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agtcnet/signal.hpp"

namespace agtcnet::io {

struct EdfSignalHeader {
  std::string label;
  std::string transducer;
  std::string physical_dimension;
  double physical_min = 0.0;
  double physical_max = 0.0;
  std::int32_t digital_min = -32768;
  std::int32_t digital_max = 32767;
  std::string prefilter;
  std::size_t samples_per_record = 0;
  std::string reserved;

  bool is_annotation() const { return label == "EDF Annotations"; }
  double to_physical(std::int16_t digital) const;
};

struct EdfHeader {
  std::string version = "0";
  std::string patient;
  std::string recording;
  std::string start_date = "01.01.01";  // dd.mm.yy
  std::string start_time = "00.00.00";  // hh.mm.ss
  std::size_t header_bytes = 0;
  std::string reserved;  // "EDF+C" / "EDF+D" for EDF+
  std::int64_t records = 0;
  double record_duration = 1.0;  // seconds
  std::vector<EdfSignalHeader> signals;
};

// One TAL entry.
struct EdfAnnotation {
  double onset = 0.0;  // seconds from recording start
  std::optional<double> duration;
  std::string text;
};

struct EdfFile {
  EdfHeader header;
  // Digital samples of every signal, annotation signals included, each the
  // concatenation of its per-record blocks.
  std::vector<std::vector<std::int16_t>> digital;
  // Parsed TAL annotations, timekeeping (empty-text) entries dropped.
  std::vector<EdfAnnotation> annotations;
};

// Parses one TAL block (the bytes of an annotation signal in one record).
// `base_offset` is the file offset of the block, used in error messages.
std::vector<EdfAnnotation> parse_tals(std::string_view block, std::int64_t base_offset = 0);

EdfFile parse_edf(const std::vector<std::uint8_t>& bytes);
EdfFile read_edf_file(const std::filesystem::path& path);

// Ordinary signals as physical rows, annotations as events at
// round-half-even(onset * fs). All ordinary signals must share one rate.
signal::RawRecording edf_to_recording(const EdfFile& edf);
signal::RawRecording read_edf(const std::filesystem::path& path);

// Serializes an EDF file; header_bytes and records are recomputed from the
// content. Annotation signals are written from `digital` verbatim.
std::vector<std::uint8_t> serialize_edf(const EdfFile& edf);
void write_edf(const std::filesystem::path& path, const EdfFile& edf);

// Encodes annotations as one TAL block per record, the first TAL of each
// record being the timekeeping entry, padded to `bytes_per_record`.
std::vector<std::int16_t> encode_tal_signal(const std::vector<std::vector<EdfAnnotation>>& per_record,
                                            double record_duration, std::size_t bytes_per_record);

}  // namespace agtcnet::io
