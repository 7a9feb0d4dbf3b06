#include "agtcnet/edf.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>

#include "agtcnet/binary_io.hpp"
#include "agtcnet/error.hpp"

namespace agtcnet::io {

double EdfSignalHeader::to_physical(std::int16_t digital) const {
  return (static_cast<double>(digital) - digital_min) * (physical_max - physical_min) /
             static_cast<double>(digital_max - digital_min) +
         physical_min;
}

namespace {

constexpr char kTalOnsetEnd = '\x14';
constexpr char kTalDuration = '\x15';

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(' ');
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(std::string_view text, const char* what, std::int64_t offset) {
  const std::string s = trim(text);
  double v = 0.0;
  const char* begin = s.data();
  if (!s.empty() && s.front() == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(std::string("non-numeric ") + what + " '" + s + "'", offset);
  }
  return v;
}

std::int64_t parse_int(std::string_view text, const char* what, std::int64_t offset) {
  const std::string s = trim(text);
  std::int64_t v = 0;
  const char* begin = s.data();
  if (!s.empty() && s.front() == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(std::string("non-numeric ") + what + " '" + s + "'", offset);
  }
  return v;
}

// Fixed-width ASCII field cursor over the header.
class FieldReader {
 public:
  FieldReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  std::string_view take(std::size_t width, const char* what) {
    if (bytes_.size() - pos_ < width) {
      throw ParseError(std::string("file too short for header field ") + what, static_cast<std::int64_t>(pos_));
    }
    std::string_view s(reinterpret_cast<const char*>(bytes_.data() + pos_), width);
    last_ = pos_;
    pos_ += width;
    return s;
  }
  std::int64_t last() const { return static_cast<std::int64_t>(last_); }
  std::int64_t take_int(std::size_t width, const char* what) {
    const auto text = take(width, what);
    return parse_int(text, what, last());
  }
  double take_double(std::size_t width, const char* what) {
    const auto text = take(width, what);
    return parse_double(text, what, last());
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0, last_ = 0;
};

std::string format_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Fits a number into an 8-character EDF field.
std::string fit_number(double v) {
  std::string s = format_number(v);
  for (int prec = 8; s.size() > 8 && prec > 0; --prec) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    s = buf;
  }
  if (s.size() > 8) throw InvalidArgument("value " + format_number(v) + " does not fit an EDF header field");
  return s;
}

void put_field(std::string& out, const std::string& s, std::size_t width) {
  if (s.size() > width) throw InvalidArgument("EDF header field '" + s + "' exceeds " + std::to_string(width) + " chars");
  out += s;
  out.append(width - s.size(), ' ');
}

}  // namespace

std::vector<EdfAnnotation> parse_tals(std::string_view block, std::int64_t base_offset) {
  std::vector<EdfAnnotation> out;
  std::size_t pos = 0;
  while (pos < block.size()) {
    if (block[pos] == '\0') {
      ++pos;
      continue;
    }
    const std::int64_t at = base_offset + static_cast<std::int64_t>(pos);
    if (block[pos] != '+' && block[pos] != '-') throw ParseError("TAL does not start with a signed onset", at);
    const std::size_t end = block.find('\0', pos);
    if (end == std::string_view::npos) throw ParseError("unterminated TAL", at);
    const std::string_view tal = block.substr(pos, end - pos);
    const std::size_t mark = tal.find(kTalOnsetEnd);
    if (mark == std::string_view::npos) throw ParseError("TAL onset not followed by 0x14", at);
    const std::string_view head = tal.substr(0, mark);
    const std::size_t dur = head.find(kTalDuration);
    const double onset = parse_double(head.substr(0, dur), "TAL onset", at);
    std::optional<double> duration;
    if (dur != std::string_view::npos) duration = parse_double(head.substr(dur + 1), "TAL duration", at);
    std::string_view rest = tal.substr(mark + 1);
    while (!rest.empty()) {
      const std::size_t sep = rest.find(kTalOnsetEnd);
      const std::string_view text = rest.substr(0, sep);
      if (!text.empty()) out.push_back({onset, duration, std::string(text)});
      if (sep == std::string_view::npos) break;
      rest = rest.substr(sep + 1);
    }
    pos = end + 1;
  }
  return out;
}

EdfFile parse_edf(const std::vector<std::uint8_t>& bytes) {
  FieldReader f(bytes);
  EdfFile edf;
  EdfHeader& h = edf.header;
  h.version = trim(f.take(8, "version"));
  h.patient = trim(f.take(80, "patient"));
  h.recording = trim(f.take(80, "recording"));
  h.start_date = trim(f.take(8, "start date"));
  h.start_time = trim(f.take(8, "start time"));
  const std::int64_t header_bytes = f.take_int(8, "header byte count");
  const std::int64_t header_bytes_at = f.last();
  h.reserved = trim(f.take(44, "reserved"));
  h.records = f.take_int(8, "record count");
  h.record_duration = f.take_double(8, "record duration");
  const std::int64_t ns = f.take_int(4, "signal count");
  if (ns <= 0 || ns > 4096) throw ParseError("implausible signal count " + std::to_string(ns), f.last());
  if (header_bytes != 256 + 256 * ns) {
    throw ParseError("header byte count " + std::to_string(header_bytes) + " != 256 + 256 * " + std::to_string(ns),
                     header_bytes_at);
  }
  h.header_bytes = static_cast<std::size_t>(header_bytes);
  const auto n = static_cast<std::size_t>(ns);
  h.signals.resize(n);
  for (auto& s : h.signals) s.label = trim(f.take(16, "label"));
  for (auto& s : h.signals) s.transducer = trim(f.take(80, "transducer"));
  for (auto& s : h.signals) s.physical_dimension = trim(f.take(8, "physical dimension"));
  for (auto& s : h.signals) s.physical_min = f.take_double(8, "physical minimum");
  for (auto& s : h.signals) s.physical_max = f.take_double(8, "physical maximum");
  std::vector<std::int64_t> dig_at(n);
  for (std::size_t i = 0; i < n; ++i) {
    h.signals[i].digital_min = static_cast<std::int32_t>(f.take_int(8, "digital minimum"));
    dig_at[i] = f.last();
  }
  for (auto& s : h.signals) s.digital_max = static_cast<std::int32_t>(f.take_int(8, "digital maximum"));
  for (auto& s : h.signals) s.prefilter = trim(f.take(80, "prefilter"));
  for (auto& s : h.signals) {
    const std::int64_t spr = f.take_int(8, "samples per record");
    if (spr <= 0) throw ParseError("samples per record must be positive", f.last());
    s.samples_per_record = static_cast<std::size_t>(spr);
  }
  for (auto& s : h.signals) s.reserved = trim(f.take(32, "signal reserved"));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = h.signals[i];
    if (s.digital_min >= s.digital_max) throw ParseError("digital minimum not below digital maximum for '" + s.label + "'", dig_at[i]);
    if (s.physical_min == s.physical_max && !s.is_annotation()) {
      throw ParseError("zero physical range for '" + s.label + "'", dig_at[i]);
    }
  }
  if (!(h.record_duration >= 0.0)) throw ParseError("negative record duration", 244);

  std::size_t record_samples = 0;
  for (const auto& s : h.signals) record_samples += s.samples_per_record;
  const std::size_t record_bytes = 2 * record_samples;
  const std::size_t data_bytes = bytes.size() - h.header_bytes;
  if (h.records < 0) h.records = static_cast<std::int64_t>(data_bytes / record_bytes);  // -1: unknown
  if (data_bytes != static_cast<std::size_t>(h.records) * record_bytes) {
    throw ParseError("data section holds " + std::to_string(data_bytes) + " bytes, header implies " +
                         std::to_string(h.records) + " records of " + std::to_string(record_bytes) + " bytes",
                     static_cast<std::int64_t>(h.header_bytes));
  }

  edf.digital.resize(n);
  for (std::size_t i = 0; i < n; ++i) edf.digital[i].reserve(h.signals[i].samples_per_record * h.records);
  std::size_t pos = h.header_bytes;
  for (std::int64_t r = 0; r < h.records; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t spr = h.signals[i].samples_per_record;
      const std::size_t block_at = pos;
      for (std::size_t k = 0; k < spr; ++k, pos += 2) {
        std::int16_t v;
        std::memcpy(&v, bytes.data() + pos, 2);
        edf.digital[i].push_back(v);
      }
      if (h.signals[i].is_annotation()) {
        const std::string_view block(reinterpret_cast<const char*>(bytes.data() + block_at), 2 * spr);
        auto anns = parse_tals(block, static_cast<std::int64_t>(block_at));
        edf.annotations.insert(edf.annotations.end(), anns.begin(), anns.end());
      }
    }
  }
  return edf;
}

EdfFile read_edf_file(const std::filesystem::path& path) {
  try {
    return parse_edf(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

signal::RawRecording edf_to_recording(const EdfFile& edf) {
  signal::RawRecording rec;
  const auto& h = edf.header;
  std::optional<std::size_t> spr;
  std::optional<signal::Unit> unit;
  for (std::size_t i = 0; i < h.signals.size(); ++i) {
    const auto& s = h.signals[i];
    if (s.is_annotation()) continue;
    if (spr && *spr != s.samples_per_record) throw DataError("signals with different sampling rates are not supported");
    spr = s.samples_per_record;
    double scale = 1.0;
    signal::Unit u = signal::Unit::microvolts;
    const std::string& d = s.physical_dimension;
    if (d == "V") {
      u = signal::Unit::volts;
    } else if (d == "mV") {
      scale = 1e3;
    } else if (d == "nV") {
      scale = 1e-3;
    } else if (!(d.empty() || d == "uV" || d == "\xC2\xB5V" || d == "\xB5V")) {
      throw DataError("unsupported physical dimension '" + d + "' for '" + s.label + "'");
    }
    if (unit && *unit != u) throw DataError("signals mix volts and microvolts");
    unit = u;
    std::vector<double> row;
    row.reserve(edf.digital[i].size());
    for (std::int16_t v : edf.digital[i]) row.push_back(s.to_physical(v) * scale);
    rec.channel_labels.push_back(s.label);
    rec.data.push_back(std::move(row));
  }
  if (!spr) throw DataError("EDF file has no ordinary signals");
  if (!(h.record_duration > 0.0)) throw DataError("record duration must be positive for sampled signals");
  rec.sampling_rate = static_cast<double>(*spr) / h.record_duration;
  rec.unit = *unit;
  for (const auto& a : edf.annotations) rec.events.push_back({signal::round_half_even(a.onset * rec.sampling_rate), a.text});
  return rec;
}

signal::RawRecording read_edf(const std::filesystem::path& path) { return edf_to_recording(read_edf_file(path)); }

std::vector<std::uint8_t> serialize_edf(const EdfFile& edf) {
  const auto& h = edf.header;
  const std::size_t n = h.signals.size();
  if (edf.digital.size() != n) throw InvalidArgument("EDF writer: one digital row per signal required");
  std::size_t records = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t spr = h.signals[i].samples_per_record;
    if (spr == 0 || edf.digital[i].size() % spr != 0) throw InvalidArgument("EDF writer: partial data record");
    const std::size_t r = edf.digital[i].size() / spr;
    if (i > 0 && r != records) throw InvalidArgument("EDF writer: signals cover different record counts");
    records = r;
  }
  std::string head;
  put_field(head, h.version, 8);
  put_field(head, h.patient, 80);
  put_field(head, h.recording, 80);
  put_field(head, h.start_date, 8);
  put_field(head, h.start_time, 8);
  put_field(head, std::to_string(256 * (n + 1)), 8);
  put_field(head, h.reserved, 44);
  put_field(head, std::to_string(records), 8);
  put_field(head, fit_number(h.record_duration), 8);
  put_field(head, std::to_string(n), 4);
  for (const auto& s : h.signals) put_field(head, s.label, 16);
  for (const auto& s : h.signals) put_field(head, s.transducer, 80);
  for (const auto& s : h.signals) put_field(head, s.physical_dimension, 8);
  for (const auto& s : h.signals) put_field(head, fit_number(s.physical_min), 8);
  for (const auto& s : h.signals) put_field(head, fit_number(s.physical_max), 8);
  for (const auto& s : h.signals) put_field(head, std::to_string(s.digital_min), 8);
  for (const auto& s : h.signals) put_field(head, std::to_string(s.digital_max), 8);
  for (const auto& s : h.signals) put_field(head, s.prefilter, 80);
  for (const auto& s : h.signals) put_field(head, std::to_string(s.samples_per_record), 8);
  for (const auto& s : h.signals) put_field(head, s.reserved, 32);
  ByteWriter w;
  w.put_bytes(head);
  for (std::size_t r = 0; r < records; ++r)
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t spr = h.signals[i].samples_per_record;
      for (std::size_t k = 0; k < spr; ++k) w.put<std::int16_t>(edf.digital[i][r * spr + k]);
    }
  return w.bytes();
}

void write_edf(const std::filesystem::path& path, const EdfFile& edf) { write_file(path, serialize_edf(edf)); }

std::vector<std::int16_t> encode_tal_signal(const std::vector<std::vector<EdfAnnotation>>& per_record,
                                            double record_duration, std::size_t bytes_per_record) {
  if (bytes_per_record % 2 != 0) throw InvalidArgument("TAL block size must be even");
  std::vector<std::int16_t> out;
  for (std::size_t r = 0; r < per_record.size(); ++r) {
    std::string block = "+" + format_number(static_cast<double>(r) * record_duration) + "\x14\x14" + '\0';
    for (const auto& a : per_record[r]) {
      block += (a.onset < 0 ? "" : "+") + format_number(a.onset);
      if (a.duration) block += kTalDuration + format_number(*a.duration);
      block += kTalOnsetEnd + a.text + kTalOnsetEnd + '\0';
    }
    if (block.size() > bytes_per_record) {
      throw InvalidArgument("annotations of record " + std::to_string(r) + " need " + std::to_string(block.size()) +
                            " bytes, block holds " + std::to_string(bytes_per_record));
    }
    block.resize(bytes_per_record, '\0');
    for (std::size_t k = 0; k < bytes_per_record; k += 2) {
      std::int16_t v;
      std::memcpy(&v, block.data() + k, 2);
      out.push_back(v);
    }
  }
  return out;
}

}  // namespace agtcnet::io
