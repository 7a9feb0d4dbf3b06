#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace agtcnet::io {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked little-endian reader. `fail` is called with a message and
// the offending offset when the buffer is too short; it must throw.
class ByteReader {
 public:
  using FailFn = void (*)(const std::string&, std::size_t);
  ByteReader(const std::vector<std::uint8_t>& bytes, FailFn fail) : bytes_(bytes), fail_(fail) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) fail_(std::string("truncated while reading ") + what, pos_);
  }
  const std::vector<std::uint8_t>& bytes_;
  FailFn fail_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// SHA-1 of "blob <size>\0" + content, hex encoded: the id git would give the
// file.
std::string git_blob_id(const std::vector<std::uint8_t>& bytes);

// FNV-1a 64-bit hash, hex encoded.
std::string fnv1a_hex(std::string_view text);

}  // namespace agtcnet::io
