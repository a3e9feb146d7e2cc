#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rtlab::util {

// Round-trip-safe decimal rendering (17 significant digits, %g style).
std::string format_g17(double v);

// FNV-1a over raw bytes; used for content digests in manifests.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64(const std::string& s);
std::string hex64(std::uint64_t v);

std::string read_file(const std::string& path);           // throws on failure
void write_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);
std::uint64_t file_digest(const std::string& path);       // FNV-1a of bytes

// Plain-text key=value config: '#' starts a comment, blank lines ignored,
// later keys override earlier ones. Values keep internal whitespace.
class KeyValue {
 public:
  static KeyValue parse(const std::string& text);
  static KeyValue load(const std::string& path);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;   // throws if missing
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long long value);

  // Deterministic serialization: keys in sorted order, one per line.
  std::string serialize() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

// Worker-count resolution: RT_LAB_THREADS caps the pool, default 1.
int worker_count();

}  // namespace rtlab::util
