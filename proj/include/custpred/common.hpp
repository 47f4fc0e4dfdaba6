#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace custpred {

// Error hierarchy. `DataError` covers bad inputs and configuration (CLI exit
// code 2); everything else derived from `Error` is treated as internal.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class EmptyData : public DataError {
 public:
  using DataError::DataError;
};

class DimError : public Error {
 public:
  using Error::Error;
};

// 64-bit FNV-1a. Used for config fingerprints and artifact hashes, so the
// value must not depend on platform or standard library.
class Fnv1a {
 public:
  Fnv1a& add(std::string_view s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= kPrime;
    }
    return *this;
  }
  Fnv1a& add_bytes(const void* data, std::size_t n) {
    auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= kPrime;
    }
    return *this;
  }
  std::uint64_t value() const { return h_; }

 private:
  static constexpr std::uint64_t kOffset = 14695981039346656037ull;
  static constexpr std::uint64_t kPrime = 1099511628211ull;
  std::uint64_t h_ = kOffset;
};

std::string hex64(std::uint64_t v);

// Seeded random stream. The engine is mt19937_64 (fully specified by the
// standard); the distributions are implemented here because the standard
// library's are implementation-defined and would break cross-platform
// reproducibility of generated datasets.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Independent stream for (seed, stream_id), e.g. one per customer.
  static Rng for_stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next() { return eng_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Uniform integer in [lo, hi] (inclusive).
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  // Index drawn from an (unnormalized, non-negative) weight vector.
  std::size_t categorical(std::span<const double> weights);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Plain-text `key = value` configuration. Lines starting with '#' and blank
// lines are ignored. Keys are consumed as they are read so that leftovers can
// be reported as unknown.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, std::string_view origin = "<string>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  // Each accessor marks the key consumed and throws ConfigError on a bad value.
  std::string take_string(const std::string& key, std::string fallback);
  double take_double(const std::string& key, double fallback);
  std::int64_t take_int(const std::string& key, std::int64_t fallback);
  std::vector<double> take_doubles(const std::string& key, std::vector<double> fallback);
  std::vector<std::int64_t> take_ints(const std::string& key, std::vector<std::int64_t> fallback);

  // Throws ConfigError naming every key not consumed by a take_* call whose
  // name starts with `prefix` (all keys when prefix is empty).
  void reject_unknown(const std::string& prefix = "") const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> consumed_;
  std::string origin_;
};

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

}  // namespace custpred
