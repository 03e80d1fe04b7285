#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace adua {

// Error taxonomy. The CLI maps these onto exit codes, so keep the split
// meaningful: ConfigError/DataError/SchemaError are "your input is wrong",
// the rest are "the run went wrong".
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent configuration (unknown keys, bad ranges).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed corpus files, out-of-range token ids, empty inputs.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor shape mismatches. The message always carries the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API preconditions violated by the caller (non-scalar backward, all-masked
// loss, step outside a schedule).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Numerical failures during optimization (non-finite loss, NaN parameters).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// A gradient reached a parameter outside the phase's trainable set.
class FreezingViolation : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

// Checkpoint or bundle files that fail structural validation: bad magic,
// version, checksum, dtype, or a fingerprint that does not match.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Geometry too degenerate for the requested projection (all points equal).
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

// Filesystem failures (unreadable path, write error).
class IoError : public Error {
 public:
  using Error::Error;
};

// Reserved token ids shared by every vocabulary. All real words start at
// kFirstWordId.
using TokenId = std::int32_t;
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kMaskId = 2;
inline constexpr TokenId kBosId = 3;
inline constexpr TokenId kFirstWordId = 4;

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// SplitMix64 finalizer. Used to derive independent substream seeds from a
// master seed plus a salt (usually a hashed name), so that creating tensors
// or corpora in a different order cannot shift anyone else's random draws.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return mix64(seed ^ mix64(salt));
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return derive_seed(seed, fnv1a64(name));
}

enum class Precision { kSingle, kDouble };

inline const char* to_string(Precision p) {
  return p == Precision::kSingle ? "single" : "double";
}

// Compact, locale-independent float formatting for CSV and report files.
inline std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace adua
