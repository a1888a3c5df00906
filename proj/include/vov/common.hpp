#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vov {

using Vec = std::vector<double>;

// Every failure the library reports derives from vov::Error so callers can
// catch one type at the CLI boundary and map it to an exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };   // mismatched vector lengths
struct DomainError : Error { using Error::Error; };      // argument outside the valid range
struct NumericError : Error { using Error::Error; };     // NaN/Inf where finite values are required
struct ConfigError : Error { using Error::Error; };      // bad or inconsistent configuration
struct FormatError : Error { using Error::Error; };      // malformed file or stream layout
struct IntegrityError : Error { using Error::Error; };   // pieces that must agree do not
struct ModelError : Error { using Error::Error; };       // entropy model in an unusable state
struct IoError : Error { using Error::Error; };          // filesystem failures
struct TrainingError : Error { using Error::Error; };    // optimization diverged

// Corrupted entropy-coded payloads report where decoding failed.
struct DecodeError : Error {
  size_t byte_offset;
  DecodeError(const std::string& what, size_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
};

inline void require_same_size(const Vec& a, const Vec& b, const char* where) {
  if (a.size() != b.size())
    throw DimensionError(std::string(where) + ": size mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
}

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double squared_norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double l2_norm(const Vec& v) { return std::sqrt(squared_norm(v)); }

inline double squared_distance(const Vec& a, const Vec& b) {
  require_same_size(a, b, "squared_distance");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

constexpr double kPi = 3.14159265358979323846;

inline double psnr_db(double mse, double peak = 1.0) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace vov
