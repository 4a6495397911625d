#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace umono {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents. Message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf produced by a forward op, or a failed numeric precondition.
struct NumericError : Error {
  using Error::Error;
};

// Malformed file content (NetPBM, checkpoint container, manifest).
struct ParseError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

namespace detail {
inline std::atomic<bool>& finite_check_flag() {
  static std::atomic<bool> flag{true};
  return flag;
}
}  // namespace detail

// Forward ops scan their outputs for NaN/Inf when enabled.
inline void set_finite_checks(bool on) { detail::finite_check_flag().store(on); }
inline bool finite_checks_enabled() { return detail::finite_check_flag().load(); }

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

}  // namespace umono
