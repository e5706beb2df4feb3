#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nav {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint exists but does not match the requested architecture/config.
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

#define NAV_CHECK(cond, exc, msg)       \
  do {                                  \
    if (!(cond)) throw exc(msg);        \
  } while (0)

#define NAV_CHECK_SHAPE(cond, msg) NAV_CHECK(cond, ::nav::ShapeError, msg)
#define NAV_CHECK_CONFIG(cond, msg) NAV_CHECK(cond, ::nav::ConfigError, msg)
#define NAV_CHECK_IO(cond, msg) NAV_CHECK(cond, ::nav::IoError, msg)

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic RNG with pinned distribution arithmetic so that seeded runs
/// reproduce bit-for-bit across platforms (std distributions are not pinned
/// by the standard; these transforms are).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    if (hi <= lo) return lo;
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // Rejection sampling over the largest multiple of span.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + static_cast<int>(v % span);
  }

  /// Standard normal, Box-Muller (no cached spare: state stays simple).
  double normal() {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  /// Normal truncated to +-2 sigma, then scaled; used for weight init.
  double trunc_normal(double stddev) {
    double z;
    do {
      z = normal();
    } while (z < -2.0 || z > 2.0);
    return z * stddev;
  }

  template <class V>
  void shuffle(V& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derive an independent stream; deterministic in (current state, id).
  Rng fork(std::uint64_t stream_id) {
    return Rng(next_u64() ^ splitmix64(stream_id));
  }

 private:
  std::mt19937_64 gen_;
};

constexpr double kPi = 3.14159265358979323846;

/// Wrap an angle into [0, 2*pi).
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a;
}

/// Smallest absolute difference between two angles, in [0, pi].
inline double angle_diff(double a, double b) {
  double d = std::fabs(wrap_angle(a) - wrap_angle(b));
  if (d > kPi) d = 2.0 * kPi - d;
  return d;
}

}  // namespace nav
