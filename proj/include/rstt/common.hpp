#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rstt {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Shape/contract violations (mismatched dimensions, bad arguments).
class dim_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration (presets, heads/channels, unknown modes or keys).
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or other numerical failures detected at runtime.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline void check_dims(bool ok, const std::string& msg) {
  if (!ok) throw dim_error(msg);
}

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw config_error(msg);
}

// ---------------------------------------------------------------------------
// Global debug toggles.  Finite checks make every op validate its output and
// throw numeric_error naming the op; they are off by default (verification
// harness turns them on).  The sabotage hook corrupts one gradient on purpose
// so the gradient-check harness can prove it detects broken backward passes.
// ---------------------------------------------------------------------------

inline bool& finite_checks_flag() {
  static bool v = false;
  return v;
}
inline bool finite_checks_enabled() { return finite_checks_flag(); }
inline void set_finite_checks(bool on) { finite_checks_flag() = on; }

inline bool& gradient_sabotage_flag() {
  static bool v = false;
  return v;
}
inline bool gradient_sabotage_enabled() { return gradient_sabotage_flag(); }
inline void set_gradient_sabotage(bool on) { gradient_sabotage_flag() = on; }

// ---------------------------------------------------------------------------
// Deterministic RNG.  Normal deviates come from an explicit Box-Muller so the
// stream does not depend on the standard library's distribution internals.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Mixes several values into one seed (used to derive per-iteration,
/// per-slot sample seeds from a base seed).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  std::uint64_t s = a;
  splitmix64(s);
  s ^= b + 0x9e3779b97f4a7c15ULL;
  splitmix64(s);
  s ^= c + 0xc2b2ae3d27d4eb4fULL;
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform in [0, 1).
  double uniform() {
    return (gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  Index uniform_int(Index lo, Index hi) {  // inclusive bounds
    return lo + static_cast<Index>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  double normal() {
    // Box-Muller, cos branch only.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Normal(0, sigma) truncated to |z| <= 2 sigma by rejection.
  double trunc_normal(double sigma) {
    double z = normal();
    while (z < -2.0 || z > 2.0) z = normal();
    return z * sigma;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace rstt
