#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace declab {

// Error taxonomy. Config/data/format/usage map to distinct CLI exit codes;
// NumericError is the NaN/Inf abort path.
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct FormatError : std::runtime_error { using std::runtime_error::runtime_error; };
struct UsageError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };

// mt19937_64 is fully specified by the standard; the std:: distributions are
// not, so draws go through the hand-rolled helpers below to keep streams
// reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // unbiased integer in [0, bound)
  uint64_t uniform_below(uint64_t bound) {
    uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do { x = eng_(); } while (x >= limit);
    return x % bound;
  }

  // standard normal, Marsaglia polar with cached spare
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Forward-op finiteness guard (on by default; oracles that intentionally
// produce extreme values can switch it off locally).
bool finite_checks_enabled();
void set_finite_checks(bool on);

std::string format_shape(const std::vector<int64_t>& shape);

}  // namespace declab
