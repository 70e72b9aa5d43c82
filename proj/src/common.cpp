#include "declab/common.hpp"

#include <atomic>
#include <sstream>

namespace declab {

namespace {
std::atomic<bool> g_finite_checks{true};
}

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }
void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }

std::string format_shape(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace declab
