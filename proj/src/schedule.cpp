#include "declab/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace declab {

void ScheduleConfig::validate() const {
  if (peak_lr <= 0.0) throw ConfigError("peak_lr must be positive");
  if (total_steps < 2) throw ConfigError("total_steps must be >= 2");
  if (warmup_frac < 0.0 || warmup_frac >= 1.0) throw ConfigError("warmup_frac must be in [0,1)");
  if (final_frac < 0.0 || final_frac > 1.0) throw ConfigError("final_frac must be in [0,1]");
}

Schedule::Schedule(ScheduleConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  warmup_ = std::max<int64_t>(1, std::llround(cfg_.warmup_frac * static_cast<double>(cfg_.total_steps)));
  if (warmup_ >= cfg_.total_steps) throw ConfigError("warmup consumes the whole schedule");
}

double Schedule::lr_at(int64_t step) const {
  if (step < 0) throw UsageError("negative schedule step");
  double floor = cfg_.final_frac * cfg_.peak_lr;
  if (step <= warmup_)
    return cfg_.peak_lr * static_cast<double>(step) / static_cast<double>(warmup_);
  if (step >= cfg_.total_steps) return floor;
  double t = static_cast<double>(step - warmup_) / static_cast<double>(cfg_.total_steps - warmup_);
  return floor + (cfg_.peak_lr - floor) * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace declab
