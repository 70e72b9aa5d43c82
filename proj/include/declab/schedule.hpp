#pragma once

#include <cstdint>

#include "declab/common.hpp"

namespace declab {

// Linear warmup to the peak, then cosine decay to final_frac * peak.
struct ScheduleConfig {
  double peak_lr = 0.0;
  int64_t total_steps = 0;
  double warmup_frac = 0.02;
  double final_frac = 0.1;
  void validate() const;
};

class Schedule {
 public:
  explicit Schedule(ScheduleConfig cfg);
  double lr_at(int64_t step) const;  // step counts from 0; clamps past the end
  int64_t warmup_steps() const { return warmup_; }
  const ScheduleConfig& config() const { return cfg_; }

 private:
  ScheduleConfig cfg_;
  int64_t warmup_ = 0;
};

}  // namespace declab
