#include "declab/intervention.hpp"

#include <algorithm>
#include <cmath>

namespace declab {

const char* intervention_mode_name(InterventionMode m) {
  switch (m) {
    case InterventionMode::none: return "none";
    case InterventionMode::adaptive: return "adaptive";
    case InterventionMode::fixed_release: return "fixed_release";
    case InterventionMode::global_scale: return "global_scale";
    case InterventionMode::entropy_floor: return "entropy_floor";
  }
  throw UsageError("invalid intervention mode");
}

InterventionMode intervention_mode_from_name(const std::string& s) {
  if (s == "none") return InterventionMode::none;
  if (s == "adaptive") return InterventionMode::adaptive;
  if (s == "fixed_release") return InterventionMode::fixed_release;
  if (s == "global_scale") return InterventionMode::global_scale;
  if (s == "entropy_floor") return InterventionMode::entropy_floor;
  throw ConfigError("unknown intervention mode: " + s);
}

void InterventionConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0, 1]");
  if (!(threshold >= 0.0)) throw ConfigError("threshold must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(min_release_frac >= 0.0 && min_release_frac <= 1.0))
    throw ConfigError("min_release_frac must be in [0, 1]");
  if (!(force_release_frac >= min_release_frac && force_release_frac <= 1.0))
    throw ConfigError("force_release_frac must be in [min_release_frac, 1]");
  if (!(ramp_frac > 0.0 && ramp_frac <= 1.0)) throw ConfigError("ramp_frac must be in (0, 1]");
  if (!(fixed_release_frac >= 0.0 && fixed_release_frac <= 1.0))
    throw ConfigError("fixed_release_frac must be in [0, 1]");
  if (!(global_scale > 0.0 && global_scale <= 1.0))
    throw ConfigError("global_scale must be in (0, 1]");
  if (!(floor_h0 >= 0.0 && floor_h0 <= 1.0)) throw ConfigError("floor_h0 must be in [0, 1]");
  if (!(floor_lambda >= 0.0)) throw ConfigError("floor_lambda must be >= 0");
}

ReleaseController::ReleaseController(InterventionConfig cfg, int64_t total_steps) : cfg_(cfg) {
  cfg_.validate();
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  total_ = total_steps;
  min_step_ = llround(cfg_.min_release_frac * static_cast<double>(total_));
  force_step_ = llround(cfg_.force_release_frac * static_cast<double>(total_));
  fixed_step_ = llround(cfg_.fixed_release_frac * static_cast<double>(total_));
  ramp_steps_ = std::max<int64_t>(1, llround(cfg_.ramp_frac * static_cast<double>(total_)));
}

void ReleaseController::release_at(int64_t step, bool forced) {
  release_step_ = step;
  forced_ = forced;
}

double ReleaseController::multiplier(ParamGroup g, int64_t step) const {
  if (step < 0) throw UsageError("multiplier: step must be >= 0");
  switch (cfg_.mode) {
    case InterventionMode::none:
    case InterventionMode::entropy_floor:
      return 1.0;
    case InterventionMode::global_scale:
      return cfg_.global_scale;
    case InterventionMode::adaptive:
    case InterventionMode::fixed_release:
      break;
  }
  if (g != ParamGroup::upper_qk) return 1.0;
  if (!released() || step < release_step_) return cfg_.alpha;
  double t = static_cast<double>(step - release_step_) / static_cast<double>(ramp_steps_);
  t = std::min(1.0, t);
  return cfg_.alpha + (1.0 - cfg_.alpha) * t;
}

GroupMultipliers ReleaseController::multipliers(int64_t step) const {
  GroupMultipliers out;
  for (int g = 0; g < kParamGroupCount; ++g)
    out[static_cast<size_t>(g)] = multiplier(static_cast<ParamGroup>(g), step);
  return out;
}

bool ReleaseController::observe(int64_t step, double score) {
  if (step < 0) throw UsageError("observe: step must be >= 0");
  if (step <= last_observed_)
    throw UsageError("observe: evaluations must arrive in increasing step order");
  last_observed_ = step;
  history_.emplace_back(step, score);
  if (cfg_.mode == InterventionMode::none || cfg_.mode == InterventionMode::global_scale)
    return false;
  if (released()) return false;
  if (cfg_.mode == InterventionMode::fixed_release) {
    if (step >= fixed_step_) {
      release_at(step, false);
      return true;
    }
    return false;
  }
  if (score >= cfg_.threshold) {
    ++hits_;
  } else {
    hits_ = 0;
  }
  if (hits_ >= cfg_.patience && step >= min_step_) {
    release_at(step, false);
    return true;
  }
  if (step >= force_step_) {
    release_at(step, true);
    return true;
  }
  return false;
}

bool ReleaseController::penalty_active(int64_t step) const {
  if (cfg_.mode != InterventionMode::entropy_floor) return false;
  return !released() || step < release_step_;
}

const char* ReleaseController::phase_at(int64_t step) const {
  if (cfg_.mode == InterventionMode::none || cfg_.mode == InterventionMode::global_scale)
    return "open";
  if (!released() || step < release_step_) return "held";
  if (step - release_step_ < ramp_steps_) return "ramping";
  return "released";
}

}  // namespace declab
