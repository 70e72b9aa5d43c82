#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "declab/common.hpp"
#include "declab/model.hpp"

namespace declab {

// Learning-rate controls on the decoder during training.
//   none          baseline, every multiplier 1
//   adaptive      upper q/k held at alpha until the copy-alignment release rule fires
//   fixed_release same ramp, but the release point is a fixed fraction of the run
//   global_scale  one constant multiplier on every group for the whole run
//   entropy_floor multipliers stay 1; an attention-entropy hinge is added to the
//                 loss instead, and shuts off under the same release rule
enum class InterventionMode { none, adaptive, fixed_release, global_scale, entropy_floor };

const char* intervention_mode_name(InterventionMode m);
InterventionMode intervention_mode_from_name(const std::string& s);

struct InterventionConfig {
  InterventionMode mode = InterventionMode::adaptive;
  double alpha = 0.25;
  double threshold = 0.005;   // copy-alignment level that counts as a hit
  int64_t patience = 3;       // consecutive hits required to release
  double min_release_frac = 0.03;
  double force_release_frac = 0.12;
  double ramp_frac = 0.01;    // ramp length, as a fraction of total steps
  double fixed_release_frac = 0.06;
  double global_scale = 0.5;
  double floor_h0 = 0.80;     // normalized-entropy floor
  double floor_lambda = 0.10; // hinge weight
  void validate() const;
};

using GroupMultipliers = std::array<double, kParamGroupCount>;

// Release state machine. All transitions happen in observe(), which the
// training loop calls once per evaluation (after that step's update), in
// increasing step order. multiplier() is a pure read of the current state:
// releasing at evaluation step s leaves step s at alpha and starts the
// linear ramp on the next step.
class ReleaseController {
 public:
  ReleaseController(InterventionConfig cfg, int64_t total_steps);

  double multiplier(ParamGroup g, int64_t step) const;
  GroupMultipliers multipliers(int64_t step) const;
  double upper_qk_multiplier(int64_t step) const {
    return multiplier(ParamGroup::upper_qk, step);
  }

  // Feed one evaluation's copy-alignment score. Returns true when this call
  // released. Hits count from the first evaluation; the minimum-progress gate
  // applies only to the transition. Forced release at force_release_frac
  // happens here regardless of the score history.
  bool observe(int64_t step, double score);

  // True while an entropy_floor run should add the hinge term to the loss.
  bool penalty_active(int64_t step) const;

  bool released() const { return release_step_ >= 0; }
  bool forced() const { return forced_; }
  int64_t release_step() const { return release_step_; }
  int64_t hits() const { return hits_; }
  int64_t ramp_steps() const { return ramp_steps_; }
  int64_t total_steps() const { return total_; }
  const char* phase_at(int64_t step) const;  // open | held | ramping | released
  const InterventionConfig& config() const { return cfg_; }
  const std::vector<std::pair<int64_t, double>>& history() const { return history_; }

 private:
  void release_at(int64_t step, bool forced);

  InterventionConfig cfg_;
  int64_t total_ = 0;
  int64_t min_step_ = 0;
  int64_t force_step_ = 0;
  int64_t fixed_step_ = 0;
  int64_t ramp_steps_ = 1;
  int64_t hits_ = 0;
  int64_t release_step_ = -1;
  int64_t last_observed_ = -1;
  bool forced_ = false;
  std::vector<std::pair<int64_t, double>> history_;
};

}  // namespace declab
