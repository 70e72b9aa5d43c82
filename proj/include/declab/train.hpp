#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "declab/data.hpp"
#include "declab/intervention.hpp"
#include "declab/model.hpp"
#include "declab/optimizer.hpp"
#include "declab/probes.hpp"
#include "declab/schedule.hpp"

namespace declab {

// One training run: cosine schedule, AdamW with per-group multipliers, the
// release controller, periodic probe evaluations, and an append-only JSONL
// metrics log. Everything is deterministic given the model seed and the
// stream's batch seed; no timestamps or environment state enter the log.
struct TrainConfig {
  std::string run_id = "run";
  std::string arm = "default";  // grouping label echoed into the meta record
  uint64_t seed = 0;            // pairing label echoed into the meta record
  std::string out_dir;  // empty keeps the run in memory (no log, no checkpoints)
  ScheduleConfig schedule;
  OptimizerConfig optimizer;
  InterventionConfig intervention;
  int64_t eval_every = 0;    // in steps; 0 derives from eval_frac
  double eval_frac = 0.005;  // evaluation cadence as a fraction of total steps
  probes::ProbeConfig probes;
  std::vector<double> checkpoint_fracs;
  double stop_frac = 1.0;  // truncate the run at this fraction of total steps
  void validate() const;
};

struct TrainResult {
  bool failed = false;  // non-finite loss or gradient; last good checkpoint kept
  std::string fail_reason;
  int64_t steps_done = 0;
  int64_t tokens_done = 0;
  double final_train_loss = 0.0;
  int64_t release_step = -1;
  bool release_forced = false;
  std::vector<probes::ProbeRecord> evals;  // step/tokens filled in
  std::vector<std::pair<int64_t, std::string>> checkpoints;  // (step, path)
  std::string metrics_path;
  std::string last_checkpoint;
};

TrainResult train_loop(Model& model, BatchStream& stream, const TrainConfig& cfg);

}  // namespace declab
