#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "declab/train.hpp"

namespace declab {

// Paired-run orchestration: every arm runs every seed, sharing the token
// stream and batch order within a seed, so per-seed differences isolate the
// arm. The first arm (or control_arm when set) is the comparison baseline.

struct ArmSpec {
  std::string name;
  InterventionConfig intervention;
};

struct ExperimentSpec {
  std::string name = "exp";
  ModelConfig model;
  CorpusConfig corpus;      // synthesized when tokens_path is empty
  uint64_t corpus_seed = 1;
  std::string tokens_path;  // pre-tokenized stream; vocab must match the model
  BatchConfig batch;        // its seed field is overridden by the run seed
  ScheduleConfig schedule;
  OptimizerConfig optimizer;
  std::vector<ArmSpec> arms;
  std::vector<uint64_t> seeds;
  std::string control_arm;  // empty means arms[0]
  int64_t eval_every = 0;
  double eval_frac = 0.005;
  probes::ProbeConfig probes;
  std::vector<double> checkpoint_fracs;
  double stop_frac = 1.0;
  double early_frac = 0.03;  // "early" snapshot = eval nearest this progress
  std::string out_dir = "runs";
  void validate() const;
};

struct RunSummary {
  std::string arm;
  uint64_t seed = 0;
  std::string run_id;
  bool failed = false;
  double final_loss = 0.0;  // last eval's validation loss
  double final_ppl = 0.0;
  int64_t release_step = -1;
  bool release_forced = false;
  probes::ProbeRecord early;  // eval nearest early_frac (earlier on ties)
  std::optional<double> tokens_to_target;
  std::vector<probes::ProbeRecord> evals;
  std::string metrics_path;
  std::vector<std::pair<int64_t, std::string>> checkpoints;
};

// Paired mean and sample standard deviation (n-1) of per-seed differences
// arm - control for one scalar field.
struct PairedStats {
  std::string arm;
  std::string field;
  double mean = 0.0;
  double stddev = 0.0;  // 0 when only one pair
  int64_t pairs = 0;
};

struct RunReport {
  std::string control_arm;
  double target_loss = 0.0;  // control arm's mean final loss (tokens-to-target)
  std::vector<RunSummary> runs;
  std::vector<PairedStats> paired;
  std::vector<std::string> incomplete_pairs;  // run ids dropped by failures

  const RunSummary* find(const std::string& arm, uint64_t seed) const;
};

RunReport run_experiment(const ExperimentSpec& spec);

// Offline release-rule replay over a logged (progress, lower_copy) trace.
struct TracePoint {
  double progress = 0.0;
  double score = 0.0;
};

struct ReleaseTrace {
  std::string source_run;
  std::vector<TracePoint> points;
  void validate() const;  // progress strictly increasing, each in (0, 1]
};

struct RuleVariant {
  std::string name;
  double threshold = 0.005;
  int64_t patience = 3;
  double min_frac = 0.03;
  double force_frac = 0.12;
};

struct ReplayRow {
  RuleVariant rule;
  std::optional<double> release_progress;  // absent when the trace never fires
  bool forced = false;
};

std::vector<ReplayRow> replay_release(const ReleaseTrace& trace,
                                      std::span<const RuleVariant> variants);

// Rebuilds a trace from a metrics log's eval records.
ReleaseTrace trace_from_log(const std::string& metrics_path);

// content-bearing records (step/eval/final) of two logs compare equal
bool logs_content_equal(const std::string& path_a, const std::string& path_b);

// One adaptive arm per alpha plus a mode-none control, shared seeds.
struct AlphaSweepRow {
  double alpha = 1.0;
  uint64_t seed = 0;
  double early_upper_entropy = 0.0;
  double early_upper_logit_rms = 0.0;
  double early_qk_disp = 0.0;  // first upper layer
  double final_loss = 0.0;
  double final_ppl = 0.0;
  int64_t release_step = -1;
};

struct AlphaSweepReport {
  RunReport report;
  std::vector<AlphaSweepRow> rows;          // adaptive arms, sorted by alpha desc
  std::vector<AlphaSweepRow> control_rows;  // mode-none control
  bool neutral_matches_control = false;     // alpha=1 arm vs control, content bitwise
};

AlphaSweepReport alpha_sweep(const ExperimentSpec& base, std::span<const double> alphas);

// Tidy plot tables from metrics logs.
enum class PlotKind { entropy_curve, logit_curve, ablation_curve, maturity_events };
PlotKind plot_kind_from_name(const std::string& s);

struct MaturityConfig {
  double copy_threshold = 0.005;    // lower-copy crossing level
  double entropy_sharpness = 0.95;  // upper entropy at-or-below counts as sharp
};

struct PlotData {
  std::string table;  // tab-separated, one header line
  int64_t rows = 0;
  int64_t skipped = 0;  // malformed log lines
};

PlotData emit_plot_data(std::span<const std::string> log_paths, PlotKind kind,
                        const MaturityConfig& maturity = {});

}  // namespace declab
