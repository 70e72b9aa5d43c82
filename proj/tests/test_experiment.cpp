#include "declab/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

using namespace declab;

namespace {

std::filesystem::path fresh_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("declab_exp_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

ExperimentSpec tiny_spec(const std::string& name, const std::string& dir) {
  ExperimentSpec s;
  s.name = name;
  s.out_dir = dir;
  s.model.n_layers = 2;
  s.model.d_model = 16;
  s.model.n_heads = 2;
  s.model.seq_len = 16;
  s.model.vocab = 29;
  s.corpus.vocab = 29;
  s.corpus.count = 6000;
  s.corpus.repeat_rate = 0.4;
  s.corpus.window = 16;
  s.batch.seq_len = 16;
  s.batch.batch_size = 2;
  s.batch.val_frac = 0.2;
  s.schedule.peak_lr = 1e-3;
  s.schedule.total_steps = 24;
  s.schedule.warmup_frac = 0.1;
  s.eval_every = 4;
  s.probes.val_batches = 1;
  return s;
}

ArmSpec arm_of(const std::string& name, InterventionMode mode, double alpha = 0.25) {
  ArmSpec a;
  a.name = name;
  a.intervention.mode = mode;
  a.intervention.alpha = alpha;
  return a;
}

const PairedStats& stats_for(const RunReport& rep, const std::string& arm,
                             const std::string& field) {
  for (const PairedStats& p : rep.paired)
    if (p.arm == arm && p.field == field) return p;
  REQUIRE(false);
  static PairedStats dummy;
  return dummy;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("identical arms produce exactly zero paired deltas") {
  auto dir = fresh_dir("samearms");
  ExperimentSpec spec = tiny_spec("same", dir.string());
  spec.arms = {arm_of("ctl", InterventionMode::none), arm_of("twin", InterventionMode::none)};
  spec.seeds = {3, 4};

  RunReport rep = run_experiment(spec);
  CHECK(rep.control_arm == "ctl");
  CHECK(rep.runs.size() == 4);
  CHECK(rep.incomplete_pairs.empty());

  for (const PairedStats& p : rep.paired) {
    CHECK(p.arm == "twin");
    if (p.field != "tokens_to_target") CHECK(p.pairs == 2);
    CHECK(p.mean == 0.0);
    CHECK(p.stddev == 0.0);
  }
  // identical runs agree on whether the target was reached and when
  for (uint64_t s : spec.seeds) {
    const RunSummary* a = rep.find("twin", s);
    const RunSummary* c = rep.find("ctl", s);
    REQUIRE(a);
    REQUIRE(c);
    CHECK(a->tokens_to_target == c->tokens_to_target);
    CHECK(a->final_loss == c->final_loss);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("a neutral alpha arm matches the control, checkpoints included") {
  auto dir = fresh_dir("neutralarm");
  ExperimentSpec spec = tiny_spec("neut", dir.string());
  spec.arms = {arm_of("ctl", InterventionMode::none),
               arm_of("neutral", InterventionMode::adaptive, 1.0)};
  spec.seeds = {7};
  spec.checkpoint_fracs = {1.0};

  RunReport rep = run_experiment(spec);
  for (const PairedStats& p : rep.paired) {
    CHECK(p.mean == 0.0);
    CHECK(p.stddev == 0.0);
  }
  const RunSummary* ctl = rep.find("ctl", 7);
  const RunSummary* neu = rep.find("neutral", 7);
  REQUIRE(ctl);
  REQUIRE(neu);
  CHECK(logs_content_equal(ctl->metrics_path, neu->metrics_path));
  REQUIRE(ctl->checkpoints.size() == 1);
  REQUIRE(neu->checkpoints.size() == 1);
  CHECK(slurp(ctl->checkpoints[0].second) == slurp(neu->checkpoints[0].second));
  // the adaptive arm released; the control never does
  CHECK(ctl->release_step == -1);
  CHECK(neu->release_step > 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("paired aggregates match a hand-computed spreadsheet") {
  auto dir = fresh_dir("spread");
  ExperimentSpec spec = tiny_spec("agg", dir.string());
  spec.arms = {arm_of("ctl", InterventionMode::none),
               arm_of("slow", InterventionMode::adaptive, 0.25)};
  spec.seeds = {11, 12, 13};

  RunReport rep = run_experiment(spec);
  std::vector<double> deltas;
  for (uint64_t s : spec.seeds) {
    const RunSummary* a = rep.find("slow", s);
    const RunSummary* c = rep.find("ctl", s);
    REQUIRE(a);
    REQUIRE(c);
    CHECK(a->run_id == "agg.slow.s" + std::to_string(s));
    deltas.push_back(a->final_loss - c->final_loss);
  }
  double mean = (deltas[0] + deltas[1] + deltas[2]) / 3.0;
  double var = 0.0;
  for (double d : deltas) var += (d - mean) * (d - mean);
  double stddev = std::sqrt(var / 2.0);

  const PairedStats& ps = stats_for(rep, "slow", "final_loss");
  CHECK(ps.pairs == 3);
  CHECK(ps.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(ps.stddev == doctest::Approx(stddev).epsilon(1e-12));

  // control mean is the tokens-to-target target
  double ctl_mean = 0.0;
  for (uint64_t s : spec.seeds) ctl_mean += rep.find("ctl", s)->final_loss;
  CHECK(rep.target_loss == doctest::Approx(ctl_mean / 3.0).epsilon(1e-12));
  std::filesystem::remove_all(dir);
}

TEST_CASE("early snapshot picks the eval nearest the early fraction") {
  auto dir = fresh_dir("early");
  ExperimentSpec spec = tiny_spec("early", dir.string());
  spec.arms = {arm_of("ctl", InterventionMode::none)};
  spec.seeds = {2};
  spec.early_frac = 0.25;  // target step 6 sits between evals 4 and 8; ties go earlier

  RunReport rep = run_experiment(spec);
  const RunSummary* r = rep.find("ctl", 2);
  REQUIRE(r);
  CHECK(r->early.step == 4);
  CHECK(r->final_loss == r->evals.back().val_loss);
  std::filesystem::remove_all(dir);
}

TEST_CASE("failed runs are reported incomplete but the report survives") {
  auto dir = fresh_dir("failed");
  ExperimentSpec spec = tiny_spec("boom", dir.string());
  spec.schedule.peak_lr = 1e15;  // diverges within a few steps
  spec.schedule.warmup_frac = 0.05;
  spec.arms = {arm_of("ctl", InterventionMode::none), arm_of("arm", InterventionMode::none)};
  spec.seeds = {5};

  RunReport rep = run_experiment(spec);
  CHECK(rep.runs.size() == 2);
  CHECK(rep.incomplete_pairs.size() == 2);
  for (const RunSummary& r : rep.runs) CHECK(r.failed);
  for (const PairedStats& p : rep.paired) CHECK(p.pairs == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("experiment spec validation") {
  ExperimentSpec s = tiny_spec("v", "out");
  CHECK_THROWS_AS(s.validate(), ConfigError);  // no arms
  s.arms = {arm_of("a", InterventionMode::none), arm_of("a", InterventionMode::none)};
  s.seeds = {1};
  CHECK_THROWS_AS(s.validate(), ConfigError);  // duplicate arm name
  s.arms = {arm_of("a", InterventionMode::none)};
  s.seeds = {1, 1};
  CHECK_THROWS_AS(s.validate(), ConfigError);  // duplicate seed
  s.seeds = {1};
  s.control_arm = "missing";
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.control_arm = "";
  s.corpus.vocab = 31;  // disagrees with model vocab
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.corpus.vocab = 29;
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("release replay reproduces hand-simulated release points") {
  // evals every 0.5%; the copy score first crosses 0.005 at 3.5% and stays up
  ReleaseTrace trace;
  trace.source_run = "hand";
  for (int i = 1; i <= 30; ++i) {
    TracePoint p;
    p.progress = 0.005 * i;
    p.score = i >= 7 ? 0.006 : 0.001;
    trace.points.push_back(p);
  }

  std::vector<RuleVariant> variants = {
      {"no_patience", 0.005, 1, 0.03, 0.12},
      {"main", 0.005, 3, 0.03, 0.12},
      {"higher_threshold", 0.007, 3, 0.03, 0.12},
      {"stricter_patience", 0.005, 5, 0.03, 0.12},
      {"shorter_window", 0.005, 3, 0.03, 0.08},
  };
  std::vector<ReplayRow> rows = replay_release(trace, variants);
  REQUIRE(rows.size() == 5);

  REQUIRE(rows[0].release_progress.has_value());
  CHECK(*rows[0].release_progress == 0.035);
  CHECK_FALSE(rows[0].forced);
  CHECK(*rows[1].release_progress == 0.045);
  CHECK_FALSE(rows[1].forced);
  CHECK(*rows[2].release_progress == 0.12);  // never crosses 0.007, forced window end
  CHECK(rows[2].forced);
  CHECK(*rows[3].release_progress == 0.055);
  CHECK_FALSE(rows[3].forced);
  // a shorter forced window does not move an in-window natural release
  CHECK(*rows[4].release_progress == 0.045);
  CHECK_FALSE(rows[4].forced);

  // ordering: no-patience <= main <= each stricter variant
  CHECK(*rows[0].release_progress <= *rows[1].release_progress);
  CHECK(*rows[1].release_progress <= *rows[2].release_progress);
  CHECK(*rows[1].release_progress <= *rows[3].release_progress);

  // pure function: a second replay is identical
  std::vector<ReplayRow> again = replay_release(trace, variants);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].release_progress == again[i].release_progress);
    CHECK(rows[i].forced == again[i].forced);
  }
}

TEST_CASE("release replay forces every variant on an always-cold trace") {
  ReleaseTrace trace;
  for (int i = 1; i <= 30; ++i) trace.points.push_back({0.005 * i, 0.0});
  std::vector<RuleVariant> variants = {
      {"main", 0.005, 3, 0.03, 0.12},
      {"late_force", 0.005, 3, 0.03, 0.10},
  };
  std::vector<ReplayRow> rows = replay_release(trace, variants);
  CHECK(*rows[0].release_progress == 0.12);
  CHECK(rows[0].forced);
  CHECK(*rows[1].release_progress == 0.10);
  CHECK(rows[1].forced);

  // a trace that ends before the forced window never releases
  ReleaseTrace shorttr;
  for (int i = 1; i <= 10; ++i) shorttr.points.push_back({0.005 * i, 0.0});
  std::vector<ReplayRow> none = replay_release(shorttr, variants);
  CHECK_FALSE(none[0].release_progress.has_value());

  ReleaseTrace bad;
  bad.points = {{0.02, 0.0}, {0.01, 0.0}};
  CHECK_THROWS_AS(replay_release(bad, variants), UsageError);
}

TEST_CASE("traces rebuilt from a metrics log replay cleanly") {
  auto dir = fresh_dir("tracelog");
  ExperimentSpec spec = tiny_spec("tr", dir.string());
  spec.arms = {arm_of("ctl", InterventionMode::none)};
  spec.seeds = {9};
  RunReport rep = run_experiment(spec);
  const RunSummary* r = rep.find("ctl", 9);
  REQUIRE(r);

  ReleaseTrace trace = trace_from_log(r->metrics_path);
  CHECK(trace.source_run == r->run_id);
  REQUIRE(trace.points.size() == r->evals.size());
  CHECK(trace.points[0].progress == doctest::Approx(4.0 / 24.0).epsilon(1e-12));
  CHECK(trace.points[0].score == r->evals[0].lower_copy);

  std::vector<RuleVariant> variants = {{"force_half", 10.0, 3, 0.03, 0.5}};
  std::vector<ReplayRow> rows = replay_release(trace, variants);
  REQUIRE(rows[0].release_progress.has_value());  // impossible threshold, forced at 50%
  CHECK(rows[0].forced);
  std::filesystem::remove_all(dir);
}

TEST_CASE("alpha sweep reports per-alpha early metrics and a neutral match") {
  auto dir = fresh_dir("alphasweep");
  ExperimentSpec base = tiny_spec("sw", dir.string());
  base.seeds = {6};
  std::vector<double> alphas = {0.5, 1.0};  // given unsorted on purpose

  AlphaSweepReport rep = alpha_sweep(base, alphas);
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].alpha == 1.0);  // sorted descending
  CHECK(rep.rows[1].alpha == 0.5);
  REQUIRE(rep.control_rows.size() == 1);
  CHECK(rep.neutral_matches_control);

  // the neutral arm's numbers coincide with the control's
  CHECK(rep.rows[0].final_loss == rep.control_rows[0].final_loss);
  CHECK(rep.rows[0].early_upper_entropy == rep.control_rows[0].early_upper_entropy);
  for (const AlphaSweepRow& row : rep.rows) {
    CHECK(row.early_upper_entropy > 0.0);
    CHECK(row.early_upper_logit_rms > 0.0);
    CHECK(row.release_step > 0);
  }

  std::vector<double> bad = {1.5};
  CHECK_THROWS_AS(alpha_sweep(base, bad), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("plot data emits tidy curves from metrics logs") {
  auto dir = fresh_dir("plot");
  ExperimentSpec spec = tiny_spec("plot", dir.string());
  spec.arms = {arm_of("ctl", InterventionMode::none), arm_of("slow", InterventionMode::adaptive)};
  spec.seeds = {8};
  RunReport rep = run_experiment(spec);

  std::vector<std::string> paths;
  for (const RunSummary& r : rep.runs) paths.push_back(r.metrics_path);
  PlotData pd = emit_plot_data(paths, PlotKind::entropy_curve);
  CHECK(pd.skipped == 0);
  CHECK(pd.rows == 12);  // 6 evals per run

  std::istringstream is(pd.table);
  std::string line;
  std::getline(is, line);
  CHECK(line == "progress\tarm\tseed\tvalue");
  int parsed = 0;
  while (std::getline(is, line)) {
    std::istringstream row(is.eof() && line.empty() ? "" : line);
    double progress, value;
    std::string arm;
    uint64_t seed;
    REQUIRE((row >> progress >> arm >> seed >> value));
    CHECK(progress > 0.0);
    CHECK(progress <= 1.0);
    CHECK((arm == "ctl" || arm == "slow"));
    CHECK(seed == 8);
    ++parsed;
  }
  CHECK(parsed == 12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("plot data extracts maturity events and tolerates junk lines") {
  auto dir = fresh_dir("maturity");
  std::string path = (dir / "hand.jsonl").string();
  {
    std::ofstream os(path);
    os << R"({"kind":"meta","run_id":"hand","arm":"armx","seed":4,"total_steps":100})" << "\n";
    os << R"({"kind":"eval","step":10,"lower_copy":0.001,"upper_entropy":0.99})" << "\n";
    os << "not json at all\n";
    os << R"({"kind":"eval","step":20,"lower_copy":0.006,"upper_entropy":0.97})" << "\n";
    os << R"({"kind":"eval","step":30,"lower_copy":0.009,"upper_entropy":0.94})" << "\n";
    os << R"({"kind":"eval","step":40,"lower_copy":0.012,"upper_entropy":0.90})" << "\n";
  }
  std::vector<std::string> paths = {path};
  PlotData pd = emit_plot_data(paths, PlotKind::maturity_events);
  CHECK(pd.skipped == 1);
  CHECK(pd.rows == 2);
  std::istringstream is(pd.table);
  std::string header, first, second;
  std::getline(is, header);
  CHECK(header == "arm\tseed\tevent\tprogress");
  std::getline(is, first);
  std::getline(is, second);
  CHECK(first == "armx\t4\tlower_copy_crossing\t0.2");
  CHECK(second == "armx\t4\tupper_entropy_sharpness\t0.3");

  // empty log: header only
  std::string empty_path = (dir / "empty.jsonl").string();
  std::ofstream(empty_path).close();
  std::vector<std::string> ep = {empty_path};
  PlotData pe = emit_plot_data(ep, PlotKind::logit_curve);
  CHECK(pe.rows == 0);
  CHECK(pe.table == "progress\tarm\tseed\tvalue\n");

  CHECK(plot_kind_from_name("maturity-events") == PlotKind::maturity_events);
  CHECK(plot_kind_from_name("entropy_curve") == PlotKind::entropy_curve);
  CHECK_THROWS_AS(plot_kind_from_name("bogus"), UsageError);
  std::filesystem::remove_all(dir);
}
