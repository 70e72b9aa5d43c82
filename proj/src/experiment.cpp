#include "declab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace declab {

namespace {

using njson = nlohmann::json;

std::string run_id_for(const std::string& exp, const std::string& arm, uint64_t seed) {
  return exp + "." + arm + ".s" + std::to_string(seed);
}

std::string alpha_arm_name(double alpha) {
  return "a" + std::to_string(static_cast<long long>(std::llround(alpha * 1000.0)));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<std::string> log_content(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open metrics log: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    njson j = njson::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("kind")) continue;
    std::string kind = j.at("kind");
    if (kind == "step" || kind == "eval" || kind == "final") out.push_back(line);
  }
  return out;
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

void ExperimentSpec::validate() const {
  if (name.empty()) throw ConfigError("experiment name must be nonempty");
  if (out_dir.empty()) throw ConfigError("experiment out_dir must be nonempty");
  model.validate();
  schedule.validate();
  optimizer.validate();
  batch.validate();
  if (tokens_path.empty()) {
    corpus.validate();
    if (corpus.vocab != model.vocab)
      throw ConfigError("corpus vocab does not match the model vocab");
  }
  if (arms.empty()) throw ConfigError("experiment needs at least one arm");
  std::set<std::string> names;
  for (const ArmSpec& a : arms) {
    if (a.name.empty()) throw ConfigError("arm names must be nonempty");
    if (!names.insert(a.name).second) throw ConfigError("duplicate arm name: " + a.name);
    a.intervention.validate();
  }
  if (!control_arm.empty() && !names.count(control_arm))
    throw ConfigError("control_arm is not one of the arms");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (std::set<uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("duplicate seeds break run pairing");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (eval_every == 0 && (eval_frac <= 0.0 || eval_frac > 1.0))
    throw ConfigError("eval_frac must be in (0,1]");
  if (stop_frac <= 0.0 || stop_frac > 1.0) throw ConfigError("stop_frac must be in (0,1]");
  if (early_frac <= 0.0 || early_frac > 1.0) throw ConfigError("early_frac must be in (0,1]");
  for (double f : checkpoint_fracs)
    if (f <= 0.0 || f > 1.0) throw ConfigError("checkpoint fractions must be in (0,1]");
}

const RunSummary* RunReport::find(const std::string& arm, uint64_t seed) const {
  for (const RunSummary& r : runs)
    if (r.arm == arm && r.seed == seed) return &r;
  return nullptr;
}

RunReport run_experiment(const ExperimentSpec& spec) {
  spec.validate();

  TokenFile tf;
  if (!spec.tokens_path.empty()) {
    tf = load_tokens(spec.tokens_path);
    if (tf.vocab != spec.model.vocab)
      throw DataError("token file vocab does not match the model vocab");
  } else {
    tf.vocab = spec.corpus.vocab;
    tf.tokens = generate_corpus(spec.corpus, spec.corpus_seed);
  }

  RunReport rep;
  rep.control_arm = spec.control_arm.empty() ? spec.arms[0].name : spec.control_arm;

  for (const ArmSpec& arm : spec.arms) {
    for (uint64_t seed : spec.seeds) {
      TrainConfig tc;
      tc.run_id = run_id_for(spec.name, arm.name, seed);
      tc.arm = arm.name;
      tc.seed = seed;
      tc.out_dir = spec.out_dir;
      tc.schedule = spec.schedule;
      tc.optimizer = spec.optimizer;
      tc.intervention = arm.intervention;
      tc.eval_every = spec.eval_every;
      tc.eval_frac = spec.eval_frac;
      tc.probes = spec.probes;
      tc.checkpoint_fracs = spec.checkpoint_fracs;
      tc.stop_frac = spec.stop_frac;

      Model model(spec.model, seed);
      BatchConfig bc = spec.batch;
      bc.seed = seed;
      BatchStream stream(tf.tokens, tf.vocab, bc);
      TrainResult tr = train_loop(model, stream, tc);

      RunSummary rs;
      rs.arm = arm.name;
      rs.seed = seed;
      rs.run_id = tc.run_id;
      rs.failed = tr.failed;
      rs.release_step = tr.release_step;
      rs.release_forced = tr.release_forced;
      rs.metrics_path = tr.metrics_path;
      rs.checkpoints = std::move(tr.checkpoints);
      rs.evals = std::move(tr.evals);
      if (!rs.failed && !rs.evals.empty()) {
        rs.final_loss = rs.evals.back().val_loss;
        rs.final_ppl = rs.evals.back().val_ppl;
        int64_t target = std::llround(spec.early_frac * spec.schedule.total_steps);
        size_t best = 0;
        for (size_t i = 1; i < rs.evals.size(); ++i)
          if (std::llabs(rs.evals[i].step - target) < std::llabs(rs.evals[best].step - target))
            best = i;
        rs.early = rs.evals[best];
      } else {
        rep.incomplete_pairs.push_back(rs.run_id);
      }
      rep.runs.push_back(std::move(rs));
    }
  }

  // tokens-to-target measures every run against the control arm's mean final
  // validation loss, the paired notion of "time to the baseline's endpoint"
  std::vector<double> ctl_finals;
  for (const RunSummary& r : rep.runs)
    if (r.arm == rep.control_arm && !r.failed && !r.evals.empty())
      ctl_finals.push_back(r.final_loss);
  if (!ctl_finals.empty()) {
    rep.target_loss = mean_of(ctl_finals);
    for (RunSummary& r : rep.runs) {
      if (r.failed || r.evals.empty()) continue;
      std::vector<std::pair<int64_t, double>> curve;
      for (const probes::ProbeRecord& e : r.evals) curve.emplace_back(e.tokens, e.val_loss);
      r.tokens_to_target = probes::tokens_to_target(curve, rep.target_loss);
    }
  }

  // paired aggregates: per-seed differences arm - control, audited by run id
  struct Field {
    const char* name;
    double (*get)(const RunSummary&);
    bool (*has)(const RunSummary&);
  };
  static const Field kFields[] = {
      {"final_loss", [](const RunSummary& r) { return r.final_loss; },
       [](const RunSummary&) { return true; }},
      {"final_ppl", [](const RunSummary& r) { return r.final_ppl; },
       [](const RunSummary&) { return true; }},
      {"early_upper_entropy", [](const RunSummary& r) { return r.early.upper_entropy; },
       [](const RunSummary&) { return true; }},
      {"early_upper_logit_rms", [](const RunSummary& r) { return r.early.upper_logit_rms; },
       [](const RunSummary&) { return true; }},
      {"early_qk_disp", [](const RunSummary& r) { return r.early.qk_disp[0]; },
       [](const RunSummary& r) { return !r.early.qk_disp.empty(); }},
      {"early_ablation_ppl_delta",
       [](const RunSummary& r) { return r.early.ablation_ppl_delta; },
       [](const RunSummary&) { return true; }},
      {"tokens_to_target", [](const RunSummary& r) { return *r.tokens_to_target; },
       [](const RunSummary& r) { return r.tokens_to_target.has_value(); }},
  };

  for (const ArmSpec& arm : spec.arms) {
    if (arm.name == rep.control_arm) continue;
    for (const Field& f : kFields) {
      std::vector<double> deltas;
      for (uint64_t seed : spec.seeds) {
        const RunSummary* run = rep.find(arm.name, seed);
        const RunSummary* ctl = rep.find(rep.control_arm, seed);
        if (!run || !ctl || run->failed || ctl->failed) continue;
        if (run->run_id != run_id_for(spec.name, arm.name, seed) ||
            ctl->run_id != run_id_for(spec.name, rep.control_arm, seed) ||
            run->seed != ctl->seed)
          throw UsageError("pairing audit failed for " + run->run_id);
        if (!f.has(*run) || !f.has(*ctl)) continue;
        deltas.push_back(f.get(*run) - f.get(*ctl));
      }
      PairedStats ps;
      ps.arm = arm.name;
      ps.field = f.name;
      ps.pairs = static_cast<int64_t>(deltas.size());
      if (!deltas.empty()) {
        ps.mean = mean_of(deltas);
        ps.stddev = sample_std(deltas, ps.mean);
      }
      rep.paired.push_back(std::move(ps));
    }
  }
  return rep;
}

void ReleaseTrace::validate() const {
  double prev = 0.0;
  for (const TracePoint& p : points) {
    if (p.progress <= prev || p.progress > 1.0)
      throw UsageError("trace progress must be strictly increasing in (0,1]");
    prev = p.progress;
  }
}

std::vector<ReplayRow> replay_release(const ReleaseTrace& trace,
                                      std::span<const RuleVariant> variants) {
  trace.validate();
  // fractional progress mapped onto a fine fixed grid so fractions used by
  // hand traces (multiples of 1e-3 and coarser) convert exactly both ways
  constexpr int64_t kScale = 1'000'000;
  std::vector<ReplayRow> rows;
  for (const RuleVariant& v : variants) {
    InterventionConfig cfg;
    cfg.mode = InterventionMode::adaptive;
    cfg.threshold = v.threshold;
    cfg.patience = v.patience;
    cfg.min_release_frac = v.min_frac;
    cfg.force_release_frac = v.force_frac;
    ReleaseController rc(cfg, kScale);
    for (const TracePoint& p : trace.points)
      rc.observe(std::llround(p.progress * kScale), p.score);
    ReplayRow row;
    row.rule = v;
    if (rc.released()) {
      row.release_progress = static_cast<double>(rc.release_step()) / kScale;
      row.forced = rc.forced();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

ReleaseTrace trace_from_log(const std::string& metrics_path) {
  std::ifstream is(metrics_path);
  if (!is) throw FormatError("cannot open metrics log: " + metrics_path);
  ReleaseTrace trace;
  int64_t total = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    njson j = njson::parse(line);
    std::string kind = j.at("kind");
    if (kind == "meta") {
      total = j.at("total_steps");
      trace.source_run = j.at("run_id");
    } else if (kind == "eval") {
      if (total <= 0) throw FormatError("eval record before meta in " + metrics_path);
      TracePoint p;
      p.progress = static_cast<double>(j.at("step").get<int64_t>()) / total;
      p.score = j.at("lower_copy");
      trace.points.push_back(p);
    }
  }
  trace.validate();
  return trace;
}

bool logs_content_equal(const std::string& path_a, const std::string& path_b) {
  return log_content(path_a) == log_content(path_b);
}

AlphaSweepReport alpha_sweep(const ExperimentSpec& base, std::span<const double> alphas) {
  if (alphas.empty()) throw ConfigError("alpha sweep needs at least one alpha");
  for (double a : alphas)
    if (a <= 0.0 || a > 1.0) throw ConfigError("alpha values must be in (0,1]");

  std::vector<double> sorted(alphas.begin(), alphas.end());
  std::sort(sorted.rbegin(), sorted.rend());

  ExperimentSpec spec = base;
  spec.arms.clear();
  ArmSpec control;
  control.name = "control";
  control.intervention.mode = InterventionMode::none;
  spec.arms.push_back(control);
  spec.control_arm = "control";
  for (double a : sorted) {
    ArmSpec arm;
    arm.name = alpha_arm_name(a);
    arm.intervention.mode = InterventionMode::adaptive;
    arm.intervention.alpha = a;
    spec.arms.push_back(arm);
  }

  AlphaSweepReport out;
  out.report = run_experiment(spec);

  auto fill_row = [](const RunSummary& rs, double alpha) {
    AlphaSweepRow row;
    row.alpha = alpha;
    row.seed = rs.seed;
    row.early_upper_entropy = rs.early.upper_entropy;
    row.early_upper_logit_rms = rs.early.upper_logit_rms;
    row.early_qk_disp = rs.early.qk_disp.empty() ? 0.0 : rs.early.qk_disp[0];
    row.final_loss = rs.final_loss;
    row.final_ppl = rs.final_ppl;
    row.release_step = rs.release_step;
    return row;
  };

  for (double a : sorted)
    for (uint64_t seed : spec.seeds) {
      const RunSummary* rs = out.report.find(alpha_arm_name(a), seed);
      if (rs && !rs->failed) out.rows.push_back(fill_row(*rs, a));
    }
  for (uint64_t seed : spec.seeds) {
    const RunSummary* rs = out.report.find("control", seed);
    if (rs && !rs->failed) out.control_rows.push_back(fill_row(*rs, 1.0));
  }

  bool has_one = std::find(sorted.begin(), sorted.end(), 1.0) != sorted.end();
  if (has_one) {
    out.neutral_matches_control = true;
    for (uint64_t seed : spec.seeds) {
      const RunSummary* neutral = out.report.find(alpha_arm_name(1.0), seed);
      const RunSummary* ctl = out.report.find("control", seed);
      if (!neutral || !ctl ||
          !logs_content_equal(neutral->metrics_path, ctl->metrics_path))
        out.neutral_matches_control = false;
    }
  }
  return out;
}

PlotKind plot_kind_from_name(const std::string& s) {
  std::string n = s;
  std::replace(n.begin(), n.end(), '-', '_');
  if (n == "entropy_curve") return PlotKind::entropy_curve;
  if (n == "logit_curve") return PlotKind::logit_curve;
  if (n == "ablation_curve") return PlotKind::ablation_curve;
  if (n == "maturity_events") return PlotKind::maturity_events;
  throw UsageError("unknown plot kind: " + s);
}

PlotData emit_plot_data(std::span<const std::string> log_paths, PlotKind kind,
                        const MaturityConfig& maturity) {
  const char* field = nullptr;
  switch (kind) {
    case PlotKind::entropy_curve: field = "upper_entropy"; break;
    case PlotKind::logit_curve: field = "upper_logit_rms"; break;
    case PlotKind::ablation_curve: field = "ablation_ppl_delta"; break;
    case PlotKind::maturity_events: break;
  }

  PlotData out;
  std::ostringstream os;
  os << (kind == PlotKind::maturity_events ? "arm\tseed\tevent\tprogress"
                                           : "progress\tarm\tseed\tvalue")
     << "\n";

  for (const std::string& path : log_paths) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open metrics log: " + path);
    std::string arm = "unknown";
    uint64_t seed = 0;
    int64_t total = 0;
    struct EvalPoint {
      double progress;
      double copy;
      double entropy;
      double value;
    };
    std::vector<EvalPoint> evals;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      njson j = njson::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("kind")) {
        ++out.skipped;
        continue;
      }
      std::string k = j.value("kind", "");
      if (k == "meta") {
        arm = j.value("arm", "unknown");
        seed = j.value("seed", uint64_t{0});
        total = j.value("total_steps", int64_t{0});
      } else if (k == "eval") {
        if (total <= 0 || !j.contains("step")) {
          ++out.skipped;
          continue;
        }
        EvalPoint p;
        p.progress = static_cast<double>(j.at("step").get<int64_t>()) / total;
        p.copy = j.value("lower_copy", 0.0);
        p.entropy = j.value("upper_entropy", 0.0);
        p.value = field ? j.value(field, 0.0) : 0.0;
        if (field && !j.contains(field)) {
          ++out.skipped;
          continue;
        }
        evals.push_back(p);
      }
    }

    if (kind == PlotKind::maturity_events) {
      bool copy_done = false, sharp_done = false;
      for (const EvalPoint& p : evals) {
        if (!copy_done && p.copy >= maturity.copy_threshold) {
          os << arm << "\t" << seed << "\tlower_copy_crossing\t" << fmt_num(p.progress) << "\n";
          ++out.rows;
          copy_done = true;
        }
        if (!sharp_done && p.entropy <= maturity.entropy_sharpness) {
          os << arm << "\t" << seed << "\tupper_entropy_sharpness\t" << fmt_num(p.progress)
             << "\n";
          ++out.rows;
          sharp_done = true;
        }
      }
    } else {
      for (const EvalPoint& p : evals) {
        os << fmt_num(p.progress) << "\t" << arm << "\t" << seed << "\t" << fmt_num(p.value)
           << "\n";
        ++out.rows;
      }
    }
  }
  out.table = os.str();
  return out;
}

}  // namespace declab
