// declab: experiment harness CLI. Verbs: gen-corpus, run, replay-release,
// alpha-sweep, theory, probe, report, plot-data. Configs are JSON files;
// outputs are JSON/JSONL records or tab-separated tables ("-" = stdout).
// Exit codes: 0 ok, 1 suite assertion failed, 2 config, 3 data, 4 format,
// 5 usage, 6 numeric abort; CLI parse errors use CLI11's own codes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "declab/experiment.hpp"
#include "declab/theory.hpp"

namespace {

using njson = nlohmann::ordered_json;
using namespace declab;

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

// output sink: file path, or "-" / empty for stdout
struct Sink {
  std::ofstream file;
  std::ostream* os = &std::cout;
  explicit Sink(const std::string& path) {
    if (!path.empty() && path != "-") {
      file.open(path, std::ios::trunc);
      if (!file) throw FormatError("cannot open output file: " + path);
      os = &file;
    }
  }
  std::ostream& out() { return *os; }
};

njson load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config file: " + path);
  njson j = njson::parse(is, nullptr, false);
  if (j.is_discarded()) throw FormatError("invalid JSON in " + path);
  return j;
}

void check_keys(const njson& j, std::initializer_list<const char*> allowed, const char* ctx) {
  if (!j.is_object()) throw ConfigError(std::string(ctx) + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + ctx);
  }
}

Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  throw ConfigError("unknown dtype: " + s);
}

ModelConfig model_from_json(const njson& j) {
  check_keys(j,
             {"n_layers", "d_model", "n_heads", "seq_len", "vocab", "ffn_width", "norm", "ffn",
              "use_bias", "tied_embeddings", "rope_base", "norm_eps", "init_std", "dtype"},
             "model");
  ModelConfig m;
  m.n_layers = j.value("n_layers", m.n_layers);
  m.d_model = j.value("d_model", m.d_model);
  m.n_heads = j.value("n_heads", m.n_heads);
  m.seq_len = j.value("seq_len", m.seq_len);
  m.vocab = j.value("vocab", m.vocab);
  m.ffn_width = j.value("ffn_width", m.ffn_width);
  if (j.contains("norm")) m.norm = norm_kind_from_name(j.at("norm").get<std::string>());
  if (j.contains("ffn")) m.ffn = ffn_kind_from_name(j.at("ffn").get<std::string>());
  m.use_bias = j.value("use_bias", m.use_bias);
  m.tied_embeddings = j.value("tied_embeddings", m.tied_embeddings);
  m.rope_base = j.value("rope_base", m.rope_base);
  m.norm_eps = j.value("norm_eps", m.norm_eps);
  m.init_std = j.value("init_std", m.init_std);
  if (j.contains("dtype")) m.dtype = dtype_from_name(j.at("dtype").get<std::string>());
  return m;
}

CorpusConfig corpus_from_json(const njson& j) {
  check_keys(j, {"vocab", "count", "repeat_rate", "window"}, "corpus");
  CorpusConfig c;
  c.vocab = j.value("vocab", c.vocab);
  c.count = j.value("count", c.count);
  c.repeat_rate = j.value("repeat_rate", c.repeat_rate);
  c.window = j.value("window", c.window);
  return c;
}

BatchConfig batch_from_json(const njson& j) {
  // seed is owned by the run pairing, never by the config file
  check_keys(j, {"seq_len", "batch_size", "val_frac"}, "batch");
  BatchConfig b;
  b.seq_len = j.value("seq_len", b.seq_len);
  b.batch_size = j.value("batch_size", b.batch_size);
  b.val_frac = j.value("val_frac", b.val_frac);
  return b;
}

ScheduleConfig schedule_from_json(const njson& j) {
  check_keys(j, {"peak_lr", "total_steps", "warmup_frac", "final_frac"}, "schedule");
  ScheduleConfig s;
  s.peak_lr = j.value("peak_lr", s.peak_lr);
  s.total_steps = j.value("total_steps", s.total_steps);
  s.warmup_frac = j.value("warmup_frac", s.warmup_frac);
  s.final_frac = j.value("final_frac", s.final_frac);
  return s;
}

OptimizerConfig optimizer_from_json(const njson& j) {
  check_keys(j, {"beta1", "beta2", "eps", "weight_decay"}, "optimizer");
  OptimizerConfig o;
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.eps = j.value("eps", o.eps);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  return o;
}

InterventionConfig intervention_from_json(const njson& j) {
  check_keys(j,
             {"mode", "alpha", "threshold", "patience", "min_release_frac", "force_release_frac",
              "ramp_frac", "fixed_release_frac", "global_scale", "floor_h0", "floor_lambda"},
             "intervention");
  InterventionConfig iv;
  if (j.contains("mode")) iv.mode = intervention_mode_from_name(j.at("mode").get<std::string>());
  iv.alpha = j.value("alpha", iv.alpha);
  iv.threshold = j.value("threshold", iv.threshold);
  iv.patience = j.value("patience", iv.patience);
  iv.min_release_frac = j.value("min_release_frac", iv.min_release_frac);
  iv.force_release_frac = j.value("force_release_frac", iv.force_release_frac);
  iv.ramp_frac = j.value("ramp_frac", iv.ramp_frac);
  iv.fixed_release_frac = j.value("fixed_release_frac", iv.fixed_release_frac);
  iv.global_scale = j.value("global_scale", iv.global_scale);
  iv.floor_h0 = j.value("floor_h0", iv.floor_h0);
  iv.floor_lambda = j.value("floor_lambda", iv.floor_lambda);
  return iv;
}

probes::ProbeConfig probes_from_json(const njson& j) {
  check_keys(j, {"val_batches", "power_tol", "power_iters"}, "probes");
  probes::ProbeConfig p;
  p.val_batches = j.value("val_batches", p.val_batches);
  p.power_tol = j.value("power_tol", p.power_tol);
  p.power_iters = j.value("power_iters", p.power_iters);
  return p;
}

ExperimentSpec experiment_from_json(const njson& j) {
  check_keys(j,
             {"name", "out_dir", "model", "corpus", "corpus_seed", "tokens_path", "batch",
              "schedule", "optimizer", "arms", "seeds", "control_arm", "eval_every", "eval_frac",
              "probes", "checkpoint_fracs", "stop_frac", "early_frac"},
             "experiment");
  ExperimentSpec s;
  s.name = j.value("name", s.name);
  s.out_dir = j.value("out_dir", s.out_dir);
  if (j.contains("model")) s.model = model_from_json(j.at("model"));
  if (j.contains("corpus")) s.corpus = corpus_from_json(j.at("corpus"));
  s.corpus_seed = j.value("corpus_seed", s.corpus_seed);
  s.tokens_path = j.value("tokens_path", s.tokens_path);
  if (j.contains("batch")) s.batch = batch_from_json(j.at("batch"));
  if (j.contains("schedule")) s.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("optimizer")) s.optimizer = optimizer_from_json(j.at("optimizer"));
  if (j.contains("arms")) {
    if (!j.at("arms").is_array()) throw ConfigError("arms must be an array");
    for (const njson& a : j.at("arms")) {
      check_keys(a, {"name", "intervention"}, "arm");
      ArmSpec arm;
      arm.name = a.value("name", std::string());
      if (a.contains("intervention")) arm.intervention = intervention_from_json(a.at("intervention"));
      s.arms.push_back(std::move(arm));
    }
  }
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  s.control_arm = j.value("control_arm", s.control_arm);
  s.eval_every = j.value("eval_every", s.eval_every);
  s.eval_frac = j.value("eval_frac", s.eval_frac);
  if (j.contains("probes")) s.probes = probes_from_json(j.at("probes"));
  if (j.contains("checkpoint_fracs"))
    s.checkpoint_fracs = j.at("checkpoint_fracs").get<std::vector<double>>();
  s.stop_frac = j.value("stop_frac", s.stop_frac);
  s.early_frac = j.value("early_frac", s.early_frac);
  return s;
}

// mirrors the metrics-log eval field set
njson probe_record_json(const probes::ProbeRecord& r) {
  njson j;
  j["step"] = r.step;
  j["tokens"] = r.tokens;
  j["val_loss"] = r.val_loss;
  j["val_ppl"] = r.val_ppl;
  j["lower_copy"] = r.lower_copy;
  j["lower_copy_valid"] = r.lower_copy_valid;
  j["upper_entropy"] = r.upper_entropy;
  j["lower_entropy"] = r.lower_entropy;
  j["upper_logit_rms"] = r.upper_logit_rms;
  j["lower_logit_rms"] = r.lower_logit_rms;
  if (r.logit_ratio) j["logit_ratio"] = *r.logit_ratio;
  j["qk_top_sv"] = r.qk_top_sv;
  if (!r.qk_disp.empty()) {
    j["qk_disp"] = r.qk_disp;
    j["qk_disp_mean"] = r.qk_disp_mean;
  }
  j["ffn_write_rms"] = r.ffn_write_rms;
  j["ffn_write_rms_upper_mean"] = r.ffn_write_rms_upper_mean;
  j["ffn_write_rms_first_upper"] = r.ffn_write_rms_first_upper;
  j["ablation_ppl_delta"] = r.ablation_ppl_delta;
  if (r.lambda_q) j["lambda_q"] = *r.lambda_q;
  if (r.lambda_k) j["lambda_k"] = *r.lambda_k;
  if (r.rp_fraction) j["rp_fraction"] = *r.rp_fraction;
  return j;
}

njson run_report_json(const RunReport& rep) {
  njson j;
  j["control_arm"] = rep.control_arm;
  j["target_loss"] = rep.target_loss;
  j["incomplete_pairs"] = rep.incomplete_pairs;
  j["runs"] = njson::array();
  for (const RunSummary& r : rep.runs) {
    njson rj;
    rj["run_id"] = r.run_id;
    rj["arm"] = r.arm;
    rj["seed"] = r.seed;
    rj["failed"] = r.failed;
    rj["final_loss"] = r.final_loss;
    rj["final_ppl"] = r.final_ppl;
    rj["release_step"] = r.release_step;
    rj["release_forced"] = r.release_forced;
    if (r.tokens_to_target) rj["tokens_to_target"] = *r.tokens_to_target;
    rj["early"] = probe_record_json(r.early);
    rj["metrics_path"] = r.metrics_path;
    rj["checkpoints"] = njson::array();
    for (const auto& [step, path] : r.checkpoints)
      rj["checkpoints"].push_back({{"step", step}, {"path", path}});
    j["runs"].push_back(std::move(rj));
  }
  j["paired"] = njson::array();
  for (const PairedStats& p : rep.paired)
    j["paired"].push_back({{"arm", p.arm},
                           {"field", p.field},
                           {"mean", p.mean},
                           {"stddev", p.stddev},
                           {"pairs", p.pairs}});
  return j;
}

void print_run_tables(std::ostream& os, const RunReport& rep) {
  os << "run_id\tfailed\tfinal_loss\tfinal_ppl\trelease_step\ttokens_to_target\n";
  for (const RunSummary& r : rep.runs)
    os << r.run_id << "\t" << (r.failed ? 1 : 0) << "\t" << fmt_num(r.final_loss) << "\t"
       << fmt_num(r.final_ppl) << "\t" << r.release_step << "\t"
       << (r.tokens_to_target ? fmt_num(*r.tokens_to_target) : "-") << "\n";
  os << "\narm\tfield\tmean\tstddev\tpairs\n";
  for (const PairedStats& p : rep.paired)
    os << p.arm << "\t" << p.field << "\t" << fmt_num(p.mean) << "\t" << fmt_num(p.stddev) << "\t"
       << p.pairs << "\n";
  for (const std::string& id : rep.incomplete_pairs)
    os << "incomplete\t" << id << "\n";
}

// ---------------------------------------------------------------- gen-corpus

struct GenCorpusArgs {
  int64_t vocab = 512;
  int64_t length = 20'000'000;
  double repeat_rate = 0.3;
  int64_t window = 64;
  uint64_t seed = 1;
  std::string out;
};

int cmd_gen_corpus(const GenCorpusArgs& a) {
  CorpusConfig cfg;
  cfg.vocab = a.vocab;
  cfg.count = a.length;
  cfg.repeat_rate = a.repeat_rate;
  cfg.window = a.window;
  std::vector<int32_t> tokens = generate_corpus(cfg, a.seed);
  save_tokens(a.out, cfg.vocab, tokens);
  njson j;
  j["path"] = a.out;
  j["vocab"] = cfg.vocab;
  j["count"] = static_cast<int64_t>(tokens.size());
  j["repeat_rate"] = cfg.repeat_rate;
  j["window"] = cfg.window;
  j["seed"] = a.seed;
  std::cout << j.dump() << "\n";
  return 0;
}

// ----------------------------------------------------------------------- run

struct RunArgs {
  std::string config;
  std::string out_dir;  // overrides the config's out_dir
  std::string report;   // report JSON path; default <out_dir>/<name>.report.json
};

int cmd_run(const RunArgs& a) {
  ExperimentSpec spec = experiment_from_json(load_json(a.config));
  if (!a.out_dir.empty()) spec.out_dir = a.out_dir;
  RunReport rep = run_experiment(spec);

  std::string rpath = a.report.empty() ? spec.out_dir + "/" + spec.name + ".report.json" : a.report;
  {
    Sink sink(rpath);
    sink.out() << run_report_json(rep).dump(2) << "\n";
  }
  print_run_tables(std::cout, rep);
  if (rpath != "-") std::cout << "report\t" << rpath << "\n";
  return 0;
}

// ------------------------------------------------------------- replay-release

struct ReplayArgs {
  std::string log;       // metrics JSONL with eval records
  std::string trace;     // or a 2-column progress/score text file
  std::string variants;  // JSON array of rule variants; empty uses the default set
  std::string out;
};

ReleaseTrace trace_from_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open trace file: " + path);
  ReleaseTrace t;
  t.source_run = path;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string body = line.substr(0, line.find('#'));
    std::istringstream ls(body);
    TracePoint p;
    if (!(ls >> p.progress)) continue;  // blank or comment-only line
    if (!(ls >> p.score))
      throw FormatError("trace line " + std::to_string(lineno) + ": expected progress and score");
    t.points.push_back(p);
  }
  t.validate();
  return t;
}

std::vector<RuleVariant> default_variants() {
  return {
      {"main", 0.005, 3, 0.03, 0.12},
      {"no_patience", 0.005, 1, 0.03, 0.12},
      {"higher_threshold", 0.007, 3, 0.03, 0.12},
      {"stricter_patience", 0.005, 5, 0.03, 0.12},
      {"shorter_window", 0.005, 3, 0.03, 0.08},
  };
}

std::vector<RuleVariant> variants_from_json(const std::string& path) {
  njson j = load_json(path);
  if (!j.is_array() || j.empty()) throw ConfigError("variants file must be a nonempty array");
  std::vector<RuleVariant> out;
  for (const njson& v : j) {
    check_keys(v, {"name", "threshold", "patience", "min_frac", "force_frac"}, "variant");
    RuleVariant r;
    r.name = v.value("name", std::string("rule") + std::to_string(out.size()));
    r.threshold = v.value("threshold", r.threshold);
    r.patience = v.value("patience", r.patience);
    r.min_frac = v.value("min_frac", r.min_frac);
    r.force_frac = v.value("force_frac", r.force_frac);
    out.push_back(std::move(r));
  }
  return out;
}

int cmd_replay(const ReplayArgs& a) {
  if (a.log.empty() == a.trace.empty())
    throw UsageError("replay-release needs exactly one of --log or --trace");
  ReleaseTrace trace = a.log.empty() ? trace_from_text(a.trace) : trace_from_log(a.log);
  std::vector<RuleVariant> variants =
      a.variants.empty() ? default_variants() : variants_from_json(a.variants);

  std::vector<ReplayRow> rows = replay_release(trace, variants);

  Sink sink(a.out);
  sink.out() << "rule\tthreshold\tpatience\tmin_frac\tforce_frac\trelease\tforced\n";
  for (const ReplayRow& r : rows)
    sink.out() << r.rule.name << "\t" << fmt_num(r.rule.threshold) << "\t" << r.rule.patience
               << "\t" << fmt_num(r.rule.min_frac) << "\t" << fmt_num(r.rule.force_frac) << "\t"
               << (r.release_progress ? fmt_num(*r.release_progress) : "-") << "\t"
               << (r.forced ? 1 : 0) << "\n";

  int failures = 0;
  // pure function: an immediate second replay must reproduce the table
  std::vector<ReplayRow> again = replay_release(trace, variants);
  for (size_t i = 0; i < rows.size(); ++i)
    if (rows[i].release_progress != again[i].release_progress ||
        rows[i].forced != again[i].forced) {
      std::cerr << "replay purity violated for rule " << rows[i].rule.name << "\n";
      ++failures;
    }

  // a stricter rule (higher threshold or patience, same window) never fires
  // earlier than the baseline rule on the same trace
  size_t base = 0;
  for (size_t i = 0; i < rows.size(); ++i)
    if (rows[i].rule.name == "main") base = i;
  const ReplayRow& main_row = rows[base];
  for (const ReplayRow& r : rows) {
    if (&r == &main_row || !r.release_progress || !main_row.release_progress) continue;
    bool comparable = r.rule.min_frac == main_row.rule.min_frac &&
                      r.rule.force_frac == main_row.rule.force_frac &&
                      r.rule.threshold >= main_row.rule.threshold &&
                      r.rule.patience >= main_row.rule.patience;
    bool stricter = r.rule.threshold > main_row.rule.threshold ||
                    r.rule.patience > main_row.rule.patience;
    if (comparable && stricter && *r.release_progress < *main_row.release_progress) {
      std::cerr << "release monotonicity violated: " << r.rule.name << " fired at "
                << fmt_num(*r.release_progress) << " before " << main_row.rule.name << " at "
                << fmt_num(*main_row.release_progress) << "\n";
      ++failures;
    }
  }
  return failures ? 1 : 0;
}

// ----------------------------------------------------------------- alpha-sweep

struct AlphaSweepArgs {
  std::string config;
  std::vector<double> alphas{1.0, 0.5, 0.25};
  std::string out_dir;
  std::string out;
};

int cmd_alpha_sweep(const AlphaSweepArgs& a) {
  ExperimentSpec spec = experiment_from_json(load_json(a.config));
  if (!a.out_dir.empty()) spec.out_dir = a.out_dir;
  AlphaSweepReport rep = alpha_sweep(spec, a.alphas);

  Sink sink(a.out);
  sink.out() << "arm\talpha\tseed\tearly_upper_entropy\tearly_upper_logit_rms\tearly_qk_disp\t"
                "final_loss\tfinal_ppl\trelease_step\n";
  auto emit = [&](const std::string& arm, const AlphaSweepRow& r) {
    sink.out() << arm << "\t" << fmt_num(r.alpha) << "\t" << r.seed << "\t"
               << fmt_num(r.early_upper_entropy) << "\t" << fmt_num(r.early_upper_logit_rms)
               << "\t" << fmt_num(r.early_qk_disp) << "\t" << fmt_num(r.final_loss) << "\t"
               << fmt_num(r.final_ppl) << "\t" << r.release_step << "\n";
  };
  for (const AlphaSweepRow& r : rep.control_rows) emit("control", r);
  for (const AlphaSweepRow& r : rep.rows)
    emit("a" + std::to_string(static_cast<long long>(std::llround(r.alpha * 1000.0))), r);

  int failures = 0;
  bool has_one = std::find(a.alphas.begin(), a.alphas.end(), 1.0) != a.alphas.end();
  if (has_one && !rep.neutral_matches_control) {
    std::cerr << "alpha=1 arm does not match the control run\n";
    ++failures;
  }

  // smaller alpha must not sharpen the early readouts: logit rms and q/k
  // displacement nonincreasing, entropy nondecreasing, per seed
  std::map<std::pair<double, uint64_t>, const AlphaSweepRow*> by_key;
  std::set<double, std::greater<double>> alphas_desc;
  std::set<uint64_t> seeds;
  for (const AlphaSweepRow& r : rep.rows) {
    by_key[{r.alpha, r.seed}] = &r;
    alphas_desc.insert(r.alpha);
    seeds.insert(r.seed);
  }
  for (uint64_t seed : seeds) {
    const AlphaSweepRow* prev = nullptr;
    for (double alpha : alphas_desc) {
      auto it = by_key.find({alpha, seed});
      if (it == by_key.end()) continue;
      const AlphaSweepRow* cur = it->second;
      if (prev) {
        if (cur->early_upper_logit_rms > prev->early_upper_logit_rms) {
          std::cerr << "early logit rms rises from alpha " << fmt_num(prev->alpha) << " to "
                    << fmt_num(cur->alpha) << " at seed " << seed << "\n";
          ++failures;
        }
        if (cur->early_qk_disp > prev->early_qk_disp) {
          std::cerr << "early q/k displacement rises from alpha " << fmt_num(prev->alpha)
                    << " to " << fmt_num(cur->alpha) << " at seed " << seed << "\n";
          ++failures;
        }
        if (cur->early_upper_entropy < prev->early_upper_entropy) {
          std::cerr << "early entropy falls from alpha " << fmt_num(prev->alpha) << " to "
                    << fmt_num(cur->alpha) << " at seed " << seed << "\n";
          ++failures;
        }
      }
      prev = cur;
    }
  }
  return failures ? 1 : 0;
}

// -------------------------------------------------------------------- theory

struct TheoryArgs {
  std::string suite;
  int64_t cases = 100;
  uint64_t seed = 1;
  std::string out;
  double lambda_bar = 1.0;
  double alpha = 0.25;
  double eta = 1e-2;
  int64_t samples = 100000;
  int64_t rows = 200;
};

const char* gate_name(theory::GateFn f) {
  switch (f) {
    case theory::GateFn::gelu: return "gelu";
    case theory::GateFn::silu: return "silu";
    case theory::GateFn::relu: return "relu";
    case theory::GateFn::identity: return "identity";
    case theory::GateFn::constant_one: return "constant_one";
  }
  return "?";
}

uint64_t case_seed(uint64_t base, int64_t i) {
  return base + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(i + 1);
}

int cmd_theory(const TheoryArgs& a) {
  if (a.cases < 1) throw ConfigError("--cases must be positive");
  Sink sink(a.out);
  int64_t failures = 0;

  auto family_of = [](int64_t i) {
    return i % 2 == 0 ? theory::AdjointFamily::softmax_rows : theory::AdjointFamily::dense_random;
  };
  auto family_name = [](theory::AdjointFamily f) {
    return f == theory::AdjointFamily::softmax_rows ? "softmax_rows" : "dense_random";
  };

  for (int64_t i = 0; i < a.cases; ++i) {
    uint64_t cs = case_seed(a.seed, i);
    njson j;
    j["kind"] = "case";
    j["suite"] = a.suite;
    j["case"] = i;
    j["seed"] = cs;
    bool pass = false;

    if (a.suite == "update-bound") {
      theory::AdjointFamily fam = family_of(i);
      theory::TheoryCase c = theory::make_random_case(cs, fam);
      theory::TheoryReport r = theory::check_update_bound(c, a.lambda_bar);
      j["family"] = family_name(fam);
      j["n"] = c.n;
      j["d"] = c.d;
      j["d_k"] = c.d_k;
      j["eta_q"] = c.eta_q;
      j["eta_k"] = c.eta_k;
      j["lhs_first_order"] = r.lhs_first_order;
      j["lhs_exact"] = r.lhs_exact;
      j["lhs_remainder"] = r.lhs_remainder;
      j["bound_first_order"] = r.bound_first_order;
      j["bound_r2"] = r.bound_r2;
      j["lambda_q"] = r.lambda_q;
      j["lambda_k"] = r.lambda_k;
      j["ct_measured"] = r.ct_measured;
      j["ct_supplied"] = r.ct_supplied;
      j["bound_localized"] = r.bound_localized;
      j["localized_checked"] = r.localized_checked;
      j["pass_first_order"] = r.pass_first_order;
      j["pass_r2"] = r.pass_r2;
      j["pass_localized"] = r.pass_localized;
      pass = r.pass;
    } else if (a.suite == "alpha") {
      theory::AdjointFamily fam = family_of(i);
      theory::TheoryCase c = theory::make_random_case(cs, fam);
      theory::AlphaScalingReport r = theory::alpha_scaling_check(c, a.alpha, a.eta);
      j["family"] = family_name(fam);
      j["alpha"] = a.alpha;
      j["eta"] = a.eta;
      j["first_order_ratio_err"] = r.first_order_ratio_err;
      j["residual"] = r.residual;
      j["residual_half"] = r.residual_half;
      j["ratio"] = r.ratio;
      pass = r.pass;
    } else if (a.suite == "rho0") {
      theory::GatedEnergyCase g;
      g.samples = a.samples;
      if (i == 0 || i == 1) {
        // the two production-scale reference configurations
        g.m = 3840;
        g.r = 2560;
        g.nu = 0.384;
        g.phi = theory::GateFn::gelu;
        g.psi = i == 0 ? theory::GateFn::gelu : theory::GateFn::silu;
      } else {
        Rng rng(cs);
        static const theory::GateFn pool[4] = {theory::GateFn::gelu, theory::GateFn::silu,
                                               theory::GateFn::relu, theory::GateFn::identity};
        g.m = 16 + static_cast<int64_t>(rng.uniform_below(113));
        g.r = static_cast<int64_t>(rng.uniform_below(static_cast<uint64_t>(2 * g.m + 1)));
        g.nu = std::exp(std::log(0.1) + rng.uniform() * std::log(40.0));
        g.tau_s = std::exp(std::log(0.5) + rng.uniform() * std::log(4.0));
        g.tau_g = std::exp(std::log(0.5) + rng.uniform() * std::log(4.0));
        g.phi = pool[rng.uniform_below(4)];
        g.psi = pool[rng.uniform_below(4)];
      }
      double analytic = theory::rho0_analytic(g);
      theory::Rho0Estimate mc = theory::rho0_monte_carlo(g, cs);
      double err = std::fabs(mc.value - analytic);
      double tol = 5.0 * mc.stderr_ + 1e-3 * (analytic + 0.01);
      j["phi"] = gate_name(g.phi);
      j["psi"] = gate_name(g.psi);
      j["m"] = g.m;
      j["r"] = g.r;
      j["nu"] = g.nu;
      j["tau_s"] = g.tau_s;
      j["tau_g"] = g.tau_g;
      j["analytic"] = analytic;
      j["mc"] = mc.value;
      j["mc_stderr"] = mc.stderr_;
      j["samples"] = mc.samples;
      j["abs_err"] = err;
      pass = err <= tol;
    } else if (a.suite == "contraction") {
      Rng rng(cs);
      double prior = std::exp(std::log(0.01) + rng.uniform() * std::log(1000.0));
      double ffn_a = i % 10 == 0 ? 0.0 : std::exp(std::log(0.01) + rng.uniform() * std::log(1000.0));
      double rho0 = 0.01 + 0.99 * rng.uniform();
      double rb = theory::residual_contraction_rhobar(prior, ffn_a, rho0);
      bool props = rb > 0.0 && rb <= 1.0 && rb >= std::min(rho0, 1.0) - 1e-12;
      if (ffn_a == 0.0) props = props && rb == 1.0;
      if (rb < 1.0) props = props && ffn_a > 0.0 && rho0 < 1.0;
      theory::TheoryCase c = theory::make_random_case(cs + 1, family_of(i));
      theory::SuppressionReport sr = theory::suppression_composition(c, rb);
      j["prior"] = prior;
      j["a"] = ffn_a;
      j["rho0"] = rho0;
      j["rhobar"] = rb;
      j["props_pass"] = props;
      j["scale_err"] = sr.scale_err;
      j["pass_scaling"] = sr.pass_scaling;
      j["pass_exact"] = sr.pass_exact;
      pass = props && sr.pass_scaling && sr.pass_exact;
    } else if (a.suite == "entropy") {
      if (a.rows < 1) throw ConfigError("--rows must be positive");
      std::vector<Eigen::VectorXd> logit_rows = theory::sample_logit_rows(a.rows, 2, 64, cs);
      static const double grid[] = {0.5, 0.25, 0.1, 0.05, 0.01, 0.001};
      theory::EntropyCheckResult r = theory::verify_entropy_lemma(logit_rows, grid);
      j["rows"] = r.rows;
      j["pairs"] = r.pairs;
      j["violations"] = r.violations;
      j["worst_margin"] = r.worst_margin;
      pass = r.pass;
    } else {
      throw UsageError("unknown theory suite: " + a.suite);
    }

    j["pass"] = pass;
    if (!pass) ++failures;
    sink.out() << j.dump() << "\n";
  }

  njson summary;
  summary["kind"] = "summary";
  summary["suite"] = a.suite;
  summary["cases"] = a.cases;
  summary["failures"] = failures;
  summary["pass"] = failures == 0;
  sink.out() << summary.dump() << "\n";
  if (!a.out.empty() && a.out != "-")
    std::cout << a.suite << ": " << (a.cases - failures) << "/" << a.cases << " cases passed\n";
  return failures ? 1 : 0;
}

// --------------------------------------------------------------------- probe

struct ProbeArgs {
  std::string checkpoint;
  std::string shard;
  std::string out;
  int64_t val_batches = 1;
  int64_t batch_size = 8;
  double val_frac = 0.02;
  double power_tol = 1e-8;
  int64_t power_iters = 1000;
};

int cmd_probe(const ProbeArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  TokenFile tf = load_tokens(a.shard);
  if (tf.vocab != model.config().vocab)
    throw DataError("token file vocab does not match the model vocab");

  BatchConfig bc;
  bc.seq_len = model.config().seq_len;
  bc.batch_size = a.batch_size;
  bc.val_frac = a.val_frac;
  BatchStream stream(std::move(tf.tokens), tf.vocab, bc);

  probes::ProbeConfig pc;
  pc.val_batches = a.val_batches;
  pc.power_tol = a.power_tol;
  pc.power_iters = a.power_iters;
  probes::ProbeRecord rec = probes::run_probes(model, stream, pc);

  njson j;
  j["kind"] = "probe";
  j["checkpoint"] = a.checkpoint;
  j["shard"] = a.shard;
  njson fields = probe_record_json(rec);
  for (const auto& item : fields.items())
    if (item.key() != "step" && item.key() != "tokens") j[item.key()] = item.value();
  Sink sink(a.out);
  sink.out() << j.dump() << "\n";
  return 0;
}

// -------------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> logs;
  std::string dir;
  std::string control = "control";
  double early_frac = 0.03;
  std::string out;
  std::vector<std::string> compare;  // two paths: byte-equality check
};

struct LogRun {
  std::string path;
  std::string run_id;
  std::string arm;
  uint64_t seed = 0;
  int64_t total = 0;
  bool failed = false;
  bool saw_final = false;
  int64_t release_step = -1;
  std::vector<probes::ProbeRecord> evals;
};

LogRun parse_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open metrics log: " + path);
  LogRun run;
  run.path = path;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    njson j = njson::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("kind")) continue;
    std::string kind = j.value("kind", "");
    if (kind == "meta") {
      run.run_id = j.value("run_id", "");
      run.arm = j.value("arm", "");
      run.seed = j.value("seed", uint64_t{0});
      run.total = j.value("total_steps", int64_t{0});
    } else if (kind == "eval") {
      probes::ProbeRecord r;
      r.step = j.value("step", int64_t{-1});
      r.tokens = j.value("tokens", int64_t{-1});
      r.val_loss = j.value("val_loss", 0.0);
      r.val_ppl = j.value("val_ppl", 0.0);
      r.lower_copy = j.value("lower_copy", 0.0);
      r.upper_entropy = j.value("upper_entropy", 0.0);
      r.lower_entropy = j.value("lower_entropy", 0.0);
      r.upper_logit_rms = j.value("upper_logit_rms", 0.0);
      r.lower_logit_rms = j.value("lower_logit_rms", 0.0);
      if (j.contains("qk_disp")) {
        r.qk_disp = j.at("qk_disp").get<std::vector<double>>();
        r.qk_disp_mean = j.value("qk_disp_mean", 0.0);
      }
      r.ablation_ppl_delta = j.value("ablation_ppl_delta", 0.0);
      run.evals.push_back(std::move(r));
    } else if (kind == "release") {
      run.release_step = j.value("release_step", int64_t{-1});
    } else if (kind == "final") {
      run.saw_final = true;
      run.failed = j.value("failed", false);
    } else if (kind == "abort") {
      run.failed = true;
    }
  }
  if (run.run_id.empty()) throw FormatError("no meta record in " + path);
  // a log without a final record was cut off mid-run
  if (!run.saw_final) run.failed = true;
  return run;
}

int cmd_report(const ReportArgs& a) {
  if (!a.compare.empty()) {
    std::ifstream fa(a.compare[0], std::ios::binary);
    std::ifstream fb(a.compare[1], std::ios::binary);
    if (!fa) throw FormatError("cannot open " + a.compare[0]);
    if (!fb) throw FormatError("cannot open " + a.compare[1]);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    bool equal = sa.str() == sb.str();
    std::cout << (equal ? "identical" : "different") << "\t" << a.compare[0] << "\t"
              << a.compare[1] << "\n";
    return equal ? 0 : 1;
  }

  std::vector<std::string> paths = a.logs;
  if (!a.dir.empty()) {
    std::vector<std::string> found;
    for (const auto& entry : std::filesystem::directory_iterator(a.dir))
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
        found.push_back(entry.path().string());
    std::sort(found.begin(), found.end());
    paths.insert(paths.end(), found.begin(), found.end());
  }
  if (paths.empty()) throw UsageError("report needs metrics logs (positional paths or --dir)");

  std::vector<LogRun> runs;
  std::set<std::pair<std::string, uint64_t>> seen;
  for (const std::string& p : paths) {
    LogRun run = parse_log(p);
    if (!seen.insert({run.arm, run.seed}).second)
      throw UsageError("duplicate run for arm " + run.arm + " seed " + std::to_string(run.seed));
    runs.push_back(std::move(run));
  }

  std::vector<std::string> arms;
  std::set<uint64_t> seed_set;
  for (const LogRun& r : runs) {
    if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
    seed_set.insert(r.seed);
  }
  if (std::find(arms.begin(), arms.end(), a.control) == arms.end())
    throw UsageError("control arm '" + a.control + "' not present in the logs");

  auto find_run = [&](const std::string& arm, uint64_t seed) -> const LogRun* {
    for (const LogRun& r : runs)
      if (r.arm == arm && r.seed == seed) return &r;
    return nullptr;
  };
  auto ok = [](const LogRun* r) { return r && !r->failed && !r->evals.empty(); };

  // every paired delta must come from runs that share the experiment prefix
  // and carry the expected <exp>.<arm>.s<seed> identity
  auto audit = [](const LogRun& r) {
    std::string suffix = "." + r.arm + ".s" + std::to_string(r.seed);
    if (r.run_id.size() <= suffix.size() ||
        r.run_id.compare(r.run_id.size() - suffix.size(), suffix.size(), suffix) != 0)
      throw UsageError("pairing audit failed: run id '" + r.run_id + "' does not match arm '" +
                       r.arm + "' seed " + std::to_string(r.seed));
    return r.run_id.substr(0, r.run_id.size() - suffix.size());
  };

  double target = 0.0;
  std::vector<double> ctl_finals;
  for (uint64_t s : seed_set) {
    const LogRun* c = find_run(a.control, s);
    if (ok(c)) ctl_finals.push_back(c->evals.back().val_loss);
  }
  if (!ctl_finals.empty()) {
    for (double v : ctl_finals) target += v;
    target /= static_cast<double>(ctl_finals.size());
  }

  struct Row {
    const LogRun* run;
    double final_loss, final_ppl;
    probes::ProbeRecord early;
    std::optional<double> t2t;
  };
  std::map<std::pair<std::string, uint64_t>, Row> rows;
  for (const LogRun& r : runs) {
    if (!ok(&r)) continue;
    Row row;
    row.run = &r;
    row.final_loss = r.evals.back().val_loss;
    row.final_ppl = r.evals.back().val_ppl;
    int64_t want = std::llround(a.early_frac * r.total);
    size_t best = 0;
    for (size_t i = 1; i < r.evals.size(); ++i)
      if (std::llabs(r.evals[i].step - want) < std::llabs(r.evals[best].step - want)) best = i;
    row.early = r.evals[best];
    if (!ctl_finals.empty()) {
      std::vector<std::pair<int64_t, double>> curve;
      for (const probes::ProbeRecord& e : r.evals) curve.emplace_back(e.tokens, e.val_loss);
      row.t2t = probes::tokens_to_target(curve, target);
    }
    rows.emplace(std::make_pair(r.arm, r.seed), std::move(row));
  }

  struct Field {
    const char* name;
    double (*get)(const Row&);
    bool (*has)(const Row&);
  };
  static const Field kFields[] = {
      {"final_loss", [](const Row& r) { return r.final_loss; }, [](const Row&) { return true; }},
      {"final_ppl", [](const Row& r) { return r.final_ppl; }, [](const Row&) { return true; }},
      {"early_upper_entropy", [](const Row& r) { return r.early.upper_entropy; },
       [](const Row&) { return true; }},
      {"early_upper_logit_rms", [](const Row& r) { return r.early.upper_logit_rms; },
       [](const Row&) { return true; }},
      {"early_qk_disp", [](const Row& r) { return r.early.qk_disp[0]; },
       [](const Row& r) { return !r.early.qk_disp.empty(); }},
      {"early_ablation_ppl_delta", [](const Row& r) { return r.early.ablation_ppl_delta; },
       [](const Row&) { return true; }},
      {"tokens_to_target", [](const Row& r) { return *r.t2t; },
       [](const Row& r) { return r.t2t.has_value(); }},
  };

  njson j;
  j["control_arm"] = a.control;
  j["target_loss"] = target;
  j["runs"] = njson::array();
  j["incomplete_pairs"] = njson::array();
  for (const LogRun& r : runs) {
    njson rj;
    rj["run_id"] = r.run_id;
    rj["arm"] = r.arm;
    rj["seed"] = r.seed;
    rj["failed"] = !ok(&r);
    auto it = rows.find({r.arm, r.seed});
    if (it != rows.end()) {
      rj["final_loss"] = it->second.final_loss;
      rj["final_ppl"] = it->second.final_ppl;
      rj["release_step"] = r.release_step;
      if (it->second.t2t) rj["tokens_to_target"] = *it->second.t2t;
      rj["early"] = probe_record_json(it->second.early);
    } else {
      j["incomplete_pairs"].push_back(r.run_id);
    }
    j["runs"].push_back(std::move(rj));
  }

  j["paired"] = njson::array();
  std::ostringstream table;
  table << "arm\tfield\tmean\tstddev\tpairs\n";
  for (const std::string& arm : arms) {
    if (arm == a.control) continue;
    for (const Field& f : kFields) {
      std::vector<double> deltas;
      for (uint64_t s : seed_set) {
        auto run_it = rows.find({arm, s});
        auto ctl_it = rows.find({a.control, s});
        if (run_it == rows.end() || ctl_it == rows.end()) continue;
        if (audit(*run_it->second.run) != audit(*ctl_it->second.run))
          throw UsageError("pairing audit failed: " + run_it->second.run->run_id + " and " +
                           ctl_it->second.run->run_id + " come from different experiments");
        if (!f.has(run_it->second) || !f.has(ctl_it->second)) continue;
        deltas.push_back(f.get(run_it->second) - f.get(ctl_it->second));
      }
      double mean = 0.0, stddev = 0.0;
      if (!deltas.empty()) {
        for (double d : deltas) mean += d;
        mean /= static_cast<double>(deltas.size());
        if (deltas.size() > 1) {
          for (double d : deltas) stddev += (d - mean) * (d - mean);
          stddev = std::sqrt(stddev / static_cast<double>(deltas.size() - 1));
        }
      }
      j["paired"].push_back({{"arm", arm},
                             {"field", f.name},
                             {"mean", mean},
                             {"stddev", stddev},
                             {"pairs", static_cast<int64_t>(deltas.size())}});
      table << arm << "\t" << f.name << "\t" << fmt_num(mean) << "\t" << fmt_num(stddev) << "\t"
            << deltas.size() << "\n";
    }
  }

  Sink sink(a.out);
  sink.out() << j.dump(2) << "\n";
  if (!a.out.empty() && a.out != "-") std::cout << table.str();
  return 0;
}

// ----------------------------------------------------------------- plot-data

struct PlotArgs {
  std::string kind;
  std::vector<std::string> logs;
  std::string out;
  double copy_threshold = 0.005;
  double sharpness = 0.95;
};

int cmd_plot_data(const PlotArgs& a) {
  PlotKind kind = plot_kind_from_name(a.kind);
  MaturityConfig mc;
  mc.copy_threshold = a.copy_threshold;
  mc.entropy_sharpness = a.sharpness;
  PlotData data = emit_plot_data(a.logs, kind, mc);
  Sink sink(a.out);
  sink.out() << data.table;
  std::cerr << "rows=" << data.rows << " skipped=" << data.skipped << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"declab: decoder-training experiment harness"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-corpus", "generate a synthetic copy-heavy token shard");
  gen_cmd->add_option("--vocab", gen.vocab, "vocabulary size");
  gen_cmd->add_option("--length", gen.length, "token count");
  gen_cmd->add_option("--repeat-rate", gen.repeat_rate, "probability of repeating a recent token");
  gen_cmd->add_option("--window", gen.window, "lookback window for repeats");
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--out", gen.out, "output shard path")->required();

  RunArgs run;
  CLI::App* run_cmd = app.add_subcommand("run", "run a paired experiment from a JSON config");
  run_cmd->add_option("--config", run.config, "experiment config (JSON)")->required();
  run_cmd->add_option("--out-dir", run.out_dir, "override the config's out_dir");
  run_cmd->add_option("--report", run.report, "report JSON path (default <out_dir>/<name>.report.json)");

  ReplayArgs replay;
  CLI::App* replay_cmd =
      app.add_subcommand("replay-release", "replay release-rule variants over a logged trace");
  replay_cmd->add_option("--log", replay.log, "metrics JSONL to extract the trace from");
  replay_cmd->add_option("--trace", replay.trace, "2-column progress/score text file");
  replay_cmd->add_option("--variants", replay.variants, "rule variants (JSON array)");
  replay_cmd->add_option("--out", replay.out, "output table path (default stdout)");

  AlphaSweepArgs sweep;
  CLI::App* sweep_cmd =
      app.add_subcommand("alpha-sweep", "one adaptive arm per alpha against a shared control");
  sweep_cmd->add_option("--config", sweep.config, "base experiment config (JSON; arms ignored)")
      ->required();
  sweep_cmd->add_option("--alphas", sweep.alphas, "alpha values in (0,1]")->delimiter(',');
  sweep_cmd->add_option("--out-dir", sweep.out_dir, "override the config's out_dir");
  sweep_cmd->add_option("--out", sweep.out, "output table path (default stdout)");

  TheoryArgs theory;
  CLI::App* theory_cmd = app.add_subcommand("theory", "randomized verification suites");
  theory_cmd
      ->add_option("--suite", theory.suite, "update-bound | alpha | rho0 | contraction | entropy")
      ->required()
      ->check(CLI::IsMember({"update-bound", "alpha", "rho0", "contraction", "entropy"}));
  theory_cmd->add_option("--cases", theory.cases, "number of cases");
  theory_cmd->add_option("--seed", theory.seed, "base seed");
  theory_cmd->add_option("--out", theory.out, "JSONL report path (default stdout)");
  theory_cmd->add_option("--lambda-bar", theory.lambda_bar, "locality bound for the localized check");
  theory_cmd->add_option("--alpha", theory.alpha, "alpha for the scaling suite");
  theory_cmd->add_option("--eta", theory.eta, "base step size for the scaling suite");
  theory_cmd->add_option("--samples", theory.samples, "Monte-Carlo samples per rho0 case");
  theory_cmd->add_option("--rows", theory.rows, "softmax rows per entropy case");

  ProbeArgs probe;
  CLI::App* probe_cmd = app.add_subcommand("probe", "recompute a probe record from a checkpoint");
  probe_cmd->add_option("--checkpoint", probe.checkpoint, "checkpoint file")->required();
  probe_cmd->add_option("--shard", probe.shard, "token shard for evaluation windows")->required();
  probe_cmd->add_option("--out", probe.out, "output path (default stdout)");
  probe_cmd->add_option("--val-batches", probe.val_batches, "validation batches to probe");
  probe_cmd->add_option("--batch-size", probe.batch_size, "evaluation batch size");
  probe_cmd->add_option("--val-frac", probe.val_frac, "held-out tail fraction of the shard");
  probe_cmd->add_option("--power-tol", probe.power_tol, "power-iteration tolerance");
  probe_cmd->add_option("--power-iters", probe.power_iters, "power-iteration cap");

  ReportArgs report;
  CLI::App* report_cmd = app.add_subcommand("report", "aggregate paired stats from metrics logs");
  report_cmd->add_option("logs", report.logs, "metrics JSONL paths");
  report_cmd->add_option("--dir", report.dir, "directory to scan for *.jsonl logs");
  report_cmd->add_option("--control", report.control, "control arm name");
  report_cmd->add_option("--early-frac", report.early_frac, "early-snapshot progress");
  report_cmd->add_option("--out", report.out, "report JSON path (default stdout)");
  report_cmd->add_option("--compare", report.compare, "byte-compare two files and exit")
      ->expected(2);

  PlotArgs plot;
  CLI::App* plot_cmd = app.add_subcommand("plot-data", "emit tidy plot tables from metrics logs");
  plot_cmd
      ->add_option("--kind", plot.kind,
                   "entropy-curve | logit-curve | ablation-curve | maturity-events")
      ->required();
  plot_cmd->add_option("logs", plot.logs, "metrics JSONL paths")->required();
  plot_cmd->add_option("--out", plot.out, "output table path (default stdout)");
  plot_cmd->add_option("--copy-threshold", plot.copy_threshold, "lower-copy crossing level");
  plot_cmd->add_option("--sharpness", plot.sharpness, "upper-entropy sharpness level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_corpus(gen);
    if (run_cmd->parsed()) return cmd_run(run);
    if (replay_cmd->parsed()) return cmd_replay(replay);
    if (sweep_cmd->parsed()) return cmd_alpha_sweep(sweep);
    if (theory_cmd->parsed()) return cmd_theory(theory);
    if (probe_cmd->parsed()) return cmd_probe(probe);
    if (report_cmd->parsed()) return cmd_report(report);
    if (plot_cmd->parsed()) return cmd_plot_data(plot);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 5;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 6;
  }
  return 0;
}
