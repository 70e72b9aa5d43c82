#include "declab/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "declab/ops.hpp"
#include "declab/tensor.hpp"
#include "json.hpp"

namespace declab {

namespace {

using njson = nlohmann::ordered_json;

njson multipliers_json(const GroupMultipliers& m) {
  njson j;
  for (int g = 0; g < kParamGroupCount; ++g)
    j[param_group_name(static_cast<ParamGroup>(g))] = m[static_cast<size_t>(g)];
  return j;
}

njson probe_json(const probes::ProbeRecord& r) {
  njson j;
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

struct MetricsLog {
  std::ofstream os;
  bool enabled = false;

  void open(const std::string& path) {
    os.open(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open metrics log for writing: " + path);
    enabled = true;
  }
  void write(const njson& j) {
    if (!enabled) return;
    os << j.dump() << "\n";
    if (!os) throw FormatError("metrics log write failed");
  }
};

}  // namespace

void TrainConfig::validate() const {
  schedule.validate();
  optimizer.validate();
  intervention.validate();
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (eval_every == 0 && (eval_frac <= 0.0 || eval_frac > 1.0))
    throw ConfigError("eval_frac must be in (0,1]");
  if (stop_frac <= 0.0 || stop_frac > 1.0) throw ConfigError("stop_frac must be in (0,1]");
  for (double f : checkpoint_fracs)
    if (f <= 0.0 || f > 1.0) throw ConfigError("checkpoint fractions must be in (0,1]");
  if (run_id.empty()) throw ConfigError("run_id must be nonempty");
}

TrainResult train_loop(Model& model, BatchStream& stream, const TrainConfig& cfg) {
  cfg.validate();
  const int64_t total = cfg.schedule.total_steps;
  Schedule sched(cfg.schedule);
  AdamW opt(model, cfg.optimizer);
  ReleaseController rc(cfg.intervention, total);
  const bool hinge_mode = cfg.intervention.mode == InterventionMode::entropy_floor;

  int64_t eval_every = cfg.eval_every > 0
                           ? cfg.eval_every
                           : std::max<int64_t>(1, std::llround(cfg.eval_frac * total));
  int64_t stop_step = std::max<int64_t>(
      1, std::min<int64_t>(total, std::llround(cfg.stop_frac * total)));
  std::set<int64_t> ckpt_steps;
  for (double f : cfg.checkpoint_fracs) {
    int64_t s = std::max<int64_t>(1, std::min<int64_t>(total, std::llround(f * total)));
    if (s <= stop_step) ckpt_steps.insert(s);
  }

  TrainResult res;
  MetricsLog log;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    res.metrics_path = cfg.out_dir + "/" + cfg.run_id + ".jsonl";
    log.open(res.metrics_path);
  }

  const ModelConfig& mc = model.config();
  {
    njson meta;
    meta["kind"] = "meta";
    meta["run_id"] = cfg.run_id;
    meta["arm"] = cfg.arm;
    meta["seed"] = cfg.seed;
    meta["total_steps"] = total;
    meta["stop_step"] = stop_step;
    meta["eval_every"] = eval_every;
    meta["model"] = {{"n_layers", mc.n_layers}, {"d_model", mc.d_model},
                     {"n_heads", mc.n_heads},   {"seq_len", mc.seq_len},
                     {"vocab", mc.vocab},       {"ffn", ffn_kind_name(mc.ffn)},
                     {"norm", norm_kind_name(mc.norm)}};
    meta["schedule"] = {{"peak_lr", cfg.schedule.peak_lr},
                        {"warmup_frac", cfg.schedule.warmup_frac},
                        {"final_frac", cfg.schedule.final_frac}};
    meta["optimizer"] = {{"beta1", cfg.optimizer.beta1},
                         {"beta2", cfg.optimizer.beta2},
                         {"eps", cfg.optimizer.eps},
                         {"weight_decay", cfg.optimizer.weight_decay}};
    const InterventionConfig& iv = cfg.intervention;
    meta["intervention"] = {{"mode", intervention_mode_name(iv.mode)},
                            {"alpha", iv.alpha},
                            {"threshold", iv.threshold},
                            {"patience", iv.patience},
                            {"min_release_frac", iv.min_release_frac},
                            {"force_release_frac", iv.force_release_frac},
                            {"ramp_frac", iv.ramp_frac},
                            {"fixed_release_frac", iv.fixed_release_frac},
                            {"global_scale", iv.global_scale},
                            {"floor_h0", iv.floor_h0},
                            {"floor_lambda", iv.floor_lambda}};
    meta["val_batches"] = cfg.probes.val_batches;
    log.write(meta);
  }

  std::vector<Tensor> reference = probes::upper_bilinear(model);

  auto abort_run = [&](int64_t step, const std::string& why) {
    res.failed = true;
    res.fail_reason = why;
    njson j;
    j["kind"] = "abort";
    j["step"] = step;
    j["reason"] = why;
    log.write(j);
  };

  for (int64_t step = 1; step <= stop_step && !res.failed; ++step) {
    Batch b = stream.next_train();
    double lr = sched.lr_at(step);
    GroupMultipliers muls = rc.multipliers(step);
    bool hinge = hinge_mode && rc.penalty_active(step);

    opt.zero_grads();
    double loss_val = 0.0, penalty_val = 0.0;
    try {
      Tape tape;
      CaptureRequest req;
      req.attn_probs = true;
      req.upper_only = true;
      ForwardCaptures caps;
      Tensor loss = model.loss(model.view(), b.inputs, b.targets, b.batch_size,
                               hinge ? &req : nullptr, hinge ? &caps : nullptr);
      Tensor objective = loss;
      if (hinge) {
        Tensor h = ops::causal_entropy_mean(caps.attn_probs[0]);
        for (size_t i = 1; i < caps.attn_probs.size(); ++i)
          h = ops::add(h, ops::causal_entropy_mean(caps.attn_probs[i]));
        if (caps.attn_probs.size() > 1)
          h = ops::scale(h, 1.0 / static_cast<double>(caps.attn_probs.size()));
        Tensor pen =
            ops::entropy_floor_penalty(h, cfg.intervention.floor_h0, cfg.intervention.floor_lambda);
        penalty_val = pen.item();
        objective = ops::add(loss, pen);
      }
      loss_val = loss.item();
      if (!std::isfinite(loss_val) || !std::isfinite(penalty_val))
        throw NumericError("non-finite loss");
      tape.backward(objective);
      opt.step(lr, muls);
    } catch (const NumericError& e) {
      abort_run(step, e.what());
      break;
    }

    res.steps_done = step;
    res.tokens_done += b.batch_size * b.seq_len;
    res.final_train_loss = loss_val;

    {
      njson j;
      j["kind"] = "step";
      j["step"] = step;
      j["tokens"] = res.tokens_done;
      j["loss"] = loss_val;
      j["ppl"] = std::exp(loss_val);
      if (hinge) j["penalty"] = penalty_val;
      j["lr"] = lr;
      j["mul"] = multipliers_json(muls);
      log.write(j);
    }

    if (step % eval_every == 0 || step == stop_step) {
      probes::ProbeRecord rec = run_probes(model, stream, cfg.probes, reference);
      rec.step = step;
      rec.tokens = res.tokens_done;
      res.evals.push_back(rec);
      njson j = probe_json(rec);
      njson e;
      e["kind"] = "eval";
      e["step"] = step;
      e["tokens"] = res.tokens_done;
      for (auto& [k, v] : j.items()) e[k] = v;
      log.write(e);

      if (rc.observe(step, rec.lower_copy)) {
        njson r;
        r["kind"] = "release";
        r["step"] = step;
        r["release_step"] = rc.release_step();
        r["forced"] = rc.forced();
        r["hits"] = rc.hits();
        log.write(r);
      }
    }

    if (ckpt_steps.count(step) && !cfg.out_dir.empty()) {
      std::string path = cfg.out_dir + "/" + cfg.run_id + ".step" + std::to_string(step) + ".ckpt";
      save_checkpoint(path, model);
      res.checkpoints.emplace_back(step, path);
      res.last_checkpoint = path;
      njson j;
      j["kind"] = "checkpoint";
      j["step"] = step;
      j["path"] = path;
      log.write(j);
    }
  }

  res.release_step = rc.release_step();
  res.release_forced = rc.forced();
  {
    njson j;
    j["kind"] = "final";
    j["steps"] = res.steps_done;
    j["tokens"] = res.tokens_done;
    j["failed"] = res.failed;
    j["final_train_loss"] = res.final_train_loss;
    log.write(j);
  }
  return res;
}

}  // namespace declab
