#include "declab/probes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "declab/blas.hpp"

namespace declab::probes {

namespace {

void require_rank2(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 2) throw UsageError(std::string(what) + " must be a matrix");
}

// rows of a [rows, n, n] attention capture, entries fetched in double
template <class T>
void entropy_accum(const T* p, int64_t rows, int64_t n, double& sum, int64_t& count) {
  for (int64_t r = 0; r < rows; ++r) {
    const T* block = p + r * n * n;
    for (int64_t i = 1; i < n; ++i) {
      const T* row = block + i * n;
      double h = 0.0;
      for (int64_t j = 0; j <= i; ++j) {
        double v = static_cast<double>(row[j]);
        if (v > 0.0) h -= v * std::log(v);
      }
      sum += h / std::log(static_cast<double>(i + 1));
      ++count;
    }
  }
}

template <class T>
void sq_accum_causal(const T* p, int64_t rows, int64_t n, double& sum, int64_t& count) {
  for (int64_t r = 0; r < rows; ++r) {
    const T* block = p + r * n * n;
    for (int64_t i = 0; i < n; ++i) {
      const T* row = block + i * n;
      for (int64_t j = 0; j <= i; ++j) {
        double v = static_cast<double>(row[j]);
        sum += v * v;
        ++count;
      }
    }
  }
}

void check_attn_capture(const Tensor& t) {
  if (t.rank() != 3 || t.shape()[1] != t.shape()[2])
    throw UsageError("attention capture must be [rows, n, n]");
}

}  // namespace

CopyScore lower_copy_score(std::span<const Tensor> probs, std::span<const int32_t> tokens,
                           int64_t batch, int64_t heads) {
  CopyScore out;
  if (probs.empty()) return out;
  check_attn_capture(probs[0]);
  int64_t n = probs[0].shape()[1];
  if (batch < 1 || heads < 1) throw UsageError("lower_copy_score: bad batch/heads");
  if (static_cast<int64_t>(tokens.size()) != batch * n)
    throw UsageError("lower_copy_score: token count does not match captures");
  for (const Tensor& t : probs) {
    check_attn_capture(t);
    if (t.shape()[0] != batch * heads || t.shape()[1] != n)
      throw UsageError("lower_copy_score: capture shapes disagree");
  }

  for (int64_t b = 0; b < batch; ++b) {
    const int32_t* toks = tokens.data() + b * n;
    for (int64_t i = 1; i < n; ++i) {
      int64_t j = -1;
      for (int64_t back = i - 1; back >= 0; --back) {
        if (toks[back] == toks[i]) {
          j = back;
          break;
        }
      }
      if (j < 0) continue;
      ++out.valid;
      for (const Tensor& t : probs) {
        for (int64_t h = 0; h < heads; ++h) {
          int64_t flat = ((b * heads + h) * n + i) * n + j;
          out.mass += t.at(flat);
        }
      }
    }
  }
  int64_t denom = out.valid * heads * static_cast<int64_t>(probs.size());
  out.score = denom > 0 ? out.mass / static_cast<double>(denom) : 0.0;
  return out;
}

double attention_entropy(std::span<const Tensor> probs) {
  double sum = 0.0;
  int64_t count = 0;
  for (const Tensor& t : probs) {
    check_attn_capture(t);
    int64_t rows = t.shape()[0], n = t.shape()[1];
    if (t.dtype() == Dtype::f32)
      entropy_accum(t.data<float>(), rows, n, sum, count);
    else
      entropy_accum(t.data<double>(), rows, n, sum, count);
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

double logit_rms(std::span<const Tensor> logits) {
  double sum = 0.0;
  int64_t count = 0;
  for (const Tensor& t : logits) {
    check_attn_capture(t);
    int64_t rows = t.shape()[0], n = t.shape()[1];
    if (t.dtype() == Dtype::f32)
      sq_accum_causal(t.data<float>(), rows, n, sum, count);
    else
      sq_accum_causal(t.data<double>(), rows, n, sum, count);
  }
  return count > 0 ? std::sqrt(sum / static_cast<double>(count)) : 0.0;
}

double write_rms(const Tensor& write) {
  if (!write.defined() || write.numel() == 0) throw UsageError("write_rms: empty capture");
  double sum = 0.0;
  int64_t n = write.numel();
  if (write.dtype() == Dtype::f32) {
    const float* p = write.data<float>();
    for (int64_t i = 0; i < n; ++i) sum += static_cast<double>(p[i]) * static_cast<double>(p[i]);
  } else {
    const double* p = write.data<double>();
    for (int64_t i = 0; i < n; ++i) sum += p[i] * p[i];
  }
  return std::sqrt(sum / static_cast<double>(n));
}

namespace {

double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool normalize(std::vector<double>& v) {
  double n = vec_norm(v);
  if (n == 0.0) return false;
  for (double& x : v) x /= n;
  return true;
}

// Power iteration for the top singular value of a linear map given by
// apply (in -> out) and apply_t (out -> in). Deterministic start vector.
template <class Apply, class ApplyT>
PowerResult power_sv(int64_t dim_in, int64_t dim_out, Apply&& apply, ApplyT&& apply_t,
                     double rel_tol, int64_t max_iters) {
  if (max_iters < 1) throw UsageError("power iteration needs at least one step");
  Rng rng(0x5eed5eedULL);
  std::vector<double> v(static_cast<size_t>(dim_in));
  for (double& x : v) x = rng.normal();
  if (!normalize(v)) return {0.0, true, 0};
  std::vector<double> u(static_cast<size_t>(dim_out));
  PowerResult res;
  double prev = -1.0;
  for (int64_t it = 1; it <= max_iters; ++it) {
    apply(v.data(), u.data());
    double sv = vec_norm(u);
    res.value = sv;
    res.iters = it;
    if (sv == 0.0) {
      res.converged = true;
      return res;
    }
    if (prev >= 0.0 && std::abs(sv - prev) <= rel_tol * sv) {
      res.converged = true;
      return res;
    }
    prev = sv;
    apply_t(u.data(), v.data());
    if (!normalize(v)) {
      res.converged = true;
      return res;
    }
  }
  res.converged = false;
  return res;
}

}  // namespace

PowerResult matrix_top_sv(const Tensor& a, double rel_tol, int64_t max_iters) {
  require_rank2(a, "matrix_top_sv input");
  int64_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> w = a.to_vec();
  auto apply = [&](const double* v, double* out) {
    for (int64_t i = 0; i < m; ++i) {
      double s = 0.0;
      const double* row = w.data() + i * n;
      for (int64_t j = 0; j < n; ++j) s += row[j] * v[j];
      out[i] = s;
    }
  };
  auto apply_t = [&](const double* u, double* out) {
    std::fill(out, out + n, 0.0);
    for (int64_t i = 0; i < m; ++i) {
      const double* row = w.data() + i * n;
      for (int64_t j = 0; j < n; ++j) out[j] += row[j] * u[i];
    }
  };
  return power_sv(n, m, apply, apply_t, rel_tol, max_iters);
}

PowerResult qk_top_sv(const Tensor& wq, const Tensor& wk, double rel_tol, int64_t max_iters) {
  require_rank2(wq, "qk_top_sv wq");
  require_rank2(wk, "qk_top_sv wk");
  if (wq.shape() != wk.shape()) throw UsageError("qk_top_sv: wq and wk shapes differ");
  int64_t d = wq.shape()[0], c = wq.shape()[1];
  std::vector<double> q = wq.to_vec(), k = wk.to_vec();
  std::vector<double> tmp(static_cast<size_t>(c));
  auto matvec = [&](const std::vector<double>& m1, const std::vector<double>& m2,
                    const double* v, double* out) {
    // out = m1 * (m2^T * v), both [d, c]
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (int64_t i = 0; i < d; ++i) {
      const double* row = m2.data() + i * c;
      for (int64_t j = 0; j < c; ++j) tmp[static_cast<size_t>(j)] += row[j] * v[i];
    }
    for (int64_t i = 0; i < d; ++i) {
      const double* row = m1.data() + i * c;
      double s = 0.0;
      for (int64_t j = 0; j < c; ++j) s += row[j] * tmp[static_cast<size_t>(j)];
      out[i] = s;
    }
  };
  auto apply = [&](const double* v, double* out) { matvec(q, k, v, out); };
  auto apply_t = [&](const double* u, double* out) { matvec(k, q, u, out); };
  return power_sv(d, d, apply, apply_t, rel_tol, max_iters);
}

std::vector<Tensor> upper_bilinear(const Model& m) {
  const ModelConfig& mc = m.config();
  std::vector<Tensor> out;
  for (int64_t l = m.upper_start(); l < mc.n_layers; ++l) {
    std::string p = "layers." + std::to_string(l) + ".attn.";
    std::vector<double> q = m.param(p + "wq").to_vec();
    std::vector<double> k = m.param(p + "wk").to_vec();
    int64_t d = mc.d_model;
    std::vector<double> b(static_cast<size_t>(d * d), 0.0);
    blas::gemm(false, true, d, d, d, 1.0, q.data(), k.data(), 0.0, b.data());
    out.push_back(Tensor::from_f64({d, d}, std::move(b)));
  }
  return out;
}

std::vector<double> qk_displacement(const Model& m, std::span<const Tensor> reference) {
  std::vector<Tensor> now = upper_bilinear(m);
  if (reference.size() != now.size())
    throw UsageError("qk_displacement: reference does not match the upper layer count");
  std::vector<double> out;
  for (size_t i = 0; i < now.size(); ++i) {
    if (reference[i].shape() != now[i].shape())
      throw UsageError("qk_displacement: reference shape mismatch");
    const double* a = now[i].data<double>();
    const double* r = reference[i].data<double>();
    double s = 0.0;
    for (int64_t j = 0; j < now[i].numel(); ++j) {
      double dlt = a[j] - r[j];
      s += dlt * dlt;
    }
    out.push_back(std::sqrt(s));
  }
  return out;
}

std::optional<ImmatureProjector> estimate_projector(const Model& a, const Model& b, int64_t layer,
                                                    int64_t k, std::span<const int32_t> tokens,
                                                    int64_t batch) {
  const ModelConfig& ca = a.config();
  const ModelConfig& cb = b.config();
  if (ca.n_layers != cb.n_layers || ca.d_model != cb.d_model || ca.n_heads != cb.n_heads ||
      ca.vocab != cb.vocab)
    throw ConfigError("estimate_projector: checkpoints disagree on architecture");
  if (layer < 0 || layer >= ca.n_layers) throw UsageError("estimate_projector: bad layer");
  if (k < 1) throw UsageError("estimate_projector: k must be >= 1");

  CaptureRequest req;
  req.attn_input = true;
  ForwardCaptures capa, capb;
  a.forward(a.view(), tokens, batch, &req, &capa);
  b.forward(b.view(), tokens, batch, &req, &capb);
  std::vector<double> xa = capa.attn_input[static_cast<size_t>(layer)].to_vec();
  std::vector<double> xb = capb.attn_input[static_cast<size_t>(layer)].to_vec();
  int64_t rows = capa.attn_input[static_cast<size_t>(layer)].shape()[0];
  int64_t d = ca.d_model;

  Eigen::MatrixXd diff(rows, d);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < d; ++j)
      diff(i, j) = xb[static_cast<size_t>(i * d + j)] - xa[static_cast<size_t>(i * d + j)];

  Eigen::BDCSVD<Eigen::MatrixXd> svd(diff, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  int64_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > sv[0] * 1e-10 && sv[i] > 0.0) ++rank;
  if (rank == 0) return std::nullopt;
  int64_t k_eff = std::min(k, rank);
  if (k_eff < k)
    std::fprintf(stderr, "estimate_projector: difference rank %lld < requested k %lld, reducing\n",
                 static_cast<long long>(rank), static_cast<long long>(k));

  std::vector<double> basis(static_cast<size_t>(d * k_eff));
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < k_eff; ++j)
      basis[static_cast<size_t>(i * k_eff + j)] = svd.matrixV()(i, j);
  ImmatureProjector out;
  out.basis = Tensor::from_f64({d, k_eff}, std::move(basis));
  out.k = k_eff;
  out.layer = layer;
  return out;
}

LocalityResult locality_ratios(const Tensor& x, const Tensor& wq, const Tensor& wk,
                               const Tensor& basis) {
  require_rank2(x, "locality x");
  require_rank2(wq, "locality wq");
  require_rank2(wk, "locality wk");
  require_rank2(basis, "locality basis");
  int64_t rows = x.shape()[0], d = x.shape()[1];
  int64_t k = basis.shape()[1];
  if (wq.shape()[0] != d || wk.shape()[0] != d || basis.shape()[0] != d)
    throw UsageError("locality_ratios: width mismatch");

  std::vector<double> xd = x.to_vec(), q = basis.to_vec();
  LocalityResult res;
  double x_sq = 0.0;
  for (double v : xd) x_sq += v * v;
  if (x_sq == 0.0 || k == 0) return res;

  // projections through the orthonormal basis: ||M Q Q^T||_F = ||M Q||_F
  std::vector<double> xq(static_cast<size_t>(rows * k), 0.0);
  blas::gemm(false, false, rows, k, d, 1.0, xd.data(), q.data(), 0.0, xq.data());
  double xp_sq = 0.0;
  for (double v : xq) xp_sq += v * v;
  res.rp_fraction = xp_sq / x_sq;
  if (xp_sq == 0.0) return res;
  double xp_norm = std::sqrt(xp_sq);

  auto lambda_for = [&](const Tensor& w) -> std::optional<double> {
    int64_t c = w.shape()[1];
    std::vector<double> wd = w.to_vec();
    std::vector<double> xw(static_cast<size_t>(rows * c), 0.0);
    blas::gemm(false, false, rows, c, d, 1.0, xd.data(), wd.data(), 0.0, xw.data());
    std::vector<double> g(static_cast<size_t>(rows * d), 0.0);
    blas::gemm(false, true, rows, d, c, 1.0, xw.data(), wd.data(), 0.0, g.data());
    std::vector<double> gq(static_cast<size_t>(rows * k), 0.0);
    blas::gemm(false, false, rows, k, d, 1.0, g.data(), q.data(), 0.0, gq.data());
    double num_sq = 0.0;
    for (double v : gq) num_sq += v * v;
    double sv = matrix_top_sv(w).value;
    if (sv == 0.0) return std::nullopt;
    return std::sqrt(num_sq) / (xp_norm * sv * sv);
  };
  res.lambda_q = lambda_for(wq);
  res.lambda_k = lambda_for(wk);
  return res;
}

std::optional<double> tokens_to_target(std::span<const std::pair<int64_t, double>> curve,
                                       double target) {
  if (curve.empty()) throw UsageError("tokens_to_target: empty curve");
  for (size_t i = 1; i < curve.size(); ++i)
    if (curve[i].first <= curve[i - 1].first)
      throw UsageError("tokens_to_target: token counts must be strictly increasing");
  if (curve[0].second <= target) return static_cast<double>(curve[0].first);
  for (size_t i = 1; i < curve.size(); ++i) {
    double prev = curve[i - 1].second, cur = curve[i].second;
    if (cur <= target) {
      double t0 = static_cast<double>(curve[i - 1].first);
      double t1 = static_cast<double>(curve[i].first);
      return t0 + (target - prev) * (t1 - t0) / (cur - prev);
    }
  }
  return std::nullopt;
}

ProbeRecord run_probes(const Model& m, const BatchStream& stream, const ProbeConfig& cfg,
                       std::span<const Tensor> reference_bilinear,
                       const ImmatureProjector* projector) {
  const ModelConfig& mc = m.config();
  int64_t layers = mc.n_layers;
  int64_t us = m.upper_start();
  int64_t nb = std::min<int64_t>(cfg.val_batches, stream.val_batch_count());
  if (nb < 1) throw DataError("run_probes: no validation batches available");

  ProbeRecord rec;
  double loss_sum = 0.0, abl_sum = 0.0;
  double copy_mass = 0.0;
  int64_t copy_valid = 0;
  double ent_up = 0.0, ent_lo = 0.0;
  double ms_up = 0.0, ms_lo = 0.0;
  std::vector<double> ffn_ms(static_cast<size_t>(layers), 0.0);
  Tensor proj_input;  // attention input at the projector's layer, first window set

  for (int64_t bi = 0; bi < nb; ++bi) {
    Batch b = stream.val_batch(bi);
    CaptureRequest req;
    req.attn_probs = true;
    req.attn_logits = true;
    req.ffn_write = true;
    req.attn_input = projector != nullptr && bi == 0;
    ForwardCaptures caps;
    loss_sum += m.loss(m.view(), b.inputs, b.targets, b.batch_size, &req, &caps).item();
    abl_sum +=
        m.loss(m.ablate_upper_qk(AblationMode::zero_both), b.inputs, b.targets, b.batch_size)
            .item();

    std::span<const Tensor> probs(caps.attn_probs);
    std::span<const Tensor> logits(caps.attn_logits);
    auto lower_p = probs.subspan(0, static_cast<size_t>(us));
    auto upper_p = probs.subspan(static_cast<size_t>(us));
    CopyScore cs = lower_copy_score(lower_p, b.inputs, b.batch_size, mc.n_heads);
    copy_mass += cs.mass;
    copy_valid += cs.valid;
    ent_lo += attention_entropy(lower_p);
    ent_up += attention_entropy(upper_p);
    double rl = logit_rms(logits.subspan(0, static_cast<size_t>(us)));
    double ru = logit_rms(logits.subspan(static_cast<size_t>(us)));
    ms_lo += rl * rl;
    ms_up += ru * ru;
    for (int64_t l = 0; l < layers; ++l) {
      double wr = write_rms(caps.ffn_write[static_cast<size_t>(l)]);
      ffn_ms[static_cast<size_t>(l)] += wr * wr;
    }
    if (req.attn_input) proj_input = caps.attn_input[static_cast<size_t>(projector->layer)];
  }

  double nbd = static_cast<double>(nb);
  rec.val_loss = loss_sum / nbd;
  rec.val_ppl = std::exp(rec.val_loss);
  rec.ablation_ppl_delta = std::exp(abl_sum / nbd) - rec.val_ppl;
  int64_t lower_layers = us;
  int64_t denom = copy_valid * mc.n_heads * lower_layers;
  rec.lower_copy = denom > 0 ? copy_mass / static_cast<double>(denom) : 0.0;
  rec.lower_copy_valid = copy_valid;
  rec.lower_entropy = ent_lo / nbd;
  rec.upper_entropy = ent_up / nbd;
  rec.lower_logit_rms = std::sqrt(ms_lo / nbd);
  rec.upper_logit_rms = std::sqrt(ms_up / nbd);
  if (rec.lower_logit_rms > 0.0) rec.logit_ratio = rec.upper_logit_rms / rec.lower_logit_rms;

  for (int64_t l = 0; l < layers; ++l)
    rec.ffn_write_rms.push_back(std::sqrt(ffn_ms[static_cast<size_t>(l)] / nbd));
  if (us < layers) {
    double acc = 0.0;
    for (int64_t l = us; l < layers; ++l) acc += rec.ffn_write_rms[static_cast<size_t>(l)];
    rec.ffn_write_rms_upper_mean = acc / static_cast<double>(layers - us);
    rec.ffn_write_rms_first_upper = rec.ffn_write_rms[static_cast<size_t>(us)];
  }

  for (int64_t l = us; l < layers; ++l) {
    std::string p = "layers." + std::to_string(l) + ".attn.";
    rec.qk_top_sv.push_back(
        qk_top_sv(m.param(p + "wq"), m.param(p + "wk"), cfg.power_tol, cfg.power_iters).value);
  }

  if (!reference_bilinear.empty()) {
    rec.qk_disp = qk_displacement(m, reference_bilinear);
    double acc = 0.0;
    for (double v : rec.qk_disp) acc += v;
    rec.qk_disp_mean = acc / static_cast<double>(rec.qk_disp.size());
  }

  if (projector != nullptr && projector->basis.defined() && projector->k > 0) {
    std::string p = "layers." + std::to_string(projector->layer) + ".attn.";
    LocalityResult loc =
        locality_ratios(proj_input, m.param(p + "wq"), m.param(p + "wk"), projector->basis);
    rec.lambda_q = loc.lambda_q;
    rec.lambda_k = loc.lambda_k;
    rec.rp_fraction = loc.rp_fraction;
  }
  return rec;
}

}  // namespace declab::probes
