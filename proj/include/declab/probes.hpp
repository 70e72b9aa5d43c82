#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "declab/data.hpp"
#include "declab/model.hpp"
#include "declab/tensor.hpp"

namespace declab::probes {

// All probes are pure reads of a frozen model and fixed evaluation windows:
// repeated calls agree bitwise. Capture tensors follow the forward layout,
// attention as [batch*heads, n, n] with rows ordered batch-major then head.

struct CopyScore {
  double score = 0;   // mass / (valid * heads * layers); 0 when valid == 0
  double mass = 0;    // summed probability on nearest previous duplicates
  int64_t valid = 0;  // (window, position) pairs that have a previous duplicate
};

// Attention mass routed to the nearest previous occurrence of each token,
// over the given layers' captures. Positions whose token never appeared
// before are excluded.
CopyScore lower_copy_score(std::span<const Tensor> probs, std::span<const int32_t> tokens,
                           int64_t batch, int64_t heads);

// Mean per-row Shannon entropy of the causal distributions, each normalized
// by log(prefix length) so uniform rows read 1 and one-hot rows 0. Rows at
// position 0 have a single key and are skipped.
double attention_entropy(std::span<const Tensor> probs);

// Root-mean-square over the valid causal entries of pre-softmax logits.
double logit_rms(std::span<const Tensor> logits);

// Root-mean-square over every entry of one captured residual write.
double write_rms(const Tensor& write);

struct PowerResult {
  double value = 0;
  bool converged = false;
  int64_t iters = 0;
};

// Top singular value via power iteration on the Gram operator, deterministic
// start vector. Hitting the iteration cap returns the best estimate with
// converged = false.
PowerResult matrix_top_sv(const Tensor& a, double rel_tol = 1e-8, int64_t max_iters = 1000);

// Top singular value of wq * wk^T without forming the product.
PowerResult qk_top_sv(const Tensor& wq, const Tensor& wk, double rel_tol = 1e-8,
                      int64_t max_iters = 1000);

// Per-upper-layer bilinear forms wq * wk^T in double, and their Frobenius
// displacement from a reference (usually the run-start forms).
std::vector<Tensor> upper_bilinear(const Model& m);
std::vector<double> qk_displacement(const Model& m, std::span<const Tensor> reference);

// Orthonormal basis of residual directions that moved most between two
// checkpoints: the top-k right singular subspace of the difference of the
// attention inputs at one layer on a shared batch.
struct ImmatureProjector {
  Tensor basis;  // [d, k], orthonormal columns, f64
  int64_t k = 0;
  int64_t layer = 0;
  std::string method = "checkpoint_diff_svd";
  int64_t step_a = -1, step_b = -1;  // caller-provided provenance
};

// Returns nothing when the difference is numerically rank zero (identical
// checkpoints); reduces k to the effective rank otherwise.
std::optional<ImmatureProjector> estimate_projector(const Model& a, const Model& b, int64_t layer,
                                                    int64_t k, std::span<const int32_t> tokens,
                                                    int64_t batch);

inline int64_t default_projector_k(int64_t d_model) { return (d_model + 4) / 5; }

struct LocalityResult {
  std::optional<double> lambda_q, lambda_k;  // absent when ||X P||_F is 0
  double rp_fraction = 0;                    // ||X P||_F^2 / ||X||_F^2
};

// lambda_S = ||X W_S W_S^T P||_F / (||X P||_F * ||W_S||_op^2) for S in {q, k},
// with P the orthogonal projector onto the basis columns.
LocalityResult locality_ratios(const Tensor& x, const Tensor& wq, const Tensor& wk,
                               const Tensor& basis);

// First token count where the piecewise-linear interpolation of the eval
// curve reaches the target loss; absent when the curve never gets there.
std::optional<double> tokens_to_target(std::span<const std::pair<int64_t, double>> curve,
                                       double target);

struct ProbeConfig {
  int64_t val_batches = 1;
  double power_tol = 1e-8;
  int64_t power_iters = 1000;
};

struct ProbeRecord {
  int64_t step = -1;    // filled by the caller
  int64_t tokens = -1;  // filled by the caller
  double val_loss = 0;
  double val_ppl = 0;
  double lower_copy = 0;
  int64_t lower_copy_valid = 0;
  double upper_entropy = 0;
  double lower_entropy = 0;
  double upper_logit_rms = 0;
  double lower_logit_rms = 0;
  std::optional<double> logit_ratio;  // upper/lower; absent when lower is 0
  std::vector<double> qk_top_sv;      // per upper layer
  std::vector<double> qk_disp;        // per upper layer, vs the reference forms
  double qk_disp_mean = 0;
  std::vector<double> ffn_write_rms;  // per layer
  double ffn_write_rms_upper_mean = 0;
  double ffn_write_rms_first_upper = 0;
  double ablation_ppl_delta = 0;
  std::optional<double> lambda_q, lambda_k;
  std::optional<double> rp_fraction;
};

// Full readout on the held-out windows. reference_bilinear comes from
// upper_bilinear() at run start (empty skips displacement); projector is
// optional and fills the locality fields when present.
ProbeRecord run_probes(const Model& m, const BatchStream& stream, const ProbeConfig& cfg,
                       std::span<const Tensor> reference_bilinear = {},
                       const ImmatureProjector* projector = nullptr);

}  // namespace declab::probes
