#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "declab/ops.hpp"
#include "declab/tensor.hpp"

namespace declab {

enum class FfnKind { single, swiglu, geglu };

const char* ffn_kind_name(FfnKind k);
const char* norm_kind_name(NormKind k);
FfnKind ffn_kind_from_name(const std::string& s);
NormKind norm_kind_from_name(const std::string& s);

struct ModelConfig {
  int64_t n_layers = 2;
  int64_t d_model = 64;
  int64_t n_heads = 2;
  int64_t seq_len = 32;
  int64_t vocab = 256;
  int64_t ffn_width = 0;  // 0 picks 3*d (single) or 2*d (gated), which matches parameter budgets
  NormKind norm = NormKind::layernorm;
  FfnKind ffn = FfnKind::single;
  bool use_bias = true;
  bool tied_embeddings = true;
  double rope_base = 10000.0;  // 0 disables rotary offsets
  double norm_eps = 1e-5;
  double init_std = 0.02;
  Dtype dtype = Dtype::f32;

  int64_t head_dim() const { return d_model / n_heads; }
  int64_t ffn_hidden() const {
    if (ffn_width > 0) return ffn_width;
    return ffn == FfnKind::single ? 3 * d_model : 2 * d_model;
  }
  bool gated_ffn() const { return ffn != FfnKind::single; }
  Activation ffn_act() const { return ffn == FfnKind::swiglu ? Activation::silu : Activation::gelu; }
  void validate() const;
};

// Learning-rate groups. Query/key weights split at the upper half of the
// stack because that is where the schedule intervention applies.
enum class ParamGroup { upper_qk, lower_qk, values_out, ffn, norms, embeddings, other };

inline constexpr int kParamGroupCount = 7;

const char* param_group_name(ParamGroup g);

enum class AblationMode { none, zero_q, zero_k, zero_both };

class Model;

// A model plus a forward-time modification. Ablating zeroes the query/key
// products in the upper half so those heads attend uniformly over the prefix.
struct ModelView {
  const Model* model = nullptr;
  AblationMode ablation = AblationMode::none;
};

struct CaptureRequest {
  bool attn_probs = false;
  bool attn_logits = false;
  bool attn_input = false;  // normalized input feeding wq/wk/wv
  bool ffn_input = false;   // normalized input feeding the ffn
  bool ffn_write = false;   // ffn output before the residual add
  bool upper_only = false;  // restrict captures to the upper half of the stack
};

struct ForwardCaptures {
  std::vector<int64_t> layers;  // layer index per captured slot
  std::vector<Tensor> attn_probs;   // [batch*heads, n, n]
  std::vector<Tensor> attn_logits;  // [batch*heads, n, n]
  std::vector<Tensor> attn_input;   // [batch*n, d]
  std::vector<Tensor> ffn_input;    // [batch*n, d]
  std::vector<Tensor> ffn_write;    // [batch*n, d]
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int64_t upper_start() const { return (cfg_.n_layers + 1) / 2; }

  const std::vector<std::pair<std::string, Tensor>>& named_params() const { return params_; }
  Tensor param(const std::string& name) const;
  bool has_param(const std::string& name) const;
  int64_t param_count() const;  // total scalar parameters
  ParamGroup group_of(const std::string& name) const;

  ModelView view() const { return {this, AblationMode::none}; }
  ModelView ablate_upper_qk(AblationMode mode) const { return {this, mode}; }

  // tokens.size() must be batch * seq for some seq <= cfg.seq_len.
  // Returns [batch*seq, vocab] logits.
  Tensor forward(const ModelView& view, std::span<const int32_t> tokens, int64_t batch,
                 const CaptureRequest* req = nullptr, ForwardCaptures* out = nullptr) const;

  // Mean next-token cross entropy; targets align with tokens position-wise.
  Tensor loss(const ModelView& view, std::span<const int32_t> tokens,
              std::span<const int32_t> targets, int64_t batch,
              const CaptureRequest* req = nullptr, ForwardCaptures* out = nullptr) const;

 private:
  void add_param(const std::string& name, std::vector<int64_t> shape, double std_dev, Rng& rng);
  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace declab
