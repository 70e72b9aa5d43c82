#include "declab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace declab {

static_assert(std::endian::native == std::endian::little,
              "serialized formats assume a little-endian host");

const char* ffn_kind_name(FfnKind k) {
  switch (k) {
    case FfnKind::single: return "single";
    case FfnKind::swiglu: return "swiglu";
    case FfnKind::geglu: return "geglu";
  }
  return "?";
}

const char* norm_kind_name(NormKind k) {
  return k == NormKind::layernorm ? "layernorm" : "rmsnorm";
}

FfnKind ffn_kind_from_name(const std::string& s) {
  if (s == "single") return FfnKind::single;
  if (s == "swiglu") return FfnKind::swiglu;
  if (s == "geglu") return FfnKind::geglu;
  throw ConfigError("unknown ffn kind: " + s);
}

NormKind norm_kind_from_name(const std::string& s) {
  if (s == "layernorm") return NormKind::layernorm;
  if (s == "rmsnorm") return NormKind::rmsnorm;
  throw ConfigError("unknown norm kind: " + s);
}

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::upper_qk: return "upper_qk";
    case ParamGroup::lower_qk: return "lower_qk";
    case ParamGroup::values_out: return "values_out";
    case ParamGroup::ffn: return "ffn";
    case ParamGroup::norms: return "norms";
    case ParamGroup::embeddings: return "embeddings";
    case ParamGroup::other: return "other";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (d_model < 1 || n_heads < 1 || seq_len < 1) throw ConfigError("model dims must be positive");
  if (vocab < 2) throw ConfigError("vocab must be >= 2");
  if (d_model % n_heads != 0) throw ConfigError("n_heads must divide d_model");
  if (rope_base > 0.0 && head_dim() % 2 != 0)
    throw ConfigError("rotary offsets need an even head dim");
  if (rope_base < 0.0) throw ConfigError("rope_base must be >= 0");
  if (ffn_width < 0) throw ConfigError("ffn_width must be >= 0");
  if (norm_eps <= 0.0 || init_std <= 0.0) throw ConfigError("norm_eps and init_std must be positive");
}

namespace {
constexpr double kOnesFill = -1.0;  // add_param sentinel: fill with 1 instead of sampling
}

void Model::add_param(const std::string& name, std::vector<int64_t> shape, double std_dev,
                      Rng& rng) {
  Tensor t;
  if (std_dev == kOnesFill) t = Tensor::full(std::move(shape), 1.0, cfg_.dtype);
  else if (std_dev == 0.0) t = Tensor::zeros(std::move(shape), cfg_.dtype);
  else t = Tensor::randn(std::move(shape), rng, std_dev, cfg_.dtype);
  t.set_requires_grad(true);
  t.set_name(name);
  params_.emplace_back(name, t);
}

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  int64_t d = cfg_.d_model;
  int64_t hidden = cfg_.ffn_hidden();
  double std = cfg_.init_std;
  // residual writers are damped so the stream variance stays O(init_std^2)
  double out_std = std / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
  bool ln = cfg_.norm == NormKind::layernorm;

  add_param("embed.table", {cfg_.vocab, d}, std, rng);
  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    std::string p = "layers." + std::to_string(l) + ".";
    add_param(p + "attn_norm.gain", {d}, kOnesFill, rng);
    if (ln) add_param(p + "attn_norm.bias", {d}, 0.0, rng);
    add_param(p + "attn.wq", {d, d}, std, rng);
    if (cfg_.use_bias) add_param(p + "attn.bq", {d}, 0.0, rng);
    add_param(p + "attn.wk", {d, d}, std, rng);
    if (cfg_.use_bias) add_param(p + "attn.bk", {d}, 0.0, rng);
    add_param(p + "attn.wv", {d, d}, std, rng);
    if (cfg_.use_bias) add_param(p + "attn.bv", {d}, 0.0, rng);
    add_param(p + "attn.wo", {d, d}, out_std, rng);
    if (cfg_.use_bias) add_param(p + "attn.bo", {d}, 0.0, rng);
    add_param(p + "ffn_norm.gain", {d}, kOnesFill, rng);
    if (ln) add_param(p + "ffn_norm.bias", {d}, 0.0, rng);
    if (!cfg_.gated_ffn()) {
      add_param(p + "ffn.w_in", {d, hidden}, std, rng);
      if (cfg_.use_bias) add_param(p + "ffn.b_in", {hidden}, 0.0, rng);
    } else {
      add_param(p + "ffn.w_gate", {d, hidden}, std, rng);
      if (cfg_.use_bias) add_param(p + "ffn.b_gate", {hidden}, 0.0, rng);
      add_param(p + "ffn.w_up", {d, hidden}, std, rng);
      if (cfg_.use_bias) add_param(p + "ffn.b_up", {hidden}, 0.0, rng);
    }
    add_param(p + "ffn.w_out", {hidden, d}, out_std, rng);
    if (cfg_.use_bias) add_param(p + "ffn.b_out", {d}, 0.0, rng);
  }
  add_param("final_norm.gain", {d}, kOnesFill, rng);
  if (ln) add_param("final_norm.bias", {d}, 0.0, rng);
  if (!cfg_.tied_embeddings) add_param("unembed.w", {cfg_.vocab, d}, std, rng);
}

Tensor Model::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw UsageError("no parameter named " + name);
}

bool Model::has_param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return true;
  return false;
}

int64_t Model::param_count() const {
  int64_t total = 0;
  for (const auto& [n, t] : params_) total += t.numel();
  return total;
}

ParamGroup Model::group_of(const std::string& name) const {
  if (name.rfind("embed.", 0) == 0 || name.rfind("unembed.", 0) == 0)
    return ParamGroup::embeddings;
  if (name.find("norm.") != std::string::npos) return ParamGroup::norms;
  if (name.rfind("layers.", 0) == 0) {
    size_t dot = name.find('.', 7);
    int64_t layer = std::stoll(name.substr(7, dot - 7));
    std::string rest = name.substr(dot + 1);
    if (rest == "attn.wq" || rest == "attn.wk")
      return layer >= upper_start() ? ParamGroup::upper_qk : ParamGroup::lower_qk;
    if (rest == "attn.wv" || rest == "attn.wo" || rest == "attn.bv" || rest == "attn.bo")
      return ParamGroup::values_out;
    if (rest.rfind("ffn.", 0) == 0) return ParamGroup::ffn;
  }
  return ParamGroup::other;
}

Tensor Model::forward(const ModelView& view, std::span<const int32_t> tokens, int64_t batch,
                      const CaptureRequest* req, ForwardCaptures* out) const {
  if (view.model != this) throw UsageError("view does not wrap this model");
  if (batch < 1 || tokens.empty() || static_cast<int64_t>(tokens.size()) % batch != 0)
    throw UsageError("token count must be a positive multiple of batch");
  int64_t seq = static_cast<int64_t>(tokens.size()) / batch;
  if (seq > cfg_.seq_len)
    throw UsageError("sequence length " + std::to_string(seq) + " exceeds configured maximum");
  if (req && !out) throw UsageError("capture request without capture output");

  bool ln = cfg_.norm == NormKind::layernorm;
  int64_t heads = cfg_.n_heads;
  double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));

  auto maybe_bias = [&](const std::string& name) -> Tensor {
    return cfg_.use_bias ? param(name) : Tensor();
  };
  auto norm_apply = [&](const std::string& prefix, const Tensor& x) {
    Tensor gain = param(prefix + ".gain");
    if (ln) {
      Tensor bias = param(prefix + ".bias");
      return ops::normalize(cfg_.norm, x, gain, &bias, cfg_.norm_eps);
    }
    return ops::normalize(cfg_.norm, x, gain, nullptr, cfg_.norm_eps);
  };
  auto linear = [&](const Tensor& x, const std::string& w, const std::string& b) {
    Tensor y = ops::matmul(x, param(w));
    Tensor bias = maybe_bias(b);
    return bias.defined() ? ops::add_row_bias(y, bias) : y;
  };

  Tensor x = ops::embedding(param("embed.table"), tokens);

  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    std::string p = "layers." + std::to_string(l) + ".";
    bool upper = l >= upper_start();
    bool capture_here = req && (!req->upper_only || upper);
    bool ablate = view.ablation != AblationMode::none && upper;

    Tensor xn = norm_apply(p + "attn_norm", x);
    if (capture_here && req->attn_input) out->attn_input.push_back(xn);

    Tensor q = linear(xn, p + "attn.wq", p + "attn.bq");
    Tensor k = linear(xn, p + "attn.wk", p + "attn.bk");
    Tensor v = linear(xn, p + "attn.wv", p + "attn.bv");
    Tensor qh = ops::split_heads(q, batch, heads);
    Tensor kh = ops::split_heads(k, batch, heads);
    Tensor vh = ops::split_heads(v, batch, heads);
    if (cfg_.rope_base > 0.0) {
      qh = ops::rope_rotate(qh, cfg_.rope_base);
      kh = ops::rope_rotate(kh, cfg_.rope_base);
    }
    if (ablate && view.ablation != AblationMode::zero_k) qh = ops::scale(qh, 0.0);
    if (ablate && view.ablation != AblationMode::zero_q) kh = ops::scale(kh, 0.0);
    Tensor z = ops::bmm(qh, kh, /*trans_b=*/true, inv_sqrt_dk);
    if (capture_here && req->attn_logits) out->attn_logits.push_back(z);
    Tensor probs = ops::causal_softmax(z);
    if (capture_here && req->attn_probs) out->attn_probs.push_back(probs);
    Tensor attn = ops::merge_heads(ops::bmm(probs, vh, false, 1.0), batch);
    x = ops::add(x, linear(attn, p + "attn.wo", p + "attn.bo"));

    Tensor xf = norm_apply(p + "ffn_norm", x);
    if (capture_here && req->ffn_input) out->ffn_input.push_back(xf);
    Tensor write;
    if (!cfg_.gated_ffn()) {
      Tensor h = ops::activation(cfg_.ffn_act(), linear(xf, p + "ffn.w_in", p + "ffn.b_in"));
      write = linear(h, p + "ffn.w_out", p + "ffn.b_out");
    } else {
      Tensor g = ops::activation(cfg_.ffn_act(), linear(xf, p + "ffn.w_gate", p + "ffn.b_gate"));
      Tensor u = linear(xf, p + "ffn.w_up", p + "ffn.b_up");
      write = linear(ops::mul(g, u), p + "ffn.w_out", p + "ffn.b_out");
    }
    if (capture_here && req->ffn_write) out->ffn_write.push_back(write);
    x = ops::add(x, write);
    if (capture_here) out->layers.push_back(l);
  }

  Tensor xf = norm_apply("final_norm", x);
  Tensor unembed = cfg_.tied_embeddings ? param("embed.table") : param("unembed.w");
  return ops::matmul(xf, unembed, /*trans_b=*/true);
}

Tensor Model::loss(const ModelView& view, std::span<const int32_t> tokens,
                   std::span<const int32_t> targets, int64_t batch, const CaptureRequest* req,
                   ForwardCaptures* out) const {
  if (targets.size() != tokens.size()) throw UsageError("targets must align with tokens");
  Tensor logits = forward(view, tokens, batch, req, out);
  return ops::cross_entropy_mean(logits, targets);
}

namespace {

constexpr char kCkptMagic[8] = {'D', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

template <class T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError(std::string("checkpoint truncated reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
  os.write(kCkptMagic, 8);
  write_pod<uint32_t>(os, kCkptVersion);
  const ModelConfig& c = model.config();
  write_pod<int64_t>(os, c.n_layers);
  write_pod<int64_t>(os, c.d_model);
  write_pod<int64_t>(os, c.n_heads);
  write_pod<int64_t>(os, c.seq_len);
  write_pod<int64_t>(os, c.vocab);
  write_pod<int64_t>(os, c.ffn_width);
  write_pod<uint8_t>(os, static_cast<uint8_t>(c.norm));
  write_pod<uint8_t>(os, static_cast<uint8_t>(c.ffn));
  write_pod<uint8_t>(os, c.use_bias ? 1 : 0);
  write_pod<uint8_t>(os, c.tied_embeddings ? 1 : 0);
  write_pod<double>(os, c.rope_base);
  write_pod<double>(os, c.norm_eps);
  write_pod<double>(os, c.init_std);
  write_pod<uint8_t>(os, static_cast<uint8_t>(c.dtype));

  std::vector<std::pair<std::string, Tensor>> sorted(model.named_params().begin(),
                                                     model.named_params().end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  write_pod<uint64_t>(os, sorted.size());
  for (const auto& [name, t] : sorted) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(e));
    if (t.dtype() == Dtype::f32)
      os.write(reinterpret_cast<const char*>(t.data<float>()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
    else
      os.write(reinterpret_cast<const char*>(t.data<double>()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw FormatError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw FormatError("not a checkpoint file: " + path);
  uint32_t version = read_pod<uint32_t>(is, "version");
  if (version != kCkptVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig c;
  c.n_layers = read_pod<int64_t>(is, "n_layers");
  c.d_model = read_pod<int64_t>(is, "d_model");
  c.n_heads = read_pod<int64_t>(is, "n_heads");
  c.seq_len = read_pod<int64_t>(is, "seq_len");
  c.vocab = read_pod<int64_t>(is, "vocab");
  c.ffn_width = read_pod<int64_t>(is, "ffn_width");
  uint8_t norm = read_pod<uint8_t>(is, "norm");
  uint8_t ffn = read_pod<uint8_t>(is, "ffn");
  if (norm > 1 || ffn > 2) throw FormatError("checkpoint has unknown enum values");
  c.norm = static_cast<NormKind>(norm);
  c.ffn = static_cast<FfnKind>(ffn);
  c.use_bias = read_pod<uint8_t>(is, "use_bias") != 0;
  c.tied_embeddings = read_pod<uint8_t>(is, "tied") != 0;
  c.rope_base = read_pod<double>(is, "rope_base");
  c.norm_eps = read_pod<double>(is, "norm_eps");
  c.init_std = read_pod<double>(is, "init_std");
  uint8_t dt = read_pod<uint8_t>(is, "dtype");
  if (dt > 1) throw FormatError("checkpoint has unknown dtype");
  c.dtype = static_cast<Dtype>(dt);

  Model model(c, 0);
  uint64_t count = read_pod<uint64_t>(is, "param count");
  if (count != model.named_params().size())
    throw FormatError("checkpoint parameter count does not match the architecture");
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t len = read_pod<uint32_t>(is, "name length");
    if (len > 4096) throw FormatError("implausible parameter name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint truncated reading name");
    if (!model.has_param(name)) throw FormatError("checkpoint has unknown parameter " + name);
    Tensor t = model.param(name);
    uint32_t rank = read_pod<uint32_t>(is, "rank");
    if (rank != static_cast<uint32_t>(t.rank()))
      throw FormatError("parameter rank mismatch for " + name);
    for (int64_t e : t.shape()) {
      uint64_t file_e = read_pod<uint64_t>(is, "extent");
      if (file_e != static_cast<uint64_t>(e))
        throw FormatError("parameter shape mismatch for " + name);
    }
    if (t.dtype() == Dtype::f32) {
      if (!is.read(reinterpret_cast<char*>(t.data<float>()),
                   static_cast<std::streamsize>(t.numel() * sizeof(float))))
        throw FormatError("checkpoint truncated reading " + name);
    } else {
      if (!is.read(reinterpret_cast<char*>(t.data<double>()),
                   static_cast<std::streamsize>(t.numel() * sizeof(double))))
        throw FormatError("checkpoint truncated reading " + name);
    }
  }
  return model;
}

}  // namespace declab
