#include "declab/optimizer.hpp"

#include <cmath>
#include <cstddef>
#include <utility>

namespace declab {

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

AdamW::AdamW(std::vector<Param> params, OptimizerConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  slots_.reserve(params.size());
  for (Param& p : params) {
    if (!p.tensor.defined()) throw UsageError("optimizer param has no tensor: " + p.name);
    Slot s;
    s.p = std::move(p);
    s.m.assign(static_cast<size_t>(s.p.tensor.numel()), 0.0);
    s.v.assign(static_cast<size_t>(s.p.tensor.numel()), 0.0);
    slots_.push_back(std::move(s));
  }
}

namespace {

std::vector<AdamW::Param> model_params(const Model& model) {
  std::vector<AdamW::Param> out;
  out.reserve(model.named_params().size());
  for (const auto& [name, t] : model.named_params()) {
    ParamGroup g = model.group_of(name);
    bool decay = g != ParamGroup::norms && g != ParamGroup::embeddings && t.rank() >= 2;
    out.push_back({name, t, g, decay});
  }
  return out;
}

template <typename T>
const T* grad_or_null(const Tensor& p) {
  return p.has_grad() ? p.grad<T>() : nullptr;
}

template <typename T>
bool all_finite(const T* g, int64_t n) {
  if (!g) return true;
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(g[i]))) return false;
  return true;
}

template <typename T>
void apply_update(T* p, const T* g, double* m, double* v, int64_t n, double eff_lr, double wd,
                  double beta1, double beta2, double eps, double bc1, double bc2) {
  for (int64_t i = 0; i < n; ++i) {
    double pi = static_cast<double>(p[i]);
    double gi = g ? static_cast<double>(g[i]) : 0.0;
    pi -= eff_lr * wd * pi;
    size_t u = static_cast<size_t>(i);
    m[u] = beta1 * m[u] + (1.0 - beta1) * gi;
    v[u] = beta2 * v[u] + (1.0 - beta2) * gi * gi;
    double mhat = m[u] / bc1;
    double vhat = v[u] / bc2;
    pi -= eff_lr * mhat / (std::sqrt(vhat) + eps);
    p[i] = static_cast<T>(pi);
  }
}

}  // namespace

AdamW::AdamW(const Model& model, OptimizerConfig cfg) : AdamW(model_params(model), cfg) {}

void AdamW::step(double lr, const GroupMultipliers& multipliers) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("step: lr must be finite and >= 0");
  for (const Slot& s : slots_) {
    bool ok = s.p.tensor.dtype() == Dtype::f32
                  ? all_finite(grad_or_null<float>(s.p.tensor), s.p.tensor.numel())
                  : all_finite(grad_or_null<double>(s.p.tensor), s.p.tensor.numel());
    if (!ok) throw NumericError("step aborted: non-finite gradient in " + s.p.name);
  }
  int64_t t = steps_ + 1;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  for (Slot& s : slots_) {
    Tensor& tensor = s.p.tensor;
    double eff_lr = lr * multipliers[static_cast<size_t>(s.p.group)];
    double wd = s.p.decay ? cfg_.weight_decay : 0.0;
    int64_t n = tensor.numel();
    if (tensor.dtype() == Dtype::f32) {
      apply_update(tensor.data<float>(), grad_or_null<float>(tensor), s.m.data(), s.v.data(), n,
                   eff_lr, wd, cfg_.beta1, cfg_.beta2, cfg_.eps, bc1, bc2);
    } else {
      apply_update(tensor.data<double>(), grad_or_null<double>(tensor), s.m.data(), s.v.data(), n,
                   eff_lr, wd, cfg_.beta1, cfg_.beta2, cfg_.eps, bc1, bc2);
    }
  }
  ++steps_;
}

void AdamW::step(double lr) {
  GroupMultipliers ones;
  ones.fill(1.0);
  step(lr, ones);
}

void AdamW::zero_grads() {
  for (Slot& s : slots_) s.p.tensor.zero_grad();
}

}  // namespace declab
