#include "declab/tensor.hpp"

#include <cmath>

namespace declab {

namespace {
thread_local std::vector<Tape*> g_tape_stack;
}

Tensor make_tensor(std::vector<int64_t> shape, Dtype dt) {
  for (int64_t e : shape)
    if (e < 0) throw UsageError("negative extent in tensor shape " + format_shape(shape));
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->dtype = dt;
  if (dt == Dtype::f32)
    d->v32.assign(static_cast<size_t>(d->numel()), 0.0f);
  else
    d->v64.assign(static_cast<size_t>(d->numel()), 0.0);
  return Tensor(d);
}

Tensor Tensor::zeros(std::vector<int64_t> shape, Dtype dt) { return make_tensor(std::move(shape), dt); }

Tensor Tensor::full(std::vector<int64_t> shape, double value, Dtype dt) {
  Tensor t = make_tensor(std::move(shape), dt);
  if (dt == Dtype::f32)
    t.d_->v32.assign(t.d_->v32.size(), static_cast<float>(value));
  else
    t.d_->v64.assign(t.d_->v64.size(), value);
  return t;
}

Tensor Tensor::scalar(double value, Dtype dt) { return full({}, value, dt); }

Tensor Tensor::from_f32(std::vector<int64_t> shape, std::vector<float> values) {
  Tensor t = make_tensor(std::move(shape), Dtype::f32);
  if (static_cast<int64_t>(values.size()) != t.numel())
    throw UsageError("value count does not match shape " + format_shape(t.shape()));
  t.d_->v32 = std::move(values);
  return t;
}

Tensor Tensor::from_f64(std::vector<int64_t> shape, std::vector<double> values) {
  Tensor t = make_tensor(std::move(shape), Dtype::f64);
  if (static_cast<int64_t>(values.size()) != t.numel())
    throw UsageError("value count does not match shape " + format_shape(t.shape()));
  t.d_->v64 = std::move(values);
  return t;
}

template <> float* Tensor::data<float>() {
  if (d_->dtype != Dtype::f32) throw UsageError("f32 access on f64 tensor");
  return d_->v32.data();
}
template <> const float* Tensor::data<float>() const {
  if (d_->dtype != Dtype::f32) throw UsageError("f32 access on f64 tensor");
  return d_->v32.data();
}
template <> double* Tensor::data<double>() {
  if (d_->dtype != Dtype::f64) throw UsageError("f64 access on f32 tensor");
  return d_->v64.data();
}
template <> const double* Tensor::data<double>() const {
  if (d_->dtype != Dtype::f64) throw UsageError("f64 access on f32 tensor");
  return d_->v64.data();
}

template <> float* Tensor::grad<float>() {
  if (d_->dtype != Dtype::f32) throw UsageError("f32 grad access on f64 tensor");
  return d_->g32.data();
}
template <> const float* Tensor::grad<float>() const {
  if (d_->dtype != Dtype::f32) throw UsageError("f32 grad access on f64 tensor");
  return d_->g32.data();
}
template <> double* Tensor::grad<double>() {
  if (d_->dtype != Dtype::f64) throw UsageError("f64 grad access on f32 tensor");
  return d_->g64.data();
}
template <> const double* Tensor::grad<double>() const {
  if (d_->dtype != Dtype::f64) throw UsageError("f64 grad access on f32 tensor");
  return d_->g64.data();
}

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng, double std_dev, Dtype dt) {
  Tensor t = make_tensor(std::move(shape), dt);
  int64_t n = t.numel();
  if (dt == Dtype::f32) {
    float* p = t.data<float>();
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.normal() * std_dev);
  } else {
    double* p = t.data<double>();
    for (int64_t i = 0; i < n; ++i) p[i] = rng.normal() * std_dev;
  }
  return t;
}

double Tensor::at(int64_t i) const {
  return d_->dtype == Dtype::f32 ? static_cast<double>(d_->v32[static_cast<size_t>(i)])
                                 : d_->v64[static_cast<size_t>(i)];
}

void Tensor::set(int64_t i, double value) {
  if (d_->dtype == Dtype::f32)
    d_->v32[static_cast<size_t>(i)] = static_cast<float>(value);
  else
    d_->v64[static_cast<size_t>(i)] = value;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on non-scalar tensor " + format_shape(shape()));
  return at(0);
}

void Tensor::ensure_grad() {
  if (d_->dtype == Dtype::f32) {
    if (d_->g32.empty()) d_->g32.assign(d_->v32.size(), 0.0f);
  } else {
    if (d_->g64.empty()) d_->g64.assign(d_->v64.size(), 0.0);
  }
}

void Tensor::zero_grad() {
  d_->g32.clear();
  d_->g32.shrink_to_fit();
  d_->g64.clear();
  d_->g64.shrink_to_fit();
}

Tensor Tensor::clone() const {
  Tensor t = make_tensor(d_->shape, d_->dtype);
  t.d_->v32 = d_->v32;
  t.d_->v64 = d_->v64;
  return t;
}

Tensor Tensor::to(Dtype dt) const {
  if (dt == d_->dtype) return clone();
  Tensor t = make_tensor(d_->shape, dt);
  int64_t n = numel();
  if (dt == Dtype::f64) {
    for (int64_t i = 0; i < n; ++i) t.d_->v64[static_cast<size_t>(i)] = static_cast<double>(d_->v32[static_cast<size_t>(i)]);
  } else {
    for (int64_t i = 0; i < n; ++i) t.d_->v32[static_cast<size_t>(i)] = static_cast<float>(d_->v64[static_cast<size_t>(i)]);
  }
  return t;
}

std::vector<double> Tensor::to_vec() const {
  int64_t n = numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = at(i);
  return out;
}

Tape::Tape() { g_tape_stack.push_back(this); }

Tape::~Tape() {
  // Pop self; tapes are expected to nest like scopes.
  for (auto it = g_tape_stack.rbegin(); it != g_tape_stack.rend(); ++it) {
    if (*it == this) {
      g_tape_stack.erase(std::next(it).base());
      break;
    }
  }
}

Tape* Tape::current() { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw UsageError("recording onto a tape that already ran backward");
  nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(Tensor& loss) {
  if (consumed_) throw UsageError("backward called twice on the same tape");
  if (loss.numel() != 1) throw UsageError("backward requires a scalar loss");
  if (loss.tape() != this)
    throw UsageError("backward on a tensor not produced by this tape");
  consumed_ = true;
  loss.ensure_grad();
  if (loss.dtype() == Dtype::f32)
    loss.grad<float>()[0] = 1.0f;
  else
    loss.grad<double>()[0] = 1.0;
  // Reverse execution order is a valid topological order; each node runs
  // exactly once and is released immediately so activations free as we go.
  for (size_t i = nodes_.size(); i-- > 0;) {
    nodes_[i]();
    nodes_[i] = nullptr;
  }
  nodes_.clear();
}

void accumulate_grad(const std::shared_ptr<TensorData>& t, const float* delta) {
  if (t->g32.empty()) t->g32.assign(t->v32.size(), 0.0f);
  float* g = t->g32.data();
  size_t n = t->v32.size();
  for (size_t i = 0; i < n; ++i) g[i] += delta[i];
}

void accumulate_grad(const std::shared_ptr<TensorData>& t, const double* delta) {
  if (t->g64.empty()) t->g64.assign(t->v64.size(), 0.0);
  double* g = t->g64.data();
  size_t n = t->v64.size();
  for (size_t i = 0; i < n; ++i) g[i] += delta[i];
}

void check_finite(const Tensor& t, const char* op_name) {
  if (!finite_checks_enabled()) return;
  int64_t n = t.numel();
  if (t.dtype() == Dtype::f32) {
    const float* p = t.data<float>();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(p[i]))
        throw NumericError(std::string("non-finite value in ") + op_name + " output at index " +
                           std::to_string(i) + " (shape " + format_shape(t.shape()) + ")");
    }
  } else {
    const double* p = t.data<double>();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(p[i]))
        throw NumericError(std::string("non-finite value in ") + op_name + " output at index " +
                           std::to_string(i) + " (shape " + format_shape(t.shape()) + ")");
    }
  }
}

}  // namespace declab
