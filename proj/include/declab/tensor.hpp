#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "declab/common.hpp"

namespace declab {

enum class Dtype { f32, f64 };

inline const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }

class Tape;

struct TensorData {
  std::vector<int64_t> shape;
  Dtype dtype = Dtype::f32;
  std::vector<float> v32;
  std::vector<double> v64;
  std::vector<float> g32;
  std::vector<double> g64;
  bool requires_grad = false;  // leaf parameter
  Tape* tape = nullptr;        // producing tape for op outputs
  std::string name;            // diagnostics only

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }
  bool has_grad() const { return !g32.empty() || !g64.empty(); }
};

// Dense row-major tensor with shared storage. Copying a Tensor aliases the
// data; clone() makes an independent detached copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, Dtype dt = Dtype::f32);
  static Tensor full(std::vector<int64_t> shape, double value, Dtype dt = Dtype::f32);
  static Tensor scalar(double value, Dtype dt = Dtype::f32);
  static Tensor from_f32(std::vector<int64_t> shape, std::vector<float> values);
  static Tensor from_f64(std::vector<int64_t> shape, std::vector<double> values);
  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double std_dev, Dtype dt = Dtype::f32);

  bool defined() const { return d_ != nullptr; }
  const std::vector<int64_t>& shape() const { return d_->shape; }
  int64_t rank() const { return static_cast<int64_t>(d_->shape.size()); }
  int64_t numel() const { return d_->numel(); }
  Dtype dtype() const { return d_->dtype; }

  template <class T> T* data();
  template <class T> const T* data() const;
  template <class T> T* grad();
  template <class T> const T* grad() const;

  // element fetch/store as double, dtype-agnostic (slow; tests and probes)
  double at(int64_t flat_index) const;
  void set(int64_t flat_index, double value);
  double item() const;  // scalar tensors only

  void set_requires_grad(bool on) { d_->requires_grad = on; }
  bool requires_grad() const { return d_->requires_grad; }
  bool attached() const { return d_->tape != nullptr; }
  Tape* tape() const { return d_->tape; }

  void ensure_grad();  // allocate zero grad buffer if absent
  void zero_grad();    // drop grad buffer
  bool has_grad() const { return d_->has_grad(); }

  Tensor clone() const;        // deep copy, detached, requires_grad off
  Tensor to(Dtype dt) const;   // cast copy, detached
  std::vector<double> to_vec() const;

  void set_name(std::string n) { d_->name = std::move(n); }
  const std::string& name() const { return d_->name; }

  const std::shared_ptr<TensorData>& ptr() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;

  friend Tensor make_tensor(std::vector<int64_t> shape, Dtype dt);
};

Tensor make_tensor(std::vector<int64_t> shape, Dtype dt);

// Reverse-mode tape. One Tape per forward pass: constructing it makes it the
// active recording target, backward() consumes the nodes in reverse order
// (forward order is already topological), and the destructor deactivates it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::function<void()> backward_fn);
  size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and walks the tape once, accumulating grads
  // into every recorded tensor. loss must be a scalar produced on this tape.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// Grad-accumulation helpers shared by op backward closures.
void accumulate_grad(const std::shared_ptr<TensorData>& t, const float* delta);
void accumulate_grad(const std::shared_ptr<TensorData>& t, const double* delta);

void check_finite(const Tensor& t, const char* op_name);

}  // namespace declab
