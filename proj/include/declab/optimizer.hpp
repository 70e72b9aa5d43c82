#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "declab/intervention.hpp"
#include "declab/model.hpp"
#include "declab/tensor.hpp"

namespace declab {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  void validate() const;
};

// Decoupled-weight-decay Adam. Moments are kept in double regardless of
// parameter dtype and every element update runs in double, rounding once at
// the store, so f32 and f64 models share one code path.
class AdamW {
 public:
  struct Param {
    std::string name;
    Tensor tensor;
    ParamGroup group = ParamGroup::other;
    bool decay = true;
  };

  AdamW(std::vector<Param> params, OptimizerConfig cfg = {});

  // Standard grouping: weight decay skips norm parameters, embeddings, and
  // anything below rank 2 (biases).
  explicit AdamW(const Model& model, OptimizerConfig cfg = {});

  // One update with effective per-parameter lr = lr * multipliers[group].
  // A parameter without a gradient buffer counts as zero gradient. Any
  // non-finite gradient aborts before touching parameters or moments.
  void step(double lr, const GroupMultipliers& multipliers);
  void step(double lr);

  void zero_grads();
  int64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct Slot {
    Param p;
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::vector<Slot> slots_;
  int64_t steps_ = 0;
};

}  // namespace declab
