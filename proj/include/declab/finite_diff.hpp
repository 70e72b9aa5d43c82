#pragma once

#include <functional>
#include <string>
#include <vector>

#include "declab/tensor.hpp"

namespace declab {

// Central-difference gradient check for a scalar-valued function of one or
// more leaf tensors. The function is evaluated once under a fresh tape to get
// reverse-mode gradients, then re-evaluated untaped at x +/- h per coordinate.
// Comparison is relative to max(|fd|, |ad|, floor) so near-zero gradients do
// not blow up the ratio.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_input = -1;  // index into the inputs vector
  int64_t worst_coord = -1;
  double ad_value = 0.0;
  double fd_value = 0.0;
  bool ok(double tol) const { return max_rel_err < tol; }
  std::string describe() const;
};

struct GradCheckOptions {
  double step = 0.0;        // 0 picks a dtype-appropriate default
  double floor = 0.0;       // 0 picks a dtype-appropriate default
  int64_t max_coords = -1;  // check at most this many coordinates per input (-1 = all)
};

GradCheckResult check_gradients(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& inputs,
                                const GradCheckOptions& opts = {});

}  // namespace declab
