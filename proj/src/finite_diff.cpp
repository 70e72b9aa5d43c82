#include "declab/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace declab {

std::string GradCheckResult::describe() const {
  std::ostringstream os;
  os << "max_rel_err=" << max_rel_err << " at input " << worst_input << " coord " << worst_coord
     << " (ad=" << ad_value << ", fd=" << fd_value << ")";
  return os.str();
}

GradCheckResult check_gradients(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& inputs,
                                const GradCheckOptions& opts) {
  GradCheckResult res;
  if (inputs.empty()) throw UsageError("check_gradients needs at least one input");

  for (const Tensor& t : inputs) {
    if (!t.defined()) throw UsageError("check_gradients input is undefined");
    const_cast<Tensor&>(t).zero_grad();
    const_cast<Tensor&>(t).set_requires_grad(true);
  }

  // reverse-mode pass
  {
    Tape tape;
    Tensor loss = f();
    if (loss.numel() != 1) throw UsageError("check_gradients expects a scalar-valued function");
    tape.backward(loss);
  }

  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor x = inputs[ti];
    bool f64 = x.dtype() == Dtype::f64;
    // Central differences carry absolute noise near eps*|f|/h, so entries
    // below the floor are effectively checked absolutely at tol*floor.
    double h = opts.step > 0.0 ? opts.step : (f64 ? 1e-6 : 1e-3);
    double floor = opts.floor > 0.0 ? opts.floor : (f64 ? 1e-5 : 1e-2);
    int64_t n = x.numel();
    int64_t limit = opts.max_coords > 0 ? std::min(opts.max_coords, n) : n;
    for (int64_t i = 0; i < limit; ++i) {
      double x0 = x.at(i);
      double ad = 0.0;
      if (x.has_grad()) ad = f64 ? x.grad<double>()[i] : static_cast<double>(x.grad<float>()[i]);

      x.set(i, x0 + h);
      double fp = f().item();
      x.set(i, x0 - h);
      double fm = f().item();
      x.set(i, x0);
      double fd = (fp - fm) / (2.0 * h);

      double denom = std::max({std::abs(fd), std::abs(ad), floor});
      double rel = std::abs(fd - ad) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_input = static_cast<int64_t>(ti);
        res.worst_coord = i;
        res.ad_value = ad;
        res.fd_value = fd;
      }
    }
  }
  return res;
}

}  // namespace declab
