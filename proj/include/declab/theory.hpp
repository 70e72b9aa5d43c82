#pragma once

// Numerical verification of the one-step premature-logit bound, its
// second-order remainder and localized/alpha corollaries, the gated-FFN
// output contraction ratio, the residual-energy contraction factor, the
// quadratic suppression composition, and the entropy/logit-range lemma.
// Everything here is desk-scale double-precision linear algebra: operator
// norms come from dense SVD, expectations from adaptive quadrature, and
// every inequality is checked with a fixed absolute slack.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "declab/common.hpp"

namespace declab::theory {

// One randomized instance of the bilinear-update bound. x is the normalized
// residual block [n,d], e the loss adjoint at the logits [n,n], wq/wk the
// matching matrices [d,d_k], p an orthogonal projector [d,d] onto the
// immature directions, eta_q/eta_k the per-matrix step sizes.
struct TheoryCase {
  int64_t n = 0;
  int64_t d = 0;
  int64_t d_k = 0;
  Eigen::MatrixXd x;
  Eigen::MatrixXd e;
  Eigen::MatrixXd wq;
  Eigen::MatrixXd wk;
  Eigen::MatrixXd p;
  double eta_q = 0.0;
  double eta_k = 0.0;

  // shape agreement, finite entries, p symmetric idempotent to 1e-10
  void validate() const;
};

// How the adjoint matrix is sampled: rows shaped like a masked-softmax
// adjoint p .* (g - <p,g>), or a fully random dense matrix.
enum class AdjointFamily { softmax_rows, dense_random };

// Deterministic case generator; dims are sampled in [2,n_max]x[2,d_max]x
// [1,dk_max], steps log-uniform in [eta_max/100, eta_max].
TheoryCase make_random_case(uint64_t seed, AdjointFamily family, int64_t n_max = 16,
                            int64_t d_max = 32, int64_t dk_max = 16, double eta_max = 1e-2);

struct PathwiseBound {
  double first_order = 0.0;
  double r2 = 0.0;
};

// The projected logit update from the full bilinear step (both first-order
// terms plus the eta_q*eta_k cross term).
Eigen::MatrixXd delta_zp_exact(const TheoryCase& c);
// First-order part only: linear in (eta_q, eta_k).
Eigen::MatrixXd delta_zp_first_order(const TheoryCase& c);

// Right-hand sides of the deterministic pathwise bound and its second-order
// remainder, evaluated with dense-SVD operator norms.
PathwiseBound pathwise_bound(const TheoryCase& c);

struct TheoryReport {
  double lhs_first_order = 0.0;  // ||first-order dZ_P||_F
  double lhs_exact = 0.0;        // ||full dZ_P||_F
  double lhs_remainder = 0.0;    // ||full - first-order||_F
  double bound_first_order = 0.0;
  double bound_r2 = 0.0;
  double lambda_q = 0.0;  // measured locality ratios
  double lambda_k = 0.0;
  double ct_measured = 0.0;  // localized prefactor with measured lambdas
  double ct_supplied = 0.0;  // same with the supplied lambda_bar in both slots
  double bound_localized = 0.0;  // first-order localized bound at lambda_bar
  bool localized_checked = false;  // only when both measured lambdas <= lambda_bar
  bool pass_first_order = false;
  bool pass_r2 = false;
  bool pass_localized = true;
  bool pass = false;
};

inline constexpr double kTheorySlack = 1e-9;

// Verifies first-order and remainder bounds with absolute slack, measures
// the locality ratios, and checks the localized corollary when it applies.
TheoryReport check_update_bound(const TheoryCase& c, double lambda_bar = 1.0);

struct AlphaScalingReport {
  double first_order_ratio_err = 0.0;  // | ||fo(a*eta)|| - a*||fo(eta)|| | / ||fo(eta)||
  double residual = 0.0;               // ||dZ(a*eta) - a*dZ(eta)||_F at eta_base
  double residual_half = 0.0;          // same at eta_base/2
  double ratio = 0.0;                  // residual / residual_half, ~4 (0 when degenerate)
  bool pass = false;
};

// Checks that scaling both step sizes by alpha scales the first-order term
// exactly and leaves only an O(eta^2) residual that quarters when eta halves.
AlphaScalingReport alpha_scaling_check(const TheoryCase& c, double alpha, double eta_base);

// Activations usable as the single branch phi or the gate psi.
enum class GateFn { gelu, silu, relu, identity, constant_one };
double gate_eval(GateFn f, double x);

struct GatedEnergyCase {
  int64_t d_in = 32;
  int64_t m = 1;      // single-branch hidden width
  int64_t r = 0;      // gated hidden width (0 allowed: no gated units)
  double sigma = 1.0;  // input weight std
  double nu = 1.0;     // sigma^2 * ||x||^2 at the matched input
  double tau_s = 1.0;  // single output-projection std
  double tau_g = 1.0;  // gated output-projection std
  GateFn phi = GateFn::gelu;
  GateFn psi = GateFn::gelu;
  int64_t samples = 100000;

  void validate() const;  // m >= 1, r >= 0, nu > 0, sigma/tau finite positive
};

// Gaussian second moment E f(G_nu)^2 by adaptive quadrature (rel tol 1e-8).
double gaussian_sq_moment(GateFn f, double nu);

// Output-energy ratio (tau_g^2/tau_s^2)(r/m) * nu E psi^2 / E phi^2.
double rho0_analytic(const GatedEnergyCase& c);

struct Rho0Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
  int64_t samples = 0;
};

// Monte-Carlo estimate of the same ratio from sampled Gaussian weight rows
// applied to a fixed input with sigma^2||x||^2 = nu; the standard error
// comes from the delta method for a ratio of independent means.
Rho0Estimate rho0_monte_carlo(const GatedEnergyCase& c, uint64_t seed);

// (prior + rho0*A)/(prior + A); strictly below 1 iff A > 0 and rho0 < 1.
double residual_contraction_rhobar(double prior_energy, double a, double rho0);

struct SuppressionReport {
  double bound_single = 0.0;    // localized first-order bound, shared lambdas
  double bound_gate = 0.0;      // same bound on the energy-scaled case
  double scale_err = 0.0;       // |bound_gate - rhobar^2*bound_single| (relative)
  double lhs_exact_gate = 0.0;  // ||dZ_P||_F recomputed on the scaled case
  double remainder_gate = 0.0;  // measured second-order term of the scaled case
  double rhobar = 0.0;
  bool pass_scaling = false;  // bound scales by rhobar^2 to 1e-10 relative
  bool pass_exact = false;    // lhs <= rhobar^2 * single-bound + remainder + slack
};

// Replaces x by x(I-P) + sqrt(rhobar)*xP, so the immature energy entering
// the bound contracts by rhobar, and verifies the quadratic suppression.
SuppressionReport suppression_composition(const TheoryCase& c, double rhobar);

// log((N-1)(1-eps)/eps): the minimum logit range forced by a row that puts
// mass >= 1-eps on one of N keys.
double entropy_range_bound(int64_t n_keys, double eps);

struct EntropyCheckResult {
  int64_t rows = 0;
  int64_t pairs = 0;       // (row, eps) pairs with p_max >= 1-eps
  int64_t violations = 0;  // range < bound - 1e-12
  double worst_margin = 0.0;  // min over pairs of (range - bound)
  bool pass = false;
};

// Checks every supplied logit row against the range bound at each eps in
// the grid plus the row's own tight slack eps = 1 - p_max.
EntropyCheckResult verify_entropy_lemma(std::span<const Eigen::VectorXd> logit_rows,
                                        std::span<const double> eps_grid);

// Random logit rows with mixed widths and scales; sharp rows included so
// the p_max >= 1-eps branch is exercised across the grid.
std::vector<Eigen::VectorXd> sample_logit_rows(int64_t count, int64_t n_min, int64_t n_max,
                                               uint64_t seed);

}  // namespace declab::theory
