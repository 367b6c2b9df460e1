#pragma once

#include "tiltkit/divergences.hpp"
#include "tiltkit/measure.hpp"
#include "tiltkit/payoff.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tiltkit {

enum class Sense { Equality, Geq };

// geq constraints are listed first (k1 of them)
struct ConstraintSet {
  std::vector<Func> g;
  std::vector<double> c;
  std::vector<Sense> sense;
  std::vector<double> weights;  // empty => uniform

  void add(Func f, double target, Sense s = Sense::Equality, double weight = 0.0);
  int k() const { return static_cast<int>(g.size()); }
  int k1() const;
  Vec targets() const;
  Vec weight_vector() const;
  std::vector<double> breaks() const;  // kinks along coordinate 0
  void validate() const;
  ConstraintSet subset(const std::vector<int>& idx) const;
};

enum class SolveStatus { Converged, Infeasible, NotStronglyFeasible, DivergentIntegral };
const char* to_string(SolveStatus s);

struct SolveReport {
  Vec residuals;
  double dual_value = 0;
  int iterations = 0;
  SolveStatus status = SolveStatus::Converged;
  std::string message;
  bool ok() const { return status == SolveStatus::Converged; }
};

// Exponential form (no beta): ratio = exp(lambda.g - shift) / normalizer.
// Polynomial form: ratio = (1 + beta lambda.g)_+^(1/beta) / normalizer.
// Terms with g_i(x) = 0 are skipped so that infinite multipliers act as zero weights.
class TiltedPosterior {
 public:
  TiltedPosterior() = default;
  TiltedPosterior(Measure base, std::vector<Func> g, Vec lambda, std::optional<double> beta);

  const Measure& base() const { return base_; }
  const std::vector<Func>& g() const { return g_; }
  const Vec& lambda() const { return lambda_; }
  const std::optional<double>& beta() const { return beta_; }
  double normalizer() const { return z_; }
  double shift() const { return shift_; }

  double linear(const double* x) const;  // sum lambda_i g_i(x)
  double unnormalized(const double* x) const;
  double ratio(const double* x) const { return unnormalized(x) / z_; }
  double ratio(double x) const { return ratio(&x); }
  double pdf(const double* x) const;  // density bases only
  double pdf(double x) const { return pdf(&x); }

  std::vector<double> breaks(const std::vector<double>& extra = {}) const;
  double expect(const ScalarFn& phi, const std::vector<double>& extra_breaks = {}) const;
  Vec expect(const std::vector<Func>& f) const;
  DivergenceValue divergence() const;
  ScalarFn ratio_fn() const;

  // recompute the normalizer (and shift for the exponential form)
  void normalize();
  void set_normalizer(double z, double shift = 0.0) {
    z_ = z;
    shift_ = shift;
  }

 private:
  Measure base_;
  std::vector<Func> g_;
  Vec lambda_;
  std::optional<double> beta_;
  double z_ = 1.0;
  double shift_ = 0.0;
};

struct SolverOptions {
  int max_iter = 200;
  double tol = 0;       // 0 => 1e-10 (quadrature / exact sums) or 1e-4 (Monte Carlo), scaled by max(1,|c|)
  Vec lambda0;          // optional start
};

struct Solution {
  TiltedPosterior posterior;
  SolveReport report;
};

Solution solve_i_divergence(const Measure& prior, const ConstraintSet& cs, const SolverOptions& opt = {});
Solution solve_polynomial(const Measure& prior, const ConstraintSet& cs, double beta, const SolverOptions& opt = {});

// theta <-> lambda maps of the polynomial dual
Vec phi_map(const Vec& lambda, const Vec& c, double beta);  // lambda / (1 + beta lambda.c)
Vec psi_map(const Vec& theta, const Vec& c, double beta);   // theta / (1 - beta theta.c)
// G(theta) = E[(1 + beta theta.(g - c))_+^(1/beta + 1)] and its gradient
double theta_dual(const Measure& prior, const ConstraintSet& cs, const Vec& theta, double beta, Vec* grad = nullptr);

// min over the support of 1 + beta lambda.g (exact for piecewise-linear 1-D g, grid/sample otherwise)
double min_tilt(const Measure& prior, const std::vector<Func>& g, const Vec& lambda, double beta);
bool in_feasible_region(const Measure& prior, const std::vector<Func>& g, const Vec& lambda, double beta);

double suggest_beta(const Measure& prior, const ConstraintSet& cs, int max_m = 8);

Solution solve_single_constraint_poly(const Measure& prior, const Func& g, double a, int n);
double feasibility_bound(const Measure& prior, const Func& g, int n);

using BlockFn = std::function<int(const double*)>;
TiltedPosterior disjoint_set_update(const Measure& prior, const BlockFn& block, const Vec& alphas,
                                    const std::vector<double>& breaks = {});
// mu(B_i)
Vec block_masses(const Measure& prior, const BlockFn& block, int nblocks, const std::vector<double>& breaks = {});
Func block_indicator(const BlockFn& block, int i, const std::vector<double>& breaks = {});

struct TruncationRow {
  double M, lambda, kl;
};
std::vector<TruncationRow> truncated_pareto_diagnostic(double alpha, double c, const std::vector<double>& M_grid,
                                                       const EngineConfig& cfg = {});

}  // namespace tiltkit
