#pragma once

#include "tiltkit/tilt.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace tiltkit {

// Prior over (X, Y) with X = coordinate 0. The X-marginal is replaced by g; h are
// moment views on the full vector.
struct MarginalView {
  Measure g;  // 1-D density, or a 1-D cloud for discrete X
  std::vector<Func> h;
  std::vector<double> c;
  std::optional<double> beta;
};

// Prior for the marginal solvers: a density (any dimension if Gaussian, else <= 2-D)
// or a discrete cloud.
struct JointPrior {
  std::optional<Density> density;
  std::optional<SampleCloud> cloud;
  EngineConfig cfg;

  static JointPrior of(const Density& d, const EngineConfig& cfg = {});
  static JointPrior of(const SampleCloud& c, const EngineConfig& cfg = {});
  int dim() const;
};

class ConditionalTilt {
 public:
  struct Impl;
  ConditionalTilt() = default;
  explicit ConditionalTilt(std::shared_ptr<const Impl> p) : p_(std::move(p)) {}

  const Vec& lambda() const;
  std::optional<double> beta() const;
  const MarginalView& view() const;

  // E[tilt | x] under the prior conditional (log of it for the exponential form)
  double per_x_normalizer(double x) const;
  double conditional_ratio(const double* xy) const;  // f~(y|x) / f(y|x)
  double log_conditional_ratio(const double* xy) const;
  double ratio(const double* xy) const;              // f~(x,y) / f(x,y)
  double pdf(const double* xy) const;                // density priors only

  Vec expect(const std::vector<Func>& f) const;
  // posterior mean and covariance of Y = (x_2..x_N) given X = x
  std::pair<Vec, Mat> conditional_moments(double x) const;

  // divergence of the posterior from the prior (I or polynomial), via the x/y split
  double divergence() const;
  double marginal_term() const;     // I: int g log(g/f_X);  poly: unused (0)
  double conditional_term() const;  // I: E_g[per-x conditional divergence]

  std::vector<double> node_x() const;
  std::vector<double> node_weights() const;

 private:
  std::shared_ptr<const Impl> p_;
};

struct MarginalSolution {
  ConditionalTilt posterior;
  SolveReport report;
};

MarginalSolution solve_marginal_i(const JointPrior& prior, const MarginalView& view, const SolverOptions& opt = {});
MarginalSolution solve_marginal_poly(const JointPrior& prior, const MarginalView& view,
                                     const SolverOptions& opt = {});
// posterior at a given multiplier (no solve), e.g. to re-evaluate a stored result
ConditionalTilt conditional_tilt_at(const JointPrior& prior, const MarginalView& view, const Vec& lambda);

// v: z -> (v_1..v_N), w its inverse, jacobian |det dv/dz|
struct ChangeOfVariables {
  int dim = 0;
  std::function<void(const double* z, double* v)> forward;
  std::function<void(const double* v, double* z)> inverse;
  std::function<double(const double* z)> jacobian;
  std::optional<Mat> A;  // set for linear maps

  static ChangeOfVariables linear(const Mat& A);
  // rows of `views` followed by unit vectors that keep the map invertible
  static ChangeOfVariables canonical_completion(const Mat& views);
};

struct LiftedProblem {
  Density prior_xy;
  MarginalView view;
  ChangeOfVariables map;  // reordered so that X comes first
  std::function<ScalarFn(const ConditionalTilt&)> pullback;  // posterior density over z
};

// marginal_on: the single v-index that becomes X; moments_on: v-indices with targets
LiftedProblem lift_views(const ChangeOfVariables& cov, const Density& z_prior, int marginal_on,
                         const std::vector<int>& moments_on, const std::vector<double>& targets, const Measure& g);

}  // namespace tiltkit
