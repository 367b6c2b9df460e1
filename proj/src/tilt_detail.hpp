#pragma once

#include "tiltkit/tilt.hpp"

#include <functional>

namespace tiltkit::detail {

double base_tol(const Measure& prior, const SolverOptions& opt);
// per-constraint residual tolerance
Vec residual_tols(const Measure& prior, const SolverOptions& opt, const Vec& c);

// g values at x, zero-skipping handled by callers
void eval_g(const std::vector<Func>& g, const double* x, double* out);

// solve the equality-only problem on a subset of constraints
using EqSolver = std::function<Solution(const ConstraintSet& sub, const Vec& lambda0)>;
Solution active_set(const Measure& prior, const ConstraintSet& cs, const SolverOptions& opt,
                    std::optional<double> beta, const EqSolver& solve);

// Newton direction with a pseudo-inverse for singular or indefinite Hessians
Vec newton_direction(const Mat& H, const Vec& grad);

}  // namespace tiltkit::detail
