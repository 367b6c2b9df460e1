#pragma once

#include "tiltkit/tilt.hpp"

#include <vector>

namespace tiltkit {

struct PerturbedSolution {
  Vec lambda;
  Vec y;         // achieved - c
  double t = 0;
  Vec achieved;  // posterior expectations of g
  double distance = 0;  // sum y_i^2 / w_i
  double objective = 0;  // I_beta + distance / t
  double i_beta = 1;
  bool cap_hit = false;  // ||lambda|| reached the 1e6 cap
  TiltedPosterior posterior;
  SolveReport report;
};

struct WlsOptions {
  int max_iter = 200;
  Vec lambda0;
  double lambda_cap = 1e6;
};

PerturbedSolution solve_perturbed(const Measure& prior, const ConstraintSet& cs, double beta, double t,
                                  const WlsOptions& opt = {});

// objective and its gradient at lambda (gradient analytic); +inf outside the integrable region
double wls_objective(const Measure& prior, const ConstraintSet& cs, double beta, double t, const Vec& lambda,
                     Vec* grad = nullptr);

struct DistanceCurve {
  std::vector<std::pair<double, double>> points;  // (t, distance)
  std::vector<PerturbedSolution> solutions;
  double estimate = 0;    // distance at the smallest t
  bool converged = false;  // relative change over the last two t's below 5%
};

DistanceCurve distance_curve(const Measure& prior, const ConstraintSet& cs, double beta,
                             const std::vector<double>& t_grid, const WlsOptions& opt = {});

}  // namespace tiltkit
