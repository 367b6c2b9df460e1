#pragma once

// Optimality by perturbation on a discrete cloud: random feasible perturbations of the
// solved posterior (same normalization and equality constraints) never beat it.

#include "tiltkit/tilt.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>

namespace perturb {

using namespace tiltkit;

struct Instance {
  SampleCloud cloud;
  ConstraintSet cs;
};

inline Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nk(1, 3);
  std::normal_distribution<double> z(0, 1);
  const int n = 60, k = nk(rng);
  RowMat pts(n, 1);
  Vec q(n);
  for (int i = 0; i < n; ++i) {
    pts(i, 0) = z(rng);
    q[i] = 0.5 + std::abs(z(rng));
  }
  q /= q.sum();
  SampleCloud cloud(pts, q);

  // targets from a mildly tilted copy so they are attainable in the interior
  const std::vector<Func> pool = {coordinate(0),
                                  custom_func([](const double* x) { return x[0] * x[0]; }, "x2"),
                                  custom_func([](const double* x) { return std::sin(2 * x[0]); }, "sin"),
                                  indicator(0.0, kInf)};
  ConstraintSet cs;
  Vec p(n);
  for (int i = 0; i < n; ++i) p[i] = q[i] * std::exp(0.3 * z(rng));
  p /= p.sum();
  for (int j = 0; j < k; ++j) {
    const Func& g = pool[j];
    double c = 0;
    for (int i = 0; i < n; ++i) c += p[i] * g(pts(i, 0));
    cs.add(g, c);
  }
  return {cloud, cs};
}

inline double objective(const Vec& p, const Vec& q, std::optional<double> beta) {
  double s = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (q[i] == 0) continue;
    const double r = p[i] / q[i];
    if (r <= 0) continue;
    s += beta ? q[i] * std::pow(r, *beta + 1) : p[i] * std::log(r);
  }
  return s;
}

struct Outcome {
  bool ok = false;
  double worst_gap = 0;  // min over perturbations of obj(nu') - obj(nu*)
  std::string message;
};

// beta empty => i-divergence
inline Outcome check(const Instance& inst, std::optional<double> beta, std::mt19937_64& rng, int n_perturb = 20) {
  Outcome out;
  Measure m = Measure::of(inst.cloud);
  Solution s = beta ? solve_polynomial(m, inst.cs, *beta) : solve_i_divergence(m, inst.cs);
  if (!s.report.ok()) {
    out.message = "solver: " + s.report.message;
    return out;
  }
  const auto& c = inst.cloud;
  const int n = static_cast<int>(c.size()), k = inst.cs.k();
  Vec q = c.weights(), p(n);
  for (int i = 0; i < n; ++i) p[i] = q[i] * s.posterior.ratio(c.point(i));
  const double best = objective(p, q, beta);

  // null space of [1; g_1; ...; g_k]
  Mat A(k + 1, n);
  for (int i = 0; i < n; ++i) {
    A(0, i) = 1;
    for (int j = 0; j < k; ++j) A(j + 1, i) = inst.cs.g[j](c.point(i));
  }
  Eigen::FullPivLU<Mat> lu(A);
  Mat N = lu.kernel();
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  out.worst_gap = kInf;
  for (int t = 0; t < n_perturb; ++t) {
    Vec coef(N.cols());
    for (Eigen::Index j = 0; j < coef.size(); ++j) coef[j] = z(rng);
    Vec d = N * coef;
    // largest step keeping the weights nonnegative, then a random fraction of it
    double smax = kInf;
    for (int i = 0; i < n; ++i)
      if (d[i] < 0) smax = std::min(smax, p[i] / -d[i]);
    if (!std::isfinite(smax)) smax = 1.0 / d.cwiseAbs().maxCoeff();
    const double step = u(rng) * smax;
    Vec p2 = (p + step * d).cwiseMax(0.0);
    out.worst_gap = std::min(out.worst_gap, objective(p2, q, beta) - best);
  }
  out.ok = out.worst_gap >= -1e-8;
  if (!out.ok) out.message = "perturbation improved the objective by " + std::to_string(-out.worst_gap);
  return out;
}

}  // namespace perturb
