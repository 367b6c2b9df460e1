#include "tilt_detail.hpp"
#include "tiltkit/error.hpp"
#include "tiltkit/tilt.hpp"

#include <algorithm>
#include <cmath>

namespace tiltkit {

Vec phi_map(const Vec& lambda, const Vec& c, double beta) {
  const double den = 1 + beta * lambda.dot(c);
  require(den > 0, "phi_map: lambda is not strongly feasible");
  return lambda / den;
}

Vec psi_map(const Vec& theta, const Vec& c, double beta) {
  const double den = 1 - beta * theta.dot(c);
  require(den > 0, "psi_map: 1 - beta theta.c must be positive");
  return theta / den;
}

namespace {

struct ThetaEval {
  bool ok = false;
  double G = 0;
  double z = 0;  // E[u_+^(1/beta)]
  Vec grad;
  Mat hess;
};

ThetaEval eval_theta(const Measure& prior, const ConstraintSet& cs, const std::vector<double>& breaks,
                     const Vec& theta, double beta) {
  const int k = cs.k();
  const Vec c = cs.targets();
  Integrand F;
  F.m = 2 + k + k * (k + 1) / 2;
  F.breaks = breaks;
  const double p = 1 / beta;
  F.f = [&](const double* x, double* out) {
    std::vector<double> d(k);
    double l = 0;
    for (int i = 0; i < k; ++i) {
      d[i] = cs.g[i](x) - c[i];
      l += theta[i] * d[i];
    }
    const double u = 1 + beta * l;
    if (u <= 0) {
      for (int i = 0; i < F.m; ++i) out[i] = 0;
      return;
    }
    const double up = std::pow(u, p);
    const double um = up / u;
    out[0] = up * u;
    out[1] = up;
    int q = 2 + k;
    for (int i = 0; i < k; ++i) {
      out[2 + i] = (1 + beta) * up * d[i];
      for (int j = 0; j <= i; ++j) out[q++] = (1 + beta) * um * d[i] * d[j];
    }
  };
  ThetaEval r;
  Vec v;
  try {
    v = prior.integrate(F).value;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DivergentIntegral) return r;
    throw;
  }
  if (!v.allFinite() || !(v[1] > 0)) return r;
  r.ok = true;
  r.G = v[0];
  r.z = v[1];
  r.grad = v.segment(2, k);
  r.hess.resize(k, k);
  int q = 2 + k;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j <= i; ++j) r.hess(i, j) = r.hess(j, i) = v[q++];
  return r;
}

struct DirectEval {
  bool ok = false;
  Vec F;  // E[r (g - c)] with r = (1 + beta lambda.g)_+^(1/beta)
  Mat J;
  double z = 0;
};

DirectEval eval_direct(const Measure& prior, const ConstraintSet& cs, const std::vector<double>& breaks, const Vec& lam,
                       double beta) {
  const int k = cs.k();
  const Vec c = cs.targets();
  Integrand F;
  F.m = 1 + k + k * k;
  F.breaks = breaks;
  F.f = [&](const double* x, double* out) {
    std::vector<double> g(k);
    double l = 0;
    for (int i = 0; i < k; ++i) {
      g[i] = cs.g[i](x);
      if (g[i] != 0) l += lam[i] * g[i];
    }
    const double u = 1 + beta * l;
    if (u <= 0) {
      for (int i = 0; i < F.m; ++i) out[i] = 0;
      return;
    }
    const double r = std::pow(u, 1 / beta);
    const double dr = r / u;  // d r / d(lambda.g) = r^(1-beta)
    out[0] = r;
    for (int i = 0; i < k; ++i) {
      out[1 + i] = r * (g[i] - c[i]);
      for (int j = 0; j < k; ++j) out[1 + k + i * k + j] = dr * (g[i] - c[i]) * g[j];
    }
  };
  DirectEval r;
  Vec v;
  try {
    v = prior.integrate(F).value;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DivergentIntegral) return r;
    throw;
  }
  if (!v.allFinite() || !(v[0] > 0)) return r;
  r.ok = true;
  r.z = v[0];
  r.F = v.segment(1, k);
  r.J = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data() + 1 + k, k, k);
  return r;
}

bool within(const Vec& res, const Vec& tol) { return (res.cwiseAbs().array() <= tol.array()).all(); }

Solution make_solution(const Measure& prior, const ConstraintSet& cs, const Vec& lam, double beta, SolveStatus st,
                       int iters, std::string msg, double dual) {
  Solution s;
  TiltedPosterior post(prior, cs.g, lam, beta);
  s.report.status = st;
  s.report.iterations = iters;
  s.report.message = std::move(msg);
  s.report.dual_value = dual;
  try {
    post.normalize();
    s.report.residuals = (post.expect(cs.g) - cs.targets()).cwiseAbs();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DivergentIntegral && e.code() != ErrorCode::DegenerateWeights) throw;
    s.report.residuals = Vec::Constant(cs.k(), kInf);
    if (st == SolveStatus::Converged) s.report.status = SolveStatus::DivergentIntegral;
  }
  s.posterior = post;
  return s;
}

// Newton on E[(1 + beta lambda.g)_+^(1/beta) (g - c)] = 0, minimizing the squared residual
Solution solve_direct(const Measure& prior, const ConstraintSet& cs, double beta, Vec lam, const SolverOptions& opt,
                      int iters0) {
  const int k = cs.k();
  const Vec c = cs.targets();
  const Vec tol = detail::residual_tols(prior, opt, c);
  const std::vector<double> breaks = cs.breaks();
  DirectEval ev = eval_direct(prior, cs, breaks, lam, beta);
  if (!ev.ok) lam = Vec::Zero(k), ev = eval_direct(prior, cs, breaks, lam, beta);
  if (!ev.ok) return make_solution(prior, cs, lam, beta, SolveStatus::DivergentIntegral, iters0, "tilt not integrable", kInf);
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    if (within(ev.F / ev.z, tol)) break;
    Vec step;
    Eigen::ColPivHouseholderQR<Mat> qr(ev.J);
    if (qr.rank() == k)
      step = -qr.solve(ev.F);
    else
      step = -(ev.J.transpose() * ev.J + 1e-8 * Mat::Identity(k, k)).ldlt().solve(ev.J.transpose() * ev.F);
    const double f0 = (ev.F / ev.z).squaredNorm();
    bool accepted = false;
    double t = 1;
    for (int h = 0; h < 50; ++h, t *= 0.5) {
      const Vec cand = lam + t * step;
      DirectEval ec = eval_direct(prior, cs, breaks, cand, beta);
      if (!ec.ok) continue;
      if ((ec.F / ec.z).squaredNorm() < (1 - 1e-4 * t) * f0) {
        lam = cand;
        ev = ec;
        accepted = true;
        break;
      }
    }
    if (!accepted || lam.norm() > 1e6) break;
  }
  if (!within(ev.F / ev.z, tol))
    return make_solution(prior, cs, lam, beta, SolveStatus::Infeasible, iters0 + it, "no multiplier solves the moment equations", kInf);
  if (!in_feasible_region(prior, cs.g, lam, beta))
    return make_solution(prior, cs, lam, beta, SolveStatus::Infeasible, iters0 + it,
                         "root violates 1 + beta lambda.g >= 0 on the support", kInf);
  if (1 + beta * lam.dot(c) <= 0)
    return make_solution(prior, cs, lam, beta, SolveStatus::NotStronglyFeasible, iters0 + it, "1 + beta lambda.c <= 0",
                         kInf);
  return make_solution(prior, cs, lam, beta, SolveStatus::Converged, iters0 + it, "direct Newton", kInf);
}

Solution solve_poly_equalities(const Measure& prior, const ConstraintSet& cs, double beta, const Vec& lambda0,
                               const SolverOptions& opt) {
  const int k = cs.k();
  const Vec c = cs.targets();
  if (k == 0) return make_solution(prior, cs, Vec(), beta, SolveStatus::Converged, 0, "", 1.0);
  const Vec tol = detail::residual_tols(prior, opt, c);
  const std::vector<double> breaks = cs.breaks();

  Vec theta = Vec::Zero(k);
  if (lambda0.size() == k && 1 + beta * lambda0.dot(c) > 0) theta = phi_map(lambda0, c, beta);
  ThetaEval ev = eval_theta(prior, cs, breaks, theta, beta);
  if (!ev.ok) theta.setZero(), ev = eval_theta(prior, cs, breaks, theta, beta);
  if (!ev.ok) return make_solution(prior, cs, Vec::Zero(k), beta, SolveStatus::DivergentIntegral, 0, "dual not integrable", kInf);

  bool converged = false;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    if (within(ev.grad / ((1 + beta) * ev.z), tol)) {
      converged = true;
      break;
    }
    const Vec dir = detail::newton_direction(ev.hess, ev.grad);
    const double slope = ev.grad.dot(dir);
    bool accepted = false;
    double t = 1;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      const Vec cand = theta + t * dir;
      ThetaEval ec = eval_theta(prior, cs, breaks, cand, beta);
      if (!ec.ok) continue;
      const bool armijo = ec.G <= ev.G + 1e-4 * t * slope;
      const bool flat = ec.G <= ev.G + 1e-14 * ev.G && ec.grad.norm() < ev.grad.norm();
      if (armijo || flat) {
        theta = cand;
        ev = ec;
        accepted = true;
        break;
      }
    }
    if (!accepted || theta.norm() > 1e6) break;
  }
  if (converged && 1 - beta * theta.dot(c) > 0) {
    const Vec lam = psi_map(theta, c, beta);
    if (in_feasible_region(prior, cs.g, lam, beta)) {
      Solution s = make_solution(prior, cs, lam, beta, SolveStatus::Converged, it, "", ev.G);
      if (s.report.status == SolveStatus::Converged && !within(s.report.residuals, tol * 10)) {
        s.report.status = SolveStatus::Infeasible;
        s.report.message = "residual check failed after mapping back";
      }
      return s;
    }
  }
  // dual minimizer clips the tilt or does not exist: try the moment equations directly
  Vec start = Vec::Zero(k);
  if (converged && 1 - beta * theta.dot(c) > 0) start = psi_map(theta, c, beta);
  Solution s = solve_direct(prior, cs, beta, start, opt, it);
  if (s.report.status == SolveStatus::Converged) s.report.dual_value = kInf;
  return s;
}

}  // namespace

double theta_dual(const Measure& prior, const ConstraintSet& cs, const Vec& theta, double beta, Vec* grad) {
  require(beta > 0, "theta_dual: beta must be > 0");
  require(theta.size() == cs.k(), "theta_dual: size mismatch");
  ThetaEval ev = eval_theta(prior, cs, cs.breaks(), theta, beta);
  if (!ev.ok) return kInf;
  if (grad) *grad = ev.grad;
  return ev.G;
}

double min_tilt(const Measure& prior, const std::vector<Func>& g, const Vec& lambda, double beta) {
  require(static_cast<std::size_t>(lambda.size()) == g.size(), "min_tilt: size mismatch");
  auto h = [&](const double* x) {
    double s = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = g[i](x);
      if (v != 0) s += lambda[i] * v;
    }
    return 1 + beta * s;
  };
  bool fast = true;
  for (std::size_t i = 0; i < g.size(); ++i) fast = fast && g[i].nonneg && lambda[i] >= 0;
  if (fast) return 1.0;

  double mn = kInf;
  if (prior.is_cloud()) {
    const SampleCloud& c = prior.cloud();
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.weights()[i] > 0) mn = std::min(mn, h(c.point(i)));
    return mn;
  }
  bool pwl = prior.dim() == 1;
  for (const Func& f : g) pwl = pwl && f.piecewise_linear && f.coord == 0;
  if (pwl) {
    const Interval s = prior.density().support()[0];
    std::vector<double> pts;
    for (const Func& f : g)
      for (double k : f.kinks) {
        const double d = 1e-9 * std::max(1.0, std::abs(k));
        for (double x : {k - d, k, k + d})
          if (x > s.lo && x < s.hi) pts.push_back(x);
      }
    if (std::isfinite(s.lo)) pts.push_back(s.lo);
    if (std::isfinite(s.hi)) pts.push_back(s.hi);
    for (double x : pts) mn = std::min(mn, h(&x));
    // linear beyond the outermost kinks
    double lo_k = std::isfinite(s.lo) ? s.lo : 0.0, hi_k = lo_k;
    for (double x : pts) lo_k = std::min(lo_k, x), hi_k = std::max(hi_k, x);
    if (!std::isfinite(s.hi)) {
      const double x1 = hi_k + 1, x2 = hi_k + 2;
      if (h(&x2) - h(&x1) < 0) return -kInf;
      mn = std::min(mn, h(&x1));
    }
    if (!std::isfinite(s.lo)) {
      const double x1 = lo_k - 1, x2 = lo_k - 2;
      if (h(&x2) - h(&x1) < 0) return -kInf;
      mn = std::min(mn, h(&x1));
    }
    return mn;
  }
  const RowMat& pts = prior.check_points();
  for (Eigen::Index i = 0; i < pts.rows(); ++i) mn = std::min(mn, h(pts.data() + i * pts.cols()));
  return mn;
}

bool in_feasible_region(const Measure& prior, const std::vector<Func>& g, const Vec& lambda, double beta) {
  return min_tilt(prior, g, lambda, beta) >= -1e-12;
}

Solution solve_polynomial(const Measure& prior, const ConstraintSet& cs, double beta, const SolverOptions& opt) {
  require(std::isfinite(beta) && beta > 0, "solve_polynomial: beta must be > 0");
  cs.validate();
  require(opt.max_iter > 0, "solver: max_iter must be positive");
  return detail::active_set(prior, cs, opt, beta, [&](const ConstraintSet& sub, const Vec& l0) {
    return solve_poly_equalities(prior, sub, beta, l0, opt);
  });
}

double suggest_beta(const Measure& prior, const ConstraintSet& cs, int max_m) {
  require(cs.k() > 0, "suggest_beta: no constraints");
  require(max_m >= 1, "suggest_beta: max_m must be >= 1");
  const std::vector<double> breaks = cs.breaks();
  int best = 0;
  for (int m = 1; m <= max_m; ++m) {
    Integrand F;
    F.m = cs.k();
    F.breaks = breaks;
    F.f = [&](const double* x, double* out) {
      for (int i = 0; i < cs.k(); ++i) out[i] = std::pow(std::abs(cs.g[i](x)), m + 1);
    };
    try {
      prior.integrate(F);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DivergentIntegral) break;
      throw;
    }
    best = m;
  }
  if (best == 0) fail(ErrorCode::DivergentIntegral, "suggest_beta: second moments of the constraint functions diverge");
  return 1.0 / best;
}

}  // namespace tiltkit
