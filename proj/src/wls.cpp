#include "tiltkit/wls.hpp"

#include "tiltkit/error.hpp"

#include <cmath>

namespace tiltkit {

namespace {

struct WEval {
  bool ok = false;
  double J = kInf, I = kInf;
  Vec m, grad;
};

WEval eval_wls(const Measure& prior, const ConstraintSet& cs, const std::vector<double>& breaks, double beta, double t,
               const Vec& w, const Vec& lam, bool want_grad) {
  const int k = cs.k();
  const Vec c = cs.targets();
  Integrand F;
  F.m = 2 + 2 * k + k * (k + 1) / 2;
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
    const double rd = r / u;  // r^(1-beta)
    out[0] = r;
    out[1] = r * u;  // r^(beta+1)
    int q = 2 + 2 * k;
    for (int i = 0; i < k; ++i) {
      out[2 + i] = r * g[i];
      out[2 + k + i] = rd * g[i];
      for (int j = 0; j <= i; ++j) out[q++] = rd * g[i] * g[j];
    }
  };
  WEval e;
  Vec v;
  try {
    v = prior.integrate(F).value;
  } catch (const Error& err) {
    if (err.code() == ErrorCode::DivergentIntegral) return e;
    throw;
  }
  if (!v.allFinite() || !(v[0] > 0)) return e;
  const double Z = v[0], E2 = v[1];
  e.ok = true;
  e.I = E2 / std::pow(Z, beta + 1);
  e.m = v.segment(2, k) / Z;
  const Vec y = e.m - c;
  e.J = e.I + (y.array().square() / w.array()).sum() / t;
  if (!want_grad) return e;
  const Vec A = v.segment(2 + k, k);
  Mat B(k, k);
  int q = 2 + 2 * k;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j <= i; ++j) B(i, j) = B(j, i) = v[q++];
  Mat dm(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) dm(i, j) = (B(i, j) - e.m[i] * A[j]) / Z;
  Vec dI(k);
  for (int j = 0; j < k; ++j)
    dI[j] = (beta + 1) * (v[2 + j] / std::pow(Z, beta + 1) - E2 * A[j] / std::pow(Z, beta + 2));
  const Vec s = (y.array() / w.array()).matrix();
  e.grad = dI + (2 / t) * dm.transpose() * s;
  return e;
}

Vec modified_newton(const Mat& H, const Vec& grad) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.transpose()));
  Vec ev = es.eigenvalues().cwiseAbs();
  const double floor = std::max(ev.maxCoeff() * 1e-10, 1e-300);
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = std::max(ev[i], floor);
  Vec d = -(es.eigenvectors() * (es.eigenvectors().transpose() * grad).cwiseQuotient(ev));
  if (!(d.dot(grad) < 0)) d = -grad;
  return d;
}

}  // namespace

double wls_objective(const Measure& prior, const ConstraintSet& cs, double beta, double t, const Vec& lambda,
                     Vec* grad) {
  cs.validate();
  require(beta > 0 && t > 0, "wls_objective: beta and t must be positive");
  require(lambda.size() == cs.k(), "wls_objective: size mismatch");
  WEval e = eval_wls(prior, cs, cs.breaks(), beta, t, cs.weight_vector(), lambda, grad != nullptr);
  if (grad && e.ok) *grad = e.grad;
  return e.J;
}

PerturbedSolution solve_perturbed(const Measure& prior, const ConstraintSet& cs, double beta, double t,
                                  const WlsOptions& opt) {
  cs.validate();
  require(std::isfinite(beta) && beta > 0, "solve_perturbed: beta must be > 0");
  require(std::isfinite(t) && t > 0, "solve_perturbed: t must be > 0");
  const int k = cs.k();
  const Vec c = cs.targets(), w = cs.weight_vector();
  const std::vector<double> breaks = cs.breaks();
  PerturbedSolution out;
  out.t = t;
  // starting points: caller's, zero, and the exact solution when one exists (the t -> 0 limit)
  std::vector<Vec> starts;
  if (opt.lambda0.size() == k) starts.push_back(opt.lambda0);
  starts.push_back(Vec::Zero(k));
  if (k > 0 && cs.k1() == 0) {
    Solution exact = solve_polynomial(prior, cs, beta);
    if (exact.report.ok()) starts.push_back(exact.posterior.lambda());
  }
  Vec lam = Vec::Zero(k);
  WEval ev;
  for (const Vec& s0 : starts) {
    if (!in_feasible_region(prior, cs.g, s0, beta)) continue;
    WEval e0 = eval_wls(prior, cs, breaks, beta, t, w, s0, true);
    if (e0.ok && (!ev.ok || e0.J < ev.J)) {
      lam = s0;
      ev = e0;
    }
  }
  if (!ev.ok) fail(ErrorCode::DivergentIntegral, "solve_perturbed: tilt not integrable at any starting point");

  int it = 0;
  bool done = false;
  std::string msg;
  for (; it < opt.max_iter && k > 0 && !done; ++it) {
    // finite-difference Hessian of the analytic gradient
    Mat H(k, k);
    for (int j = 0; j < k; ++j) {
      double h = 1e-6 * std::max(1.0, std::abs(lam[j]));
      Vec lp = lam;
      lp[j] += h;
      WEval ej = eval_wls(prior, cs, breaks, beta, t, w, lp, true);
      if (!ej.ok || !in_feasible_region(prior, cs.g, lp, beta)) {
        h = -h;
        lp[j] = lam[j] + h;
        ej = eval_wls(prior, cs, breaks, beta, t, w, lp, true);
      }
      H.col(j) = ej.ok ? Vec((ej.grad - ev.grad) / h) : Vec::Unit(k, j);
    }
    const Vec dir = modified_newton(H, ev.grad);
    const double dec = -ev.grad.dot(dir);
    if (dec <= 1e-14 * (1 + std::abs(ev.J))) break;
    bool accepted = false;
    double s = 1;
    for (int hh = 0; hh < 60; ++hh, s *= 0.5) {
      Vec cand = lam + s * dir;
      bool capped = false;
      if (cand.norm() > opt.lambda_cap) {
        cand *= opt.lambda_cap / cand.norm();
        capped = true;
      }
      if (!in_feasible_region(prior, cs.g, cand, beta)) continue;
      WEval ec = eval_wls(prior, cs, breaks, beta, t, w, cand, true);
      if (!ec.ok) continue;
      if (ec.J <= ev.J - 1e-4 * s * dec || (capped && ec.J < ev.J)) {
        lam = cand;
        ev = ec;
        accepted = true;
        if (capped) {
          out.cap_hit = true;
          done = true;
          msg = "lambda cap reached";
        }
        break;
      }
    }
    if (!accepted) {
      if (dec > 1e-9 * (1 + std::abs(ev.J))) msg = "line search stalled";
      break;
    }
  }
  TiltedPosterior post(prior, cs.g, lam, beta);
  post.normalize();
  out.lambda = lam;
  out.achieved = ev.m.size() == k ? ev.m : Vec::Zero(k);
  out.y = out.achieved - c;
  out.distance = (out.y.array().square() / w.array()).sum();
  out.objective = ev.J;
  out.i_beta = ev.I;
  out.posterior = post;
  out.report.iterations = it;
  out.report.dual_value = ev.J;
  out.report.residuals = out.y.cwiseAbs();
  out.report.message = msg;
  out.report.status = msg == "line search stalled" ? SolveStatus::Infeasible : SolveStatus::Converged;
  if (it >= opt.max_iter) {
    out.report.status = SolveStatus::Infeasible;
    out.report.message = "iteration limit reached";
  }
  return out;
}

DistanceCurve distance_curve(const Measure& prior, const ConstraintSet& cs, double beta,
                             const std::vector<double>& t_grid, const WlsOptions& opt) {
  require(!t_grid.empty(), "distance_curve: empty t grid");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    require(t_grid[i] > 0, "distance_curve: t must be positive");
    if (i) require(t_grid[i] < t_grid[i - 1], "distance_curve: t grid must be decreasing");
  }
  DistanceCurve dc;
  WlsOptions o = opt;
  for (double t : t_grid) {
    PerturbedSolution s = solve_perturbed(prior, cs, beta, t, o);
    o.lambda0 = s.lambda;
    dc.points.emplace_back(t, s.distance);
    dc.solutions.push_back(std::move(s));
  }
  dc.estimate = dc.points.back().second;
  if (dc.points.size() >= 2) {
    const double a = dc.points[dc.points.size() - 2].second, b = dc.points.back().second;
    dc.converged = std::abs(b - a) < 0.05 * std::max(std::abs(b), 1e-300);
  }
  return dc;
}

}  // namespace tiltkit
