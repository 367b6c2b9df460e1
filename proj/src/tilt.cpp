#include "tiltkit/tilt.hpp"

#include "tilt_detail.hpp"
#include "tiltkit/error.hpp"

#include <algorithm>
#include <cmath>

namespace tiltkit {

// ---------------------------------------------------------------- constraints

void ConstraintSet::add(Func f, double target, Sense s, double weight) {
  g.push_back(std::move(f));
  c.push_back(target);
  sense.push_back(s);
  if (weight > 0) weights.push_back(weight);
}

int ConstraintSet::k1() const {
  return static_cast<int>(std::count(sense.begin(), sense.end(), Sense::Geq));
}

Vec ConstraintSet::targets() const { return Eigen::Map<const Vec>(c.data(), static_cast<Eigen::Index>(c.size())); }

Vec ConstraintSet::weight_vector() const {
  if (weights.empty()) return Vec::Constant(k(), k() ? 1.0 / k() : 0.0);
  return Eigen::Map<const Vec>(weights.data(), static_cast<Eigen::Index>(weights.size()));
}

std::vector<double> ConstraintSet::breaks() const {
  std::vector<double> b;
  for (const Func& f : g)
    if (f.coord == 0) b.insert(b.end(), f.kinks.begin(), f.kinks.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return b;
}

void ConstraintSet::validate() const {
  require(c.size() == g.size() && sense.size() == g.size(), "constraints: g, c and sense lengths differ");
  for (std::size_t i = 0; i < g.size(); ++i) {
    require(static_cast<bool>(g[i].f), "constraints: empty function");
    require(std::isfinite(c[i]), "constraints: target must be finite");
    if (i > 0) require(!(sense[i] == Sense::Geq && sense[i - 1] == Sense::Equality), "constraints: geq constraints must come first");
  }
  if (!weights.empty()) {
    require(weights.size() == g.size(), "constraints: one weight per constraint");
    double s = 0;
    for (double w : weights) {
      require(w > 0 && std::isfinite(w), "constraints: weights must be positive");
      s += w;
    }
    require(std::abs(s - 1) <= 1e-12, "constraints: weights must sum to 1");
  }
}

ConstraintSet ConstraintSet::subset(const std::vector<int>& idx) const {
  ConstraintSet s;
  for (int i : idx) {
    s.g.push_back(g[i]);
    s.c.push_back(c[i]);
    s.sense.push_back(sense[i]);
  }
  return s;
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "Converged";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::NotStronglyFeasible: return "NotStronglyFeasible";
    case SolveStatus::DivergentIntegral: return "DivergentIntegral";
  }
  return "?";
}

// ---------------------------------------------------------------- posterior

TiltedPosterior::TiltedPosterior(Measure base, std::vector<Func> g, Vec lambda, std::optional<double> beta)
    : base_(std::move(base)), g_(std::move(g)), lambda_(std::move(lambda)), beta_(beta) {
  require(static_cast<std::size_t>(lambda_.size()) == g_.size(), "posterior: one multiplier per function");
  if (beta_) require(*beta_ > 0 && std::isfinite(*beta_), "posterior: beta must be > 0");
}

double TiltedPosterior::linear(const double* x) const {
  double s = 0;
  for (std::size_t i = 0; i < g_.size(); ++i) {
    const double v = g_[i](x);
    if (v != 0) s += lambda_[i] * v;
  }
  return s;
}

double TiltedPosterior::unnormalized(const double* x) const {
  const double l = linear(x);
  if (!beta_) return std::exp(l - shift_);
  const double u = 1 + *beta_ * l;
  return u <= 0 ? 0.0 : std::pow(u, 1 / *beta_);
}

double TiltedPosterior::pdf(const double* x) const { return base_.density().pdf(x) * ratio(x); }

std::vector<double> TiltedPosterior::breaks(const std::vector<double>& extra) const {
  std::vector<double> b = extra;
  for (const Func& f : g_)
    if (f.coord == 0) b.insert(b.end(), f.kinks.begin(), f.kinks.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return b;
}

ScalarFn TiltedPosterior::ratio_fn() const {
  return [p = *this](const double* x) { return p.ratio(x); };
}

double TiltedPosterior::expect(const ScalarFn& phi, const std::vector<double>& extra_breaks) const {
  return base_.expect([&](const double* x) { return ratio(x) * phi(x); }, breaks(extra_breaks));
}

Vec TiltedPosterior::expect(const std::vector<Func>& f) const {
  std::vector<double> extra;
  for (const Func& h : f)
    if (h.coord == 0) extra.insert(extra.end(), h.kinks.begin(), h.kinks.end());
  Integrand F;
  F.m = static_cast<int>(f.size());
  F.breaks = breaks(extra);
  F.f = [&](const double* x, double* out) {
    const double r = ratio(x);
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = r == 0 ? 0.0 : r * f[i](x);
  };
  if (f.empty()) return Vec();
  return base_.integrate(F).value;
}

DivergenceValue TiltedPosterior::divergence() const {
  if (beta_) return polynomial_divergence(ratio_fn(), base_, *beta_, breaks());
  return i_divergence(ratio_fn(), base_, breaks());
}

void TiltedPosterior::normalize() {
  if (!beta_ && base_.is_cloud()) {
    double mx = -kInf;
    const SampleCloud& c = base_.cloud();
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.weights()[i] > 0) mx = std::max(mx, linear(c.point(i)));
    shift_ = std::isfinite(mx) ? mx : 0.0;
  }
  z_ = 1.0;
  z_ = base_.expect([this](const double* x) { return unnormalized(x); }, breaks());
  if (!(z_ > 0) || !std::isfinite(z_)) fail(ErrorCode::DegenerateWeights, "posterior normalizer is not positive and finite");
}

// ---------------------------------------------------------------- shared solver pieces

namespace detail {

double base_tol(const Measure& prior, const SolverOptions& opt) {
  if (opt.tol > 0) return opt.tol;
  return prior.sampled() ? 1e-4 : 1e-10;
}

Vec residual_tols(const Measure& prior, const SolverOptions& opt, const Vec& c) {
  const double t = base_tol(prior, opt);
  Vec r(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) r[i] = t * std::max(1.0, std::abs(c[i]));
  return r;
}

void eval_g(const std::vector<Func>& g, const double* x, double* out) {
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i](x);
}

Vec newton_direction(const Mat& H, const Vec& grad) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.transpose()));
  const Vec& ev = es.eigenvalues();
  const double mx = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Vec coef = es.eigenvectors().transpose() * grad;
  for (Eigen::Index i = 0; i < ev.size(); ++i) coef[i] = ev[i] > 1e-13 * mx ? coef[i] / ev[i] : 0.0;
  Vec d = -(es.eigenvectors() * coef);
  if (!(d.dot(grad) < 0)) d = -grad;
  return d;
}

Solution active_set(const Measure& prior, const ConstraintSet& cs, const SolverOptions& opt,
                    std::optional<double> beta, const EqSolver& solve) {
  const int k = cs.k(), k1 = cs.k1();
  if (k1 == 0) return solve(cs, opt.lambda0);
  const Vec c = cs.targets();
  const Vec tol = residual_tols(prior, opt, c);
  std::vector<bool> active(k1, false);
  if (opt.lambda0.size() == k)
    for (int i = 0; i < k1; ++i) active[i] = opt.lambda0[i] > 0;
  Solution last;
  int total_iter = 0;
  for (int round = 0; round < 3 * k + 5; ++round) {
    std::vector<int> idx;
    for (int i = 0; i < k; ++i)
      if (i >= k1 || active[i]) idx.push_back(i);
    Vec l0;
    if (opt.lambda0.size() == k) {
      l0.resize(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) l0[j] = opt.lambda0[idx[j]];
    }
    Solution sub = solve(cs.subset(idx), l0);
    total_iter += sub.report.iterations;
    Vec lam = Vec::Zero(k);
    for (std::size_t j = 0; j < idx.size(); ++j) lam[idx[j]] = sub.posterior.lambda()[j];
    TiltedPosterior post(prior, cs.g, lam, beta);
    post.set_normalizer(sub.posterior.normalizer(), sub.posterior.shift());
    last.posterior = post;
    last.report = sub.report;
    last.report.iterations = total_iter;
    if (sub.report.status != SolveStatus::Converged && sub.report.status != SolveStatus::NotStronglyFeasible) {
      last.report.residuals = Vec::Constant(k, kInf);
      return last;
    }
    const Vec m = post.expect(cs.g);
    int drop = -1, add = -1;
    double worst = 0;
    for (int i = 0; i < k1; ++i)
      if (active[i] && lam[i] < -1e-12 && lam[i] < worst) {
        worst = lam[i];
        drop = i;
      }
    worst = 0;
    for (int i = 0; i < k1; ++i)
      if (!active[i] && c[i] - m[i] > tol[i] && c[i] - m[i] > worst) {
        worst = c[i] - m[i];
        add = i;
      }
    Vec res(k);
    for (int i = 0; i < k; ++i) res[i] = i < k1 && !active[i] ? std::max(0.0, c[i] - m[i]) : std::abs(m[i] - c[i]);
    last.report.residuals = res;
    if (drop >= 0) {
      active[drop] = false;
      continue;
    }
    if (add >= 0) {
      active[add] = true;
      continue;
    }
    return last;
  }
  last.report.status = SolveStatus::Infeasible;
  last.report.message = "active-set loop did not settle";
  return last;
}

}  // namespace detail

// ---------------------------------------------------------------- I-divergence

namespace {

struct ExpEval {
  bool ok = false;
  double log_z = 0;  // log E[exp(lambda.g)]
  Vec mean;
  Mat cov;
};

ExpEval eval_exp(const Measure& prior, const std::vector<Func>& g, const std::vector<double>& breaks, const Vec& lam,
                 double shift) {
  const int k = static_cast<int>(g.size());
  Integrand F;
  F.m = 1 + k + k * (k + 1) / 2;
  F.breaks = breaks;
  F.f = [&](const double* x, double* out) {
    double gv[64];
    double* gp = gv;
    std::vector<double> big;
    if (k > 64) {
      big.resize(k);
      gp = big.data();
    }
    detail::eval_g(g, x, gp);
    double l = 0;
    for (int i = 0; i < k; ++i)
      if (gp[i] != 0) l += lam[i] * gp[i];
    const double e = std::exp(l - shift);
    out[0] = e;
    int p = 1 + k;
    for (int i = 0; i < k; ++i) {
      out[1 + i] = e == 0 ? 0.0 : e * gp[i];
      for (int j = 0; j <= i; ++j) out[p++] = e == 0 ? 0.0 : e * gp[i] * gp[j];
    }
  };
  ExpEval r;
  Vec v;
  try {
    v = prior.integrate(F).value;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DivergentIntegral) return r;
    throw;
  }
  if (!(v[0] > 0) || !v.allFinite()) return r;
  r.ok = true;
  r.log_z = shift + std::log(v[0]);
  r.mean = v.segment(1, k) / v[0];
  r.cov.resize(k, k);
  int p = 1 + k;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j <= i; ++j) {
      r.cov(i, j) = r.cov(j, i) = v[p++] / v[0] - r.mean[i] * r.mean[j];
    }
  return r;
}

Solution solve_exp_equalities(const Measure& prior, const ConstraintSet& cs, const Vec& lambda0,
                              const SolverOptions& opt) {
  const int k = cs.k();
  const Vec c = cs.targets();
  const std::vector<double> breaks = cs.breaks();
  Solution out;
  Vec lam = lambda0.size() == k ? lambda0 : Vec::Zero(k);
  auto finish = [&](SolveStatus st, const ExpEval& ev, int iters, std::string msg) {
    TiltedPosterior post(prior, cs.g, lam, std::nullopt);
    if (ev.ok) post.set_normalizer(1.0, ev.log_z);
    out.posterior = post;
    out.report.status = st;
    out.report.iterations = iters;
    out.report.message = std::move(msg);
    out.report.residuals = ev.ok ? Vec((ev.mean - c).cwiseAbs()) : Vec::Constant(k, kInf);
    out.report.dual_value = ev.ok ? ev.log_z - lam.dot(c) : kInf;
    return out;
  };
  if (k == 0) {
    ExpEval ev;
    ev.ok = true;
    return finish(SolveStatus::Converged, ev, 0, "");
  }
  // a cloud's largest exponent is known exactly; densities use the previous log Z
  auto shift_for = [&](const Vec& l, double guess) {
    if (!prior.is_cloud()) return guess;
    const SampleCloud& cl = prior.cloud();
    double mx = -kInf;
    for (std::size_t i = 0; i < cl.size(); ++i) {
      double s = 0;
      for (int j = 0; j < k; ++j) {
        const double v = cs.g[j](cl.point(i));
        if (v != 0) s += l[j] * v;
      }
      mx = std::max(mx, s);
    }
    return mx;
  };
  const Vec tol = detail::residual_tols(prior, opt, c);
  ExpEval ev = eval_exp(prior, cs.g, breaks, lam, shift_for(lam, 0.0));
  if (!ev.ok) return finish(SolveStatus::DivergentIntegral, ev, 0, "integral diverges at the starting point");
  for (int it = 0; it < opt.max_iter; ++it) {
    const Vec grad = ev.mean - c;
    if ((grad.cwiseAbs().array() <= tol.array()).all()) return finish(SolveStatus::Converged, ev, it, "");
    const Vec dir = detail::newton_direction(ev.cov, grad);
    const double phi0 = ev.log_z - lam.dot(c);
    const double slope = grad.dot(dir);
    double t = 1;
    bool accepted = false;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      const Vec cand = lam + t * dir;
      ExpEval ec = eval_exp(prior, cs.g, breaks, cand, shift_for(cand, ev.log_z + t * slope + t * dir.dot(c)));
      if (!ec.ok) continue;
      const double phi1 = ec.log_z - cand.dot(c);
      const double r0 = grad.norm(), r1 = (ec.mean - c).norm();
      if (phi1 <= phi0 + 1e-4 * t * slope || (phi1 <= phi0 + 1e-14 * (1 + std::abs(phi0)) && r1 < r0)) {
        lam = cand;
        ev = ec;
        accepted = true;
        break;
      }
    }
    if (!accepted) return finish(SolveStatus::Infeasible, ev, it, "line search failed: dual has no minimizer");
    if (lam.norm() > 1e6) return finish(SolveStatus::Infeasible, ev, it, "multipliers diverge");
  }
  const Vec grad = ev.mean - c;
  if ((grad.cwiseAbs().array() <= tol.array()).all()) return finish(SolveStatus::Converged, ev, opt.max_iter, "");
  return finish(SolveStatus::Infeasible, ev, opt.max_iter, "iteration limit reached");
}

}  // namespace

Solution solve_i_divergence(const Measure& prior, const ConstraintSet& cs, const SolverOptions& opt) {
  cs.validate();
  require(opt.max_iter > 0, "solver: max_iter must be positive");
  return detail::active_set(prior, cs, opt, std::nullopt, [&](const ConstraintSet& sub, const Vec& l0) {
    return solve_exp_equalities(prior, sub, l0, opt);
  });
}

}  // namespace tiltkit
