#include "tiltkit/error.hpp"
#include "tiltkit/tilt.hpp"

#include <boost/math/special_functions/binomial.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include <cmath>

namespace tiltkit {

namespace {

// E[g^j], j = 0..n+1
Vec power_moments(const Measure& prior, const Func& g, int n) {
  Integrand F;
  F.m = n + 2;
  if (g.coord == 0) F.breaks = g.kinks;
  F.f = [&](const double* x, double* out) {
    const double v = g(x);
    double p = 1;
    for (int j = 0; j <= n + 1; ++j) {
      out[j] = p;
      p *= v;
    }
  };
  return prior.integrate(F).value;
}

template <class Fn>
double find_root(Fn f, double lo, double hi) {
  boost::math::tools::eps_tolerance<double> tol(52);
  boost::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve(f, lo, hi, tol, iters);
  return 0.5 * (r.first + r.second);
}

}  // namespace

double feasibility_bound(const Measure& prior, const Func& g, int n) {
  require(n >= 1, "feasibility_bound: n must be a positive integer");
  const Vec M = power_moments(prior, g, n);
  require(M[1] > 0, "feasibility_bound: E[g] must be positive");
  return M[n + 1] / (M[1] * M[n]);
}

Solution solve_single_constraint_poly(const Measure& prior, const Func& g, double a, int n) {
  require(n >= 1, "single constraint: n must be a positive integer");
  require(std::isfinite(a), "single constraint: a must be finite");
  Solution s;
  const double beta = 1.0 / n;
  Vec M;
  try {
    M = power_moments(prior, g, n);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DivergentIntegral) throw;
    s.posterior = TiltedPosterior(prior, {g}, Vec::Zero(1), beta);
    s.report.status = SolveStatus::DivergentIntegral;
    s.report.message = "moment of order n+1 diverges";
    s.report.residuals = Vec::Constant(1, kInf);
    return s;
  }
  require(M[1] > 0, "single constraint: E[g] must be positive");
  const double bound = M[n + 1] / (M[1] * M[n]);
  const double c = a * M[1];
  auto finish = [&](double lam, SolveStatus st, std::string msg) {
    TiltedPosterior post(prior, {g}, Vec::Constant(1, lam), beta);
    post.normalize();
    s.posterior = post;
    s.report.status = st;
    s.report.message = std::move(msg);
    s.report.residuals = Vec::Constant(1, std::abs(post.expect(std::vector<Func>{g})[0] - c));
    return s;
  };
  if (a == 1) return finish(0.0, SolveStatus::Converged, "");
  if (a < 1 || a >= bound) return finish(0.0, SolveStatus::Infeasible, "a outside [1, E[g^(n+1)]/(E[g]E[g^n]))");

  // P(lambda) = sum_k C(n,k) n^-k (E[g^(k+1)] - a E[g] E[g^k]) lambda^k
  Vec coef(n + 1);
  for (int k = 0; k <= n; ++k)
    coef[k] = boost::math::binomial_coefficient<double>(n, k) * std::pow(double(n), -k) * (M[k + 1] - a * M[1] * M[k]);
  auto P = [&](double l) {
    double v = 0;
    for (int k = n; k >= 0; --k) v = v * l + coef[k];
    return v;
  };
  double hi = 1;
  while (P(hi) <= 0) {
    hi *= 2;
    if (hi > 1e300) return finish(0.0, SolveStatus::Infeasible, "no positive root");
  }
  const double lam = find_root(P, 0.0, hi);
  s.report.iterations = 1;
  return finish(lam, SolveStatus::Converged, "");
}

Func block_indicator(const BlockFn& block, int i, const std::vector<double>& breaks) {
  Func f;
  f.f = [block, i](const double* x) { return block(x) == i ? 1.0 : 0.0; };
  f.name = "block" + std::to_string(i);
  f.kinks = breaks;
  f.nonneg = true;
  return f;
}

Vec block_masses(const Measure& prior, const BlockFn& block, int nblocks, const std::vector<double>& breaks) {
  require(nblocks >= 1, "block_masses: need at least one block");
  Integrand F;
  F.m = nblocks;
  F.breaks = breaks;
  F.f = [&](const double* x, double* out) {
    for (int i = 0; i < nblocks; ++i) out[i] = 0;
    const int b = block(x);
    if (b < 0 || b >= nblocks) fail(ErrorCode::InvalidInput, "block index out of range: sets must partition the support");
    out[b] = 1;
  };
  return prior.integrate(F).value;
}

TiltedPosterior disjoint_set_update(const Measure& prior, const BlockFn& block, const Vec& alphas,
                                    const std::vector<double>& breaks) {
  const int k = static_cast<int>(alphas.size());
  require(k >= 1, "disjoint_set_update: empty alphas");
  require((alphas.array() >= 0).all() && std::abs(alphas.sum() - 1) <= 1e-12,
          "disjoint_set_update: alphas must be a probability vector");
  const Vec mu = block_masses(prior, block, k, breaks);
  std::vector<Func> g;
  Vec lam(k);
  for (int i = 0; i < k; ++i) {
    if (mu[i] <= 0 && alphas[i] > 0) fail(ErrorCode::InvalidInput, "disjoint_set_update: block with zero prior mass");
    g.push_back(block_indicator(block, i, breaks));
    lam[i] = mu[i] <= 0 ? 0.0 : std::log(alphas[i] / mu[i]);
  }
  TiltedPosterior post(prior, g, lam, std::nullopt);
  post.set_normalizer(1.0, 0.0);
  return post;
}

std::vector<TruncationRow> truncated_pareto_diagnostic(double alpha, double c, const std::vector<double>& M_grid,
                                                       const EngineConfig& cfg) {
  require(alpha > 2, "truncated_pareto_diagnostic: alpha must exceed 2");
  const double mean = 1 / (alpha - 2);
  require(c >= mean, "truncated_pareto_diagnostic: c below the prior mean");
  for (std::size_t i = 1; i < M_grid.size(); ++i)
    require(M_grid[i] > M_grid[i - 1], "truncated_pareto_diagnostic: M_grid must be increasing");
  const Density f = Density::pareto(alpha);
  std::vector<TruncationRow> rows;
  for (double M : M_grid) {
    if (c == mean) {
      rows.push_back({M, 0.0, 0.0});
      continue;
    }
    if (!(M > c)) fail(ErrorCode::RootNotBracketed, "truncated_pareto_diagnostic: c not attainable on [0, M]");
    LineSpec line;
    line.range = {0.0, M};
    for (double x = 1; x < M; x *= 10) line.mesh.push_back(x);
    // Z(lambda) e^(-lambda M) and the first moment, both on [0, M]
    auto moments = [&](double lam) {
      return integrate_line(
                 line,
                 [&](double x, double* out) {
                   const double w = std::exp(lam * (x - M)) * f.pdf(x);
                   out[0] = w;
                   out[1] = w * x;
                 },
                 2, cfg, cfg.parallel, nullptr, false)
          .value;
    };
    auto excess = [&](double lam) {
      const Vec v = moments(lam);
      return v[1] / v[0] - c;
    };
    if (excess(0.0) >= 0) fail(ErrorCode::RootNotBracketed, "truncated mean already above c");
    double hi = 1.0 / M;
    while (excess(hi) <= 0) {
      hi *= 2;
      if (hi > 1e6) fail(ErrorCode::RootNotBracketed, "truncated_pareto_diagnostic: c not attainable on [0, M]");
    }
    const double lam = find_root(excess, 0.0, hi);
    const Vec v = moments(lam);
    const double log_z = lam * M + std::log(v[0]);
    rows.push_back({M, lam, lam * c - log_z});
  }
  return rows;
}

}  // namespace tiltkit
