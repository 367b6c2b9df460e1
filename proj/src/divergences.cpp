#include "tiltkit/divergences.hpp"

#include "tiltkit/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace tiltkit {

namespace {

// integral of phi(ratio) against the base; divergent integrals become +inf.
// An infinite ratio (nu has mass where mu has none) also gives +inf unless
// inf_is_divergent is false.
double integrate_ratio(const ScalarFn& ratio, const Measure& base, const std::vector<double>& breaks,
                       const std::function<double(double)>& phi, bool inf_is_divergent = true) {
  std::atomic<bool> hit_inf{false};
  Integrand F;
  F.m = 1;
  F.breaks = breaks;
  F.f = [&](const double* x, double* out) {
    const double r = ratio(x);
    if (std::isnan(r) || r < 0) fail(ErrorCode::NotAbsolutelyContinuous, "ratio undefined where base has mass");
    if (std::isinf(r)) {
      if (!inf_is_divergent) fail(ErrorCode::NotAbsolutelyContinuous, "infinite ratio");
      hit_inf = true;
      out[0] = 0;
      return;
    }
    out[0] = phi(r);
  };
  // the cloud sum skips zero-weight points, where nu may still put mass
  if (base.is_cloud()) {
    const SampleCloud& c = base.cloud();
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.weights()[i] == 0 && std::isinf(ratio(c.point(i)))) {
        if (!inf_is_divergent) fail(ErrorCode::NotAbsolutelyContinuous, "infinite ratio");
        return kInf;
      }
  }
  try {
    const double v = base.integrate(F).value[0];
    return hit_inf ? kInf : v;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DivergentIntegral) return kInf;
    throw;
  }
}

}  // namespace

DivergenceValue i_divergence(const ScalarFn& ratio, const Measure& base, const std::vector<double>& breaks) {
  const double v = integrate_ratio(ratio, base, breaks, [](double r) { return r > 0 ? r * std::log(r) : 0.0; });
  return {DivKind::IDivergence, 0.0, std::max(v, 0.0)};  // floors absorb round-off
}

DivergenceValue polynomial_divergence(const ScalarFn& ratio, const Measure& base, double beta,
                                      const std::vector<double>& breaks) {
  require(std::isfinite(beta) && beta > 0, "polynomial_divergence: beta must be > 0");
  const double v = integrate_ratio(ratio, base, breaks, [beta](double r) { return r > 0 ? std::pow(r, beta + 1) : 0.0; });
  return {DivKind::Polynomial, beta, std::max(v, 1.0)};
}

DivergenceValue tsallis(const ScalarFn& ratio, const Measure& base, double alpha, const std::vector<double>& breaks) {
  require(std::isfinite(alpha) && alpha > 0, "tsallis: alpha must be > 0");
  const double v = integrate_ratio(ratio, base, breaks,
                                   [alpha](double r) { return r > 0 ? r * (std::pow(r, alpha) - 1) / alpha : 0.0; });
  return {DivKind::Tsallis, alpha, std::max(v, 0.0)};
}

DivergenceValue renyi(const ScalarFn& ratio, const Measure& base, double gamma, const std::vector<double>& breaks) {
  require(std::isfinite(gamma) && gamma > 0, "renyi: gamma must be > 0");
  if (gamma == 1) {
    DivergenceValue d = i_divergence(ratio, base, breaks);
    return {DivKind::Renyi, 1.0, d.value};
  }
  const double s = integrate_ratio(ratio, base, breaks, [gamma](double r) { return r > 0 ? std::pow(r, gamma) : 0.0; });
  return {DivKind::Renyi, gamma, std::isfinite(s) ? std::max(std::log(s) / (gamma - 1), 0.0) : kInf};
}

double tsallis_from_polynomial(double i_beta, double beta) {
  require(std::isfinite(beta) && beta > 0, "tsallis_from_polynomial: beta must be > 0");
  require(i_beta >= 1, "tsallis_from_polynomial: I_beta must be >= 1");
  return (i_beta - 1) / beta;
}

double renyi_from_polynomial(double i_beta, double beta) {
  require(std::isfinite(beta) && beta > 0, "renyi_from_polynomial: beta must be > 0");
  require(i_beta >= 1, "renyi_from_polynomial: I_beta must be >= 1");
  return std::log(i_beta) / beta;
}

DivergenceValue total_variation(const SampleCloud& p, const SampleCloud& q) {
  if (p.size() != q.size() || p.dim() != q.dim() || p.points() != q.points())
    fail(ErrorCode::SupportMismatch, "total_variation: clouds must share the same points");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p.weights()[i] - q.weights()[i]);
  return {DivKind::TotalVariation, 0.0, 0.5 * s};
}

DivergenceValue total_variation(const ScalarFn& ratio, const Measure& base, const std::vector<double>& breaks) {
  const double v = integrate_ratio(ratio, base, breaks, [](double r) { return std::abs(r - 1); }, false);
  return {DivKind::TotalVariation, 0.0, 0.5 * v};
}

DivergenceValue total_variation(const Density& p, const Density& q, const EngineConfig& cfg,
                                const std::vector<double>& breaks) {
  if (p.dim() != 1 || q.dim() != 1) fail(ErrorCode::SupportMismatch, "total_variation: 1-D densities only");
  const Interval a = p.support()[0], b = q.support()[0];
  if (a.lo != b.lo || a.hi != b.hi) fail(ErrorCode::SupportMismatch, "total_variation: supports differ");
  LineSpec l = line_for(p, 0, nullptr, cfg, breaks);
  LineSpec lq = line_for(q, 0, nullptr, cfg);
  l.mesh.insert(l.mesh.end(), lq.mesh.begin(), lq.mesh.end());
  std::sort(l.mesh.begin(), l.mesh.end());
  const double v = integrate_line(
                       l, [&](double x, double* out) { out[0] = std::abs(p.pdf(x) - q.pdf(x)); }, 1, cfg,
                       cfg.parallel)
                       .value[0];
  return {DivKind::TotalVariation, 0.0, 0.5 * v};
}

Measure discrete_measure(const Vec& q, const EngineConfig& cfg) {
  RowMat pts(q.size(), 1);
  for (Eigen::Index i = 0; i < q.size(); ++i) pts(i, 0) = static_cast<double>(i);
  return Measure::of(SampleCloud(std::move(pts), q), cfg);
}

ScalarFn discrete_ratio(const Vec& p, const Vec& q) {
  require(p.size() == q.size(), "discrete_ratio: size mismatch");
  return [p, q](const double* x) {
    const auto i = static_cast<Eigen::Index>(std::llround(x[0]));
    if (q[i] == 0) return p[i] == 0 ? 0.0 : kInf;
    return p[i] / q[i];
  };
}

bool absolutely_continuous(const Vec& p, const Vec& q) {
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (q[i] == 0 && p[i] > 0) return false;
  return true;
}

}  // namespace tiltkit
