#include "tiltkit/gaussian.hpp"

#include "tiltkit/error.hpp"
#include "tiltkit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tiltkit {

GaussianPrior GaussianPrior::from_full(const Vec& mu, const Mat& sigma, int kx) {
  const int n = static_cast<int>(mu.size());
  require(sigma.rows() == n && sigma.cols() == n, "GaussianPrior: covariance shape differs from the mean");
  require(kx >= 1 && kx < n, "GaussianPrior: need 1 <= kx < N");
  const int ky = n - kx;
  GaussianPrior p;
  p.mu_x = mu.head(kx);
  p.mu_y = mu.tail(ky);
  p.sigma_xx = sigma.topLeftCorner(kx, kx);
  p.sigma_xy = sigma.topRightCorner(kx, ky);
  p.sigma_yx = sigma.bottomLeftCorner(ky, kx);
  p.sigma_yy = sigma.bottomRightCorner(ky, ky);
  p.validate();
  return p;
}

Vec GaussianPrior::mean() const {
  Vec m(kx() + ky());
  m << mu_x, mu_y;
  return m;
}

Mat GaussianPrior::cov() const {
  Mat S(kx() + ky(), kx() + ky());
  S << sigma_xx, sigma_xy, sigma_yx, sigma_yy;
  return S;
}

Density GaussianPrior::density() const { return Density::gaussian_nd(mean(), cov()); }

void GaussianPrior::validate() const {
  const int kx_ = kx(), ky_ = ky();
  require(kx_ >= 1 && ky_ >= 1, "GaussianPrior: X and Y must be non-empty");
  require(sigma_xx.rows() == kx_ && sigma_xx.cols() == kx_ && sigma_yy.rows() == ky_ && sigma_yy.cols() == ky_ &&
              sigma_xy.rows() == kx_ && sigma_xy.cols() == ky_ && sigma_yx.rows() == ky_ && sigma_yx.cols() == kx_,
          "GaussianPrior: block shapes inconsistent");
  const Mat S = cov();
  require(S.allFinite() && mean().allFinite(), "GaussianPrior: non-finite entries");
  require((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, S.cwiseAbs().maxCoeff()),
          "GaussianPrior: covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  require(es.eigenvalues().minCoeff() >= -1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()),
          "GaussianPrior: covariance must be positive semidefinite");
}

namespace {

Vec mean_of(const Measure& g) {
  const int k = g.dim();
  Vec m(k);
  if (g.is_cloud()) {
    const SampleCloud& c = g.cloud();
    m = c.points().transpose() * c.weights() / c.weights().sum();
    return m;
  }
  const Density& d = g.density();
  if (d.kind() == DensityKind::GaussianND) return d.mean_vector();
  if (k == 1) {
    if (auto am = d.analytic_mean()) {
      m[0] = *am;
      return m;
    }
  }
  for (int i = 0; i < k; ++i) {
    try {
      m[i] = g.expect([i](const double* x) { return x[i]; });
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DivergentIntegral) fail(ErrorCode::InvalidInput, "markowitz_update: E_g[X] is not finite");
      throw;
    }
  }
  return m;
}

}  // namespace

MarkowitzPosterior markowitz_update(const GaussianPrior& prior, const Measure& g, const Vec& a) {
  prior.validate();
  require(g.dim() == prior.kx(), "markowitz_update: g must be a density over X");
  require(a.size() == prior.ky() && a.allFinite(), "markowitz_update: one finite target per Y component");
  const Eigen::FullPivLU<Mat> lu(prior.sigma_xx);
  if (!lu.isInvertible() || std::abs(prior.sigma_xx.determinant()) <=
                                1e-14 * std::pow(std::max(prior.sigma_xx.cwiseAbs().maxCoeff(), 1e-300), prior.kx()))
    fail(ErrorCode::SingularBlock, "markowitz_update: sigma_xx is not invertible");
  MarkowitzPosterior p;
  p.prior = prior;
  p.g = g;
  p.a = a;
  p.eg = mean_of(g);
  require(p.eg.allFinite(), "markowitz_update: E_g[X] is not finite");
  p.cond_mean_slope = lu.solve(prior.sigma_xy).transpose();  // Sigma_yx Sigma_xx^-1
  p.cond_mean_intercept = a - p.cond_mean_slope * p.eg;
  const Mat cc = prior.sigma_yy - p.cond_mean_slope * prior.sigma_xy;
  p.cond_cov = 0.5 * (cc + cc.transpose());
  const Vec rhs = a - prior.mu_y - p.cond_mean_slope * (p.eg - prior.mu_x);
  p.lambda = p.cond_cov.completeOrthogonalDecomposition().solve(rhs);
  return p;
}

MarkowitzPosterior markowitz_update(const GaussianPrior& prior, const Density& g, const Vec& a) {
  return markowitz_update(prior, Measure::of(g), a);
}

RowMat MarkowitzPosterior::sample(std::size_t n, std::uint64_t seed, bool parallel) const {
  require(n >= 1, "sample: n must be >= 1");
  const int kx = prior.kx(), ky = prior.ky();
  RowMat xs(n, kx);
  if (g.is_cloud()) {
    // inverse-cdf on the cloud weights, uniforms from the same chunked generator
    const SampleCloud& c = g.cloud();
    std::vector<double> cum(c.size());
    double s = 0;
    for (std::size_t i = 0; i < c.size(); ++i) cum[i] = (s += c.weights()[i]);
    std::vector<double> u(n);
    kernels::draw_points(Density::uniform(0, 1), n, seed, u.data(), parallel);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = std::min<std::size_t>(std::lower_bound(cum.begin(), cum.end(), u[i] * s) - cum.begin(),
                                                  c.size() - 1);
      xs.row(i) = c.points().row(j);
    }
  } else {
    kernels::draw_points(g.density(), n, seed, xs.data(), parallel);
  }
  RowMat z(n, ky);
  kernels::draw_points(Density::gaussian_nd(Vec::Zero(ky), Mat::Identity(ky, ky)), n, seed ^ 0x9e3779b97f4a7c15ULL,
                       z.data(), parallel);
  Eigen::SelfAdjointEigenSolver<Mat> es(cond_cov);
  const Mat L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  RowMat out(n, kx + ky);
  out.leftCols(kx) = xs;
  out.rightCols(ky) = (cond_mean_slope * xs.transpose() + L * z.transpose()).transpose();
  out.rightCols(ky).rowwise() += cond_mean_intercept.transpose();
  return out;
}

Density t_view(double dof, double loc, double var, TScale convention) {
  require(dof > 0 && std::isfinite(loc) && var > 0, "t_view: need dof > 0 and var > 0");
  double scale = std::sqrt(var);
  if (convention == TScale::UnitVariance) {
    require(dof > 2, "t_view: unit-variance scaling needs dof > 2");
    scale *= std::sqrt((dof - 2) / dof);
  }
  return Density::student_t(dof, loc, scale);
}

TailRatio tail_ratio_diagnostic(const MarkowitzPosterior& post, int component, const std::vector<double>& s_grid,
                                std::optional<double> alpha, const EngineConfig& cfg) {
  require(post.prior.kx() == 1, "tail_ratio_diagnostic: X must be one-dimensional");
  require(component >= 0 && component < post.prior.ky(), "tail_ratio_diagnostic: component out of range");
  require(!post.g.is_cloud(), "tail_ratio_diagnostic: g must be a density");
  for (std::size_t i = 1; i < s_grid.size(); ++i)
    require(s_grid[i] > s_grid[i - 1], "tail_ratio_diagnostic: s_grid must be increasing");
  const double sxy = post.prior.sigma_xy(0, component), sxx = post.prior.sigma_xx(0, 0);
  if (sxy == 0) fail(ErrorCode::InvalidInput, "tail_ratio_diagnostic: sigma_xy is zero for this component");
  const Density& g = post.g.density();
  if (!alpha) {
    require(g.kind() == DensityKind::StudentT, "tail_ratio_diagnostic: alpha required for non-t densities");
    alpha = g.param(0) + 1;
  }
  TailRatio out;
  const double k = post.cond_mean_slope(component, 0);
  const double b = post.cond_mean_intercept[component];
  const double sd = std::sqrt(std::max(post.cond_cov(component, component), 0.0));
  out.limit = std::pow(std::abs(sxy / sxx), *alpha - 1);
  for (double s : s_grid) {
    const double gs = g.pdf(s);
    double fy;
    if (sd == 0) {
      fy = g.pdf((s - b) / k) / std::abs(k);
    } else {
      const double xs = (s - b) / k, w = sd / std::abs(k);
      std::vector<double> extra;
      for (double m : {-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0}) extra.push_back(xs + m * w);
      EngineConfig c = cfg;
      c.abs_tol = std::min(cfg.abs_tol, 1e-8 * gs);
      const LineSpec line = line_for(g, 0, nullptr, c, extra);
      const double norm = 1 / (sd * std::sqrt(2 * std::numbers::pi));
      fy = integrate_line(
               line,
               [&](double x, double* o) {
                 const double u = (s - b - k * x) / sd;
                 o[0] = g.pdf(x) * norm * std::exp(-0.5 * u * u);
               },
               1, c, c.parallel)
               .value[0];
    }
    out.curve.emplace_back(s, gs > 0 ? fy / gs : kInf);
  }
  return out;
}

std::vector<std::pair<double, double>> var_estimate(const MarkowitzPosterior& post, const Vec& weights,
                                                    double notional, const std::vector<double>& levels,
                                                    std::size_t n, std::uint64_t seed, bool parallel) {
  if (weights.size() == 0) fail(ErrorCode::InvalidInput, "var_estimate: empty portfolio weights");
  require(weights.size() == post.prior.kx() + post.prior.ky(), "var_estimate: one weight per asset");
  require(n >= 10000, "var_estimate: need n >= 1e4 samples");
  require(!levels.empty(), "var_estimate: no levels");
  for (double l : levels) require(l > 0 && l < 1, "var_estimate: levels must lie in (0, 1)");
  const RowMat r = post.sample(n, seed, parallel);
  std::vector<double> loss(n);
  for (std::size_t i = 0; i < n; ++i) loss[i] = -notional * r.row(i).dot(weights.transpose());
  std::sort(loss.begin(), loss.end());
  std::vector<std::pair<double, double>> out;
  for (double l : levels) {
    const std::size_t idx = static_cast<std::size_t>(std::ceil(l * double(n))) - 1;
    out.emplace_back(l, loss[std::min(idx, n - 1)]);
  }
  return out;
}

}  // namespace tiltkit
