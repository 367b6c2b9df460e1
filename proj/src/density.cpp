#include "tiltkit/density.hpp"

#include "tiltkit/error.hpp"

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tiltkit {

const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::DivergentIntegral: return "DivergentIntegral";
    case ErrorCode::DegenerateWeights: return "DegenerateWeights";
    case ErrorCode::NotAbsolutelyContinuous: return "NotAbsolutelyContinuous";
    case ErrorCode::SupportMismatch: return "SupportMismatch";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::NotStronglyFeasible: return "NotStronglyFeasible";
    case ErrorCode::RootNotBracketed: return "RootNotBracketed";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::SingularBlock: return "SingularBlock";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

const char* to_string(DensityKind k) {
  switch (k) {
    case DensityKind::Exponential: return "exponential";
    case DensityKind::Pareto: return "pareto";
    case DensityKind::Lognormal: return "lognormal";
    case DensityKind::Gamma: return "gamma";
    case DensityKind::StudentT: return "student_t";
    case DensityKind::Uniform: return "uniform";
    case DensityKind::GaussianND: return "gaussian_nd";
    case DensityKind::LognormalND: return "lognormal_nd";
    case DensityKind::Custom: return "custom";
  }
  return "unknown";
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// probabilities used to seed 1-D quadrature meshes
const double kMeshProbs[] = {1e-9, 1e-6, 1e-3, 0.02, 0.1, 0.3, 0.5,
                             0.7,  0.9,  0.98, 1 - 1e-3, 1 - 1e-6, 1 - 1e-9};

}  // namespace

struct Density::Impl {
  DensityKind kind;
  int dim = 1;
  std::vector<Interval> support;
  double a = 0, b = 0, c = 0;  // scalar parameters, meaning per kind
  Vec mean;
  Mat cov;
  Mat factor;  // cov = factor * factor^T
  Mat prec;
  double log_norm = 0;  // -0.5 log det(2 pi cov)
  bool singular = false;
  // conditional regression of coordinate j on coordinates < j
  std::vector<Vec> cond_coef;
  std::vector<double> cond_var;
  PdfFn custom;
  std::vector<std::vector<double>> hint;
  double t_lognorm = 0;  // Student t normalising constant (log)
  double g_lognorm = 0;  // gamma normalising constant (log)
};

namespace {

std::shared_ptr<Density::Impl> make_gaussian_impl(DensityKind kind, const Vec& mean, const Mat& cov) {
  const int n = static_cast<int>(mean.size());
  require(n >= 1, "gaussian: empty mean");
  require(cov.rows() == n && cov.cols() == n, "gaussian: covariance shape mismatch");
  require(mean.allFinite() && cov.allFinite(), "gaussian: non-finite parameters");
  require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff()),
          "gaussian: covariance not symmetric");
  Mat sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  require(es.eigenvalues().minCoeff() >= -1e-12 * scale, "gaussian: covariance not positive semidefinite");

  auto p = std::make_shared<Density::Impl>();
  p->kind = kind;
  p->dim = n;
  p->mean = mean;
  p->cov = sym;
  Vec ev = es.eigenvalues().cwiseMax(0.0);
  p->factor = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
  p->singular = es.eigenvalues().minCoeff() <= 1e-14 * scale;
  if (!p->singular) {
    Eigen::LLT<Mat> llt(sym);
    p->prec = llt.solve(Mat::Identity(n, n));
    double logdet = 0;
    for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    p->log_norm = -0.5 * (n * kLog2Pi + logdet);
  }
  p->cond_coef.resize(n);
  p->cond_var.resize(n);
  for (int j = 0; j < n; ++j) {
    if (j == 0) {
      p->cond_coef[0] = Vec();
      p->cond_var[0] = sym(0, 0);
      continue;
    }
    Mat s11 = sym.topLeftCorner(j, j);
    Vec s12 = sym.block(0, j, j, 1);
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(s11);
    Vec coef = cod.solve(s12);
    p->cond_coef[j] = coef;
    p->cond_var[j] = std::max(0.0, sym(j, j) - s12.dot(coef));
  }
  Interval full;
  if (kind == DensityKind::LognormalND) full.lo = 0.0;
  p->support.assign(n, full);
  return p;
}

double gaussian_quadform(const Density::Impl& p, const double* x, bool logs) {
  const int n = p.dim;
  Vec d(n);
  for (int i = 0; i < n; ++i) d[i] = (logs ? std::log(x[i]) : x[i]) - p.mean[i];
  return d.dot(p.prec * d);
}

}  // namespace

Density Density::exponential(double rate) {
  require(std::isfinite(rate) && rate > 0, "exponential: rate must be > 0");
  auto p = std::make_shared<Impl>();
  p->kind = DensityKind::Exponential;
  p->a = rate;
  p->support = {Interval{0.0, kInf}};
  return Density(p);
}

Density Density::pareto(double alpha) {
  require(std::isfinite(alpha) && alpha > 1, "pareto: alpha must be > 1");
  auto p = std::make_shared<Impl>();
  p->kind = DensityKind::Pareto;
  p->a = alpha;
  p->support = {Interval{0.0, kInf}};
  return Density(p);
}

Density Density::lognormal(double mu, double sigma2) {
  require(std::isfinite(mu) && std::isfinite(sigma2) && sigma2 > 0, "lognormal: sigma2 must be > 0");
  auto p = std::make_shared<Impl>();
  p->kind = DensityKind::Lognormal;
  p->a = mu;
  p->b = sigma2;
  p->support = {Interval{0.0, kInf}};
  return Density(p);
}

Density Density::gamma(double shape, double rate) {
  require(std::isfinite(shape) && shape > 0 && std::isfinite(rate) && rate > 0,
          "gamma: shape and rate must be > 0");
  auto p = std::make_shared<Impl>();
  p->kind = DensityKind::Gamma;
  p->a = shape;
  p->b = rate;
  p->g_lognorm = shape * std::log(rate) - std::lgamma(shape);
  p->support = {Interval{0.0, kInf}};
  return Density(p);
}

Density Density::student_t(double dof, double loc, double scale) {
  require(std::isfinite(dof) && dof > 0, "student_t: dof must be > 0");
  require(std::isfinite(loc) && std::isfinite(scale) && scale > 0, "student_t: scale must be > 0");
  auto p = std::make_shared<Impl>();
  p->kind = DensityKind::StudentT;
  p->a = dof;
  p->b = loc;
  p->c = scale;
  p->t_lognorm = std::lgamma(0.5 * (dof + 1)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * M_PI) -
                 std::log(scale);
  p->support = {Interval{-kInf, kInf}};
  return Density(p);
}

Density Density::uniform(double a, double b) {
  require(std::isfinite(a) && std::isfinite(b) && a < b, "uniform: need a < b");
  auto p = std::make_shared<Impl>();
  p->kind = DensityKind::Uniform;
  p->a = a;
  p->b = b;
  p->support = {Interval{a, b}};
  return Density(p);
}

Density Density::gaussian(double mean, double var) {
  require(std::isfinite(var) && var >= 0, "gaussian: variance must be >= 0");
  return gaussian_nd(Vec::Constant(1, mean), Mat::Constant(1, 1, var));
}

Density Density::gaussian_nd(const Vec& mean, const Mat& cov) {
  return Density(make_gaussian_impl(DensityKind::GaussianND, mean, cov));
}

Density Density::lognormal_nd(const Vec& mu, const Mat& cov) {
  return Density(make_gaussian_impl(DensityKind::LognormalND, mu, cov));
}

Density Density::custom(PdfFn pdf, std::vector<Interval> support, std::vector<std::vector<double>> mesh_hint) {
  require(static_cast<bool>(pdf), "custom: empty pdf");
  require(!support.empty(), "custom: empty support");
  for (const auto& s : support) require(s.lo < s.hi, "custom: empty support interval");
  auto p = std::make_shared<Impl>();
  p->kind = DensityKind::Custom;
  p->dim = static_cast<int>(support.size());
  p->support = std::move(support);
  p->custom = std::move(pdf);
  p->hint = std::move(mesh_hint);
  return Density(p);
}

DensityKind Density::kind() const { return p_->kind; }
int Density::dim() const { return p_->dim; }
const std::vector<Interval>& Density::support() const { return p_->support; }
const Vec& Density::mean_vector() const { return p_->mean; }
const Mat& Density::cov_matrix() const { return p_->cov; }
bool Density::degenerate() const { return p_->singular; }

double Density::param(int i) const { return i == 0 ? p_->a : (i == 1 ? p_->b : p_->c); }

double Density::log_pdf(const double* x) const {
  const Impl& p = *p_;
  switch (p.kind) {
    case DensityKind::Exponential:
      return x[0] < 0 ? -kInf : std::log(p.a) - p.a * x[0];
    case DensityKind::StudentT: {
      const double z = (x[0] - p.b) / p.c;
      return p.t_lognorm - 0.5 * (p.a + 1) * std::log1p(z * z / p.a);
    }
    case DensityKind::GaussianND:
      if (p.singular) fail(ErrorCode::InvalidInput, "pdf undefined: gaussian covariance is singular");
      return p.log_norm - 0.5 * gaussian_quadform(p, x, false);
    default:
      return std::log(pdf(x));
  }
}

double Density::pdf(const double* x) const {
  const Impl& p = *p_;
  switch (p.kind) {
    case DensityKind::Exponential:
      return x[0] < 0 ? 0.0 : p.a * std::exp(-p.a * x[0]);
    case DensityKind::Pareto:
      return x[0] < 0 ? 0.0 : (p.a - 1) * std::pow(1 + x[0], -p.a);
    case DensityKind::Lognormal: {
      if (x[0] <= 0) return 0.0;
      const double z = std::log(x[0]) - p.a;
      return std::exp(-z * z / (2 * p.b)) / (x[0] * std::sqrt(2 * M_PI * p.b));
    }
    case DensityKind::Gamma: {
      if (x[0] < 0) return 0.0;
      if (x[0] == 0) return p.a < 1 ? kInf : (p.a == 1 ? p.b : 0.0);
      return std::exp(p.g_lognorm + (p.a - 1) * std::log(x[0]) - p.b * x[0]);
    }
    case DensityKind::StudentT: {
      const double z = (x[0] - p.b) / p.c;
      return std::exp(p.t_lognorm - 0.5 * (p.a + 1) * std::log1p(z * z / p.a));
    }
    case DensityKind::Uniform:
      return (x[0] < p.a || x[0] > p.b) ? 0.0 : 1.0 / (p.b - p.a);
    case DensityKind::GaussianND:
      if (p.singular) fail(ErrorCode::InvalidInput, "pdf undefined: gaussian covariance is singular");
      return std::exp(p.log_norm - 0.5 * gaussian_quadform(p, x, false));
    case DensityKind::LognormalND: {
      if (p.singular) fail(ErrorCode::InvalidInput, "pdf undefined: lognormal covariance is singular");
      double prod = 1;
      for (int i = 0; i < p.dim; ++i) {
        if (x[i] <= 0) return 0.0;
        prod *= x[i];
      }
      return std::exp(p.log_norm - 0.5 * gaussian_quadform(p, x, true)) / prod;
    }
    case DensityKind::Custom: {
      for (int i = 0; i < p.dim; ++i)
        if (!p.support[i].contains(x[i])) return 0.0;
      return p.custom(x);
    }
  }
  return 0.0;
}

bool Density::has_quantile() const {
  const auto k = p_->kind;
  if (k == DensityKind::Custom) return false;
  if (k == DensityKind::GaussianND || k == DensityKind::LognormalND) return p_->dim == 1 && !p_->singular;
  return true;
}

double Density::cdf(double x) const {
  const Impl& p = *p_;
  require(has_quantile(), "cdf: only available for 1-D analytic kinds");
  switch (p.kind) {
    case DensityKind::Exponential: return x <= 0 ? 0.0 : -std::expm1(-p.a * x);
    case DensityKind::Pareto: return x <= 0 ? 0.0 : 1 - std::pow(1 + x, 1 - p.a);
    case DensityKind::Lognormal:
      return x <= 0 ? 0.0 : boost::math::cdf(boost::math::lognormal(p.a, std::sqrt(p.b)), x);
    case DensityKind::Gamma:
      return x <= 0 ? 0.0 : boost::math::cdf(boost::math::gamma_distribution<>(p.a, 1 / p.b), x);
    case DensityKind::StudentT:
      return boost::math::cdf(boost::math::students_t(p.a), (x - p.b) / p.c);
    case DensityKind::Uniform: return std::clamp((x - p.a) / (p.b - p.a), 0.0, 1.0);
    case DensityKind::GaussianND:
      return boost::math::cdf(boost::math::normal(p.mean[0], std::sqrt(p.cov(0, 0))), x);
    case DensityKind::LognormalND:
      return x <= 0 ? 0.0 : boost::math::cdf(boost::math::lognormal(p.mean[0], std::sqrt(p.cov(0, 0))), x);
    default: break;
  }
  return 0.0;
}

double Density::quantile(double q) const {
  const Impl& p = *p_;
  require(has_quantile(), "quantile: only available for 1-D analytic kinds");
  require(q > 0 && q < 1, "quantile: probability must be in (0,1)");
  switch (p.kind) {
    case DensityKind::Exponential: return -std::log1p(-q) / p.a;
    case DensityKind::Pareto: return std::pow(1 - q, -1 / (p.a - 1)) - 1;
    case DensityKind::Lognormal: return boost::math::quantile(boost::math::lognormal(p.a, std::sqrt(p.b)), q);
    case DensityKind::Gamma: return boost::math::quantile(boost::math::gamma_distribution<>(p.a, 1 / p.b), q);
    case DensityKind::StudentT: return p.b + p.c * boost::math::quantile(boost::math::students_t(p.a), q);
    case DensityKind::Uniform: return p.a + q * (p.b - p.a);
    case DensityKind::GaussianND:
      return boost::math::quantile(boost::math::normal(p.mean[0], std::sqrt(p.cov(0, 0))), q);
    case DensityKind::LognormalND:
      return boost::math::quantile(boost::math::lognormal(p.mean[0], std::sqrt(p.cov(0, 0))), q);
    default: break;
  }
  return 0.0;
}

std::optional<double> Density::analytic_mean() const {
  const Impl& p = *p_;
  switch (p.kind) {
    case DensityKind::Exponential: return 1 / p.a;
    case DensityKind::Pareto:
      if (p.a > 2) return 1 / (p.a - 2);
      return std::nullopt;
    case DensityKind::Lognormal: return std::exp(p.a + 0.5 * p.b);
    case DensityKind::Gamma: return p.a / p.b;
    case DensityKind::StudentT:
      if (p.a > 1) return p.b;
      return std::nullopt;
    case DensityKind::Uniform: return 0.5 * (p.a + p.b);
    case DensityKind::GaussianND:
      if (p.dim == 1) return p.mean[0];
      return std::nullopt;
    case DensityKind::LognormalND:
      if (p.dim == 1) return std::exp(p.mean[0] + 0.5 * p.cov(0, 0));
      return std::nullopt;
    default: return std::nullopt;
  }
}

double Density::analytic_variance() const {
  const Impl& p = *p_;
  switch (p.kind) {
    case DensityKind::Exponential: return 1 / (p.a * p.a);
    case DensityKind::Pareto:
      return p.a > 3 ? (p.a - 1) / ((p.a - 2) * (p.a - 2) * (p.a - 3)) : kInf;
    case DensityKind::Lognormal: return std::expm1(p.b) * std::exp(2 * p.a + p.b);
    case DensityKind::Gamma: return p.a / (p.b * p.b);
    case DensityKind::StudentT: return p.a > 2 ? p.c * p.c * p.a / (p.a - 2) : kInf;
    case DensityKind::Uniform: return (p.b - p.a) * (p.b - p.a) / 12;
    case DensityKind::GaussianND:
      if (p.dim == 1) return p.cov(0, 0);
      break;
    default: break;
  }
  fail(ErrorCode::InvalidInput, "analytic_variance: not available for this kind");
}

LineHint Density::line(int coord, const double* prefix) const {
  const Impl& p = *p_;
  require(coord >= 0 && coord < p.dim, "line: coordinate out of range");
  LineHint h;
  h.range = p.support[coord];
  auto add_normal = [&](double m, double v, bool expo) {
    if (v <= 0) {
      h.mesh.push_back(expo ? std::exp(m) : m);
      return;
    }
    boost::math::normal nd(m, std::sqrt(v));
    for (double q : kMeshProbs) {
      const double z = boost::math::quantile(nd, q);
      h.mesh.push_back(expo ? std::exp(z) : z);
    }
  };
  switch (p.kind) {
    case DensityKind::GaussianND:
    case DensityKind::LognormalND: {
      const bool expo = p.kind == DensityKind::LognormalND;
      double m = p.mean[coord];
      if (coord > 0) {
        for (int i = 0; i < coord; ++i) {
          const double xi = expo ? std::log(prefix[i]) : prefix[i];
          m += p.cond_coef[coord][i] * (xi - p.mean[i]);
        }
      }
      add_normal(m, p.cond_var[coord], expo);
      break;
    }
    case DensityKind::Custom: {
      if (coord < static_cast<int>(p.hint.size()) && !p.hint[coord].empty()) {
        h.mesh = p.hint[coord];
      } else {
        const auto& s = p.support[coord];
        const bool flo = std::isfinite(s.lo), fhi = std::isfinite(s.hi);
        if (flo && fhi) {
          for (int i = 1; i < 8; ++i) h.mesh.push_back(s.lo + (s.hi - s.lo) * i / 8.0);
        } else if (flo) {
          for (double d : {0.0, 0.5, 1.0, 2.0, 4.0}) h.mesh.push_back(s.lo + d);
        } else if (fhi) {
          for (double d : {0.0, 0.5, 1.0, 2.0, 4.0}) h.mesh.push_back(s.hi - d);
        } else {
          for (double d : {-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0}) h.mesh.push_back(d);
        }
      }
      break;
    }
    default:
      for (double q : kMeshProbs) h.mesh.push_back(quantile(q));
      break;
  }
  std::vector<double> inside;
  for (double x : h.mesh)
    if (std::isfinite(x) && x > h.range.lo && x < h.range.hi) inside.push_back(x);
  std::sort(inside.begin(), inside.end());
  inside.erase(std::unique(inside.begin(), inside.end(),
                           [](double a, double b) { return std::abs(a - b) <= 1e-12 * (1 + std::abs(a)); }),
               inside.end());
  h.mesh = std::move(inside);
  return h;
}

bool Density::can_sample() const { return p_->kind != DensityKind::Custom; }

void Density::draw(std::mt19937_64& rng, double* out) const {
  const Impl& p = *p_;
  switch (p.kind) {
    case DensityKind::Exponential:
      out[0] = std::exponential_distribution<double>(p.a)(rng);
      return;
    case DensityKind::Pareto: {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      out[0] = std::pow(1 - u, -1 / (p.a - 1)) - 1;
      return;
    }
    case DensityKind::Lognormal:
      out[0] = std::lognormal_distribution<double>(p.a, std::sqrt(p.b))(rng);
      return;
    case DensityKind::Gamma:
      out[0] = std::gamma_distribution<double>(p.a, 1 / p.b)(rng);
      return;
    case DensityKind::StudentT:
      out[0] = p.b + p.c * std::student_t_distribution<double>(p.a)(rng);
      return;
    case DensityKind::Uniform:
      out[0] = std::uniform_real_distribution<double>(p.a, p.b)(rng);
      return;
    case DensityKind::GaussianND:
    case DensityKind::LognormalND: {
      std::normal_distribution<double> nd(0.0, 1.0);
      Vec z(p.dim);
      for (int i = 0; i < p.dim; ++i) z[i] = nd(rng);
      Vec x = p.mean + p.factor * z;
      for (int i = 0; i < p.dim; ++i) out[i] = p.kind == DensityKind::LognormalND ? std::exp(x[i]) : x[i];
      return;
    }
    case DensityKind::Custom:
      fail(ErrorCode::InvalidInput, "sample: custom densities cannot be sampled");
  }
}

std::string Density::describe() const {
  const Impl& p = *p_;
  std::ostringstream os;
  os << to_string(p.kind);
  switch (p.kind) {
    case DensityKind::Exponential: os << "(rate=" << p.a << ")"; break;
    case DensityKind::Pareto: os << "(alpha=" << p.a << ")"; break;
    case DensityKind::Lognormal: os << "(mu=" << p.a << ", sigma2=" << p.b << ")"; break;
    case DensityKind::Gamma: os << "(shape=" << p.a << ", rate=" << p.b << ")"; break;
    case DensityKind::StudentT: os << "(dof=" << p.a << ", loc=" << p.b << ", scale=" << p.c << ")"; break;
    case DensityKind::Uniform: os << "(" << p.a << ", " << p.b << ")"; break;
    default: os << "[dim=" << p.dim << "]"; break;
  }
  return os.str();
}

}  // namespace tiltkit
