#include "tiltkit/marginal.hpp"

#include "tilt_detail.hpp"
#include "tiltkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <numbers>

namespace tiltkit {

// ---------------------------------------------------------------- prior plumbing

JointPrior JointPrior::of(const Density& d, const EngineConfig& cfg) {
  cfg.validate();
  JointPrior p;
  p.density = d;
  p.cfg = cfg;
  return p;
}

JointPrior JointPrior::of(const SampleCloud& c, const EngineConfig& cfg) {
  cfg.validate();
  JointPrior p;
  p.cloud = c;
  p.cfg = cfg;
  return p;
}

int JointPrior::dim() const { return density ? density->dim() : cloud->dim(); }

namespace {

// probabilists' Gauss-Hermite rule (weights sum to 1), Golub-Welsch
void gauss_hermite(int n, std::vector<double>& x, std::vector<double>& w) {
  Mat T = Mat::Zero(n, n);
  for (int i = 1; i < n; ++i) T(i, i - 1) = T(i - 1, i) = std::sqrt(double(i));
  Eigen::SelfAdjointEigenSolver<Mat> es(T);
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    x[i] = es.eigenvalues()[i];
    w[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
}

struct XRule {
  RowMat pts;  // full (x, y) rows
  Vec w;       // conditional weights, sum 1
  double log_fx = -kInf;
};

using RuleBuilder = std::function<XRule(double x)>;

RuleBuilder gaussian_builder(const Density& d) {
  const Vec& mu = d.mean_vector();
  const Mat& S = d.cov_matrix();
  const int n = d.dim(), dy = n - 1;
  const double sxx = S(0, 0);
  if (!(sxx > 0)) fail(ErrorCode::SingularBlock, "marginal: X variance is zero");
  const Vec b = S.col(0).tail(dy) / sxx;
  const Mat cond = S.bottomRightCorner(dy, dy) - b * S.row(0).tail(dy);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (cond + cond.transpose()));
  const Mat L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  int order = dy <= 2 ? 20 : dy == 3 ? 12 : dy == 4 ? 8 : 6;
  std::vector<double> gx, gw;
  gauss_hermite(order, gx, gw);
  std::size_t total = 1;
  for (int i = 0; i < dy; ++i) total *= order;
  RowMat Z(total, dy);
  Vec W(total);
  for (std::size_t j = 0; j < total; ++j) {
    std::size_t r = j;
    double wt = 1;
    for (int i = 0; i < dy; ++i) {
      Z(j, i) = gx[r % order];
      wt *= gw[r % order];
      r /= order;
    }
    W[j] = wt;
  }
  const double mx = mu[0];
  const Vec my = mu.tail(dy);
  return [=](double x) {
    XRule r;
    const Vec m = my + b * (x - mx);
    r.pts.resize(total, n);
    for (std::size_t j = 0; j < total; ++j) {
      r.pts(j, 0) = x;
      r.pts.row(j).tail(dy) = (m + L * Z.row(j).transpose()).transpose();
    }
    r.w = W;
    r.log_fx = -0.5 * (x - mx) * (x - mx) / sxx - 0.5 * std::log(2 * std::numbers::pi * sxx);
    return r;
  };
}

RuleBuilder cloud_builder(const SampleCloud& c) {
  auto groups = std::make_shared<std::map<double, std::vector<std::size_t>>>();
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c.weights()[i] > 0) (*groups)[c.point(i)[0]].push_back(i);
  return [c, groups](double x) {
    XRule r;
    auto it = groups->find(x);
    if (it == groups->end()) return r;
    const auto& idx = it->second;
    r.pts.resize(idx.size(), c.dim());
    r.w.resize(idx.size());
    double s = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      r.pts.row(j) = c.points().row(idx[j]);
      r.w[j] = c.weights()[idx[j]];
      s += r.w[j];
    }
    r.w /= s;
    r.log_fx = std::log(s);
    return r;
  };
}

RuleBuilder adaptive_builder(const Density& d, const EngineConfig& cfg) {
  require(d.dim() == 2, "marginal: non-Gaussian densities must be 2-D");
  EngineConfig inner = cfg;
  inner.parallel = false;
  return [d, inner](double x) {
    XRule r;
    LineSpec line = line_for(d, 1, &x, inner);
    Rule1D rule = extract_line_rule(
        line,
        [&](double y) {
          const double p[2] = {x, y};
          return d.pdf(p);
        },
        [](double y, double* out) {
          out[0] = 1;
          out[1] = y / (1 + std::abs(y));
        },
        2, inner, false);
    const std::size_t n = rule.x.size();
    r.pts.resize(n, 2);
    r.w.resize(n);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      r.pts(j, 0) = x;
      r.pts(j, 1) = rule.x[j];
      r.w[j] = rule.w[j];
      s += rule.w[j];
    }
    if (s > 0) r.w /= s;
    r.log_fx = s > 0 ? std::log(s) : -kInf;
    return r;
  };
}

RuleBuilder make_builder(const JointPrior& prior) {
  require(prior.dim() >= 2, "marginal: prior needs an X and a Y block");
  if (prior.cloud) return cloud_builder(*prior.cloud);
  const Density& d = *prior.density;
  if (d.kind() == DensityKind::GaussianND) return gaussian_builder(d);
  return adaptive_builder(d, prior.cfg);
}

struct Node {
  double x = 0, gw = 0, log_g = 0;
  XRule rule;
};

std::vector<Node> build_nodes(const JointPrior& prior, const MarginalView& view, const RuleBuilder& build) {
  std::vector<Node> nodes;
  const Measure& g = view.g;
  require(g.dim() == 1, "marginal: g must be one-dimensional");
  if (g.is_cloud()) {
    const SampleCloud& c = g.cloud();
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.weights()[i] > 0) nodes.push_back({c.point(i)[0], c.weights()[i], std::log(c.weights()[i]), {}});
  } else {
    const Density& gd = g.density();
    Rule1D r;
    bool done = false;
    for (int m : {3, 2, 1}) {
      Integrand ref;
      ref.m = m;
      ref.f = [m](const double* x, double* out) {
        double p = 1;
        for (int j = 0; j < m; ++j, p *= x[0]) out[j] = p;
      };
      try {
        r = extract_rule(gd, ref, g.config());
        done = true;
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DivergentIntegral) throw;
      }
    }
    require(done, "marginal: could not discretize g");
    for (std::size_t i = 0; i < r.x.size(); ++i) nodes.push_back({r.x[i], r.w[i], std::log(gd.pdf(r.x[i])), {}});
  }
  std::vector<std::exception_ptr> errs(nodes.size());
  const bool par = prior.cfg.parallel;
#pragma omp parallel for schedule(dynamic, 4) if (par)
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    try {
      nodes[i].rule = build(nodes[i].x);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  for (const Node& n : nodes)
    if (n.rule.w.size() == 0 || !std::isfinite(n.rule.log_fx))
      fail(ErrorCode::NotAbsolutelyContinuous, "marginal: g puts mass where the prior X-marginal has none");
  return nodes;
}

// tilt value at one point; log form for the exponential tilt
struct TiltForm {
  std::optional<double> beta;
  // exponential: returns lambda.h ; polynomial: returns u = 1 + beta kappa lambda.h
  double eval(const Vec& lam, const double* hv, int k, double kappa) const {
    double l = 0;
    for (int i = 0; i < k; ++i)
      if (hv[i] != 0) l += lam[i] * hv[i];
    return beta ? 1 + *beta * kappa * l : l;
  }
};

double kappa_of(const Node& n, std::optional<double> beta) {
  return beta ? std::exp(*beta * (n.rule.log_fx - n.log_g)) : 1.0;
}

struct NodeStats {
  double log_n = 0;  // log normalizer (exp) / log N (poly)
  Vec m;             // conditional mean of h under the tilt
  Mat D;             // exp: covariance; poly: d m / d lambda
  double min_u = kInf;
  double div = 0;    // exp: E_q[lambda.h] - log Z ; poly: sum w (r/N)^(beta+1)
};

NodeStats node_stats(const Node& n, const std::vector<Func>& h, const Vec& lam, std::optional<double> beta,
                     bool want_d) {
  const int k = static_cast<int>(h.size());
  const XRule& r = n.rule;
  const Eigen::Index np = r.pts.rows();
  const int dim = static_cast<int>(r.pts.cols());
  std::vector<double> hv(np * k);
  for (Eigen::Index j = 0; j < np; ++j)
    for (int i = 0; i < k; ++i) hv[j * k + i] = h[i](r.pts.data() + j * dim);
  const double kappa = kappa_of(n, beta);
  TiltForm tf{beta};
  std::vector<double> t(np);
  NodeStats s;
  double shift = 0;
  if (!beta) {
    shift = -kInf;
    for (Eigen::Index j = 0; j < np; ++j) {
      t[j] = tf.eval(lam, &hv[j * k], k, kappa);
      if (r.w[j] > 0) shift = std::max(shift, t[j]);
    }
    for (Eigen::Index j = 0; j < np; ++j) t[j] = std::exp(t[j] - shift);
  } else {
    for (Eigen::Index j = 0; j < np; ++j) {
      const double u = tf.eval(lam, &hv[j * k], k, kappa);
      if (r.w[j] > 0) s.min_u = std::min(s.min_u, u);
      t[j] = u;
    }
  }
  // t now holds exp(lambda.h - shift) or u
  double Z = 0;
  Vec S1 = Vec::Zero(k), A = Vec::Zero(k);
  Mat S2 = Mat::Zero(k, k);
  double extra = 0;
  for (Eigen::Index j = 0; j < np; ++j) {
    const double w = r.w[j];
    if (w == 0) continue;
    const double* hj = &hv[j * k];
    double e, de;
    if (!beta) {
      e = t[j];
      de = e;
    } else {
      const double u = t[j];
      if (u <= 0) continue;
      e = std::pow(u, 1 / *beta);
      de = e / u * kappa;
    }
    Z += w * e;
    for (int a = 0; a < k; ++a) {
      S1[a] += w * e * hj[a];
      A[a] += w * de * hj[a];
      if (want_d)
        for (int b = 0; b < k; ++b) S2(a, b) += w * de * hj[a] * hj[b];
    }
    if (!beta) extra += w * e * (lam.dot(Eigen::Map<const Vec>(hj, k)));
    else extra += w * e * std::pow(e, *beta);
  }
  if (!(Z > 0) || !std::isfinite(Z)) fail(ErrorCode::DegenerateWeights, "marginal: conditional tilt vanishes at a node");
  s.m = S1 / Z;
  if (!beta) {
    s.log_n = shift + std::log(Z);
    s.div = extra / Z - s.log_n;
    if (want_d) s.D = S2 / Z - s.m * s.m.transpose();
  } else {
    s.log_n = std::log(Z);
    s.div = extra / std::pow(Z, *beta + 1);
    if (want_d) s.D = (S2 - s.m * A.transpose()) / Z;
  }
  return s;
}

struct Aggregate {
  double phi = 0;  // exp: sum gw log Z ; poly: unused
  Vec m;           // sum gw m
  Mat D;
  double min_u = kInf;
  double min_strong = kInf;
};

Aggregate aggregate(const std::vector<Node>& nodes, const std::vector<Func>& h, const Vec& lam, const Vec& c,
                    std::optional<double> beta, bool parallel) {
  const int k = static_cast<int>(h.size());
  std::vector<NodeStats> st(nodes.size());
  std::vector<std::exception_ptr> errs(nodes.size());
#pragma omp parallel for schedule(dynamic, 8) if (parallel)
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    try {
      st[i] = node_stats(nodes[i], h, lam, beta, true);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  Aggregate a;
  a.m = Vec::Zero(k);
  a.D = Mat::Zero(k, k);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double gw = nodes[i].gw;
    a.phi += gw * st[i].log_n;
    a.m += gw * st[i].m;
    a.D += gw * st[i].D;
    a.min_u = std::min(a.min_u, st[i].min_u);
    if (beta) a.min_strong = std::min(a.min_strong, 1 + *beta * kappa_of(nodes[i], beta) * lam.dot(c));
  }
  return a;
}

}  // namespace

// ---------------------------------------------------------------- posterior object

struct ConditionalTilt::Impl {
  JointPrior prior;
  MarginalView view;
  Vec lambda;
  RuleBuilder build;
  std::vector<Node> nodes;
};

const Vec& ConditionalTilt::lambda() const { return p_->lambda; }
std::optional<double> ConditionalTilt::beta() const { return p_->view.beta; }
const MarginalView& ConditionalTilt::view() const { return p_->view; }

namespace {

const Node& node_at(const ConditionalTilt::Impl& p, double x, Node& scratch) {
  scratch.x = x;
  scratch.gw = 1;
  const Measure& g = p.view.g;
  if (g.is_cloud()) {
    double m = 0;
    const SampleCloud& c = g.cloud();
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.point(i)[0] == x) m += c.weights()[i];
    scratch.log_g = std::log(m);
  } else {
    scratch.log_g = std::log(g.density().pdf(x));
  }
  scratch.rule = p.build(x);
  return scratch;
}

}  // namespace

double ConditionalTilt::per_x_normalizer(double x) const {
  Node n;
  node_at(*p_, x, n);
  return node_stats(n, p_->view.h, p_->lambda, p_->view.beta, false).log_n;
}

double ConditionalTilt::log_conditional_ratio(const double* xy) const {
  // cache the per-x normalizer for repeated calls along a y-line
  thread_local const Impl* owner = nullptr;
  thread_local double cx = std::nan(""), clog = 0, ckappa = 1;
  if (owner != p_.get() || cx != xy[0]) {
    Node n;
    node_at(*p_, xy[0], n);
    clog = node_stats(n, p_->view.h, p_->lambda, p_->view.beta, false).log_n;
    ckappa = kappa_of(n, p_->view.beta);
    owner = p_.get();
    cx = xy[0];
  }
  const int k = static_cast<int>(p_->view.h.size());
  std::vector<double> hv(k);
  for (int i = 0; i < k; ++i) hv[i] = p_->view.h[i](xy);
  TiltForm tf{p_->view.beta};
  const double t = tf.eval(p_->lambda, hv.data(), k, ckappa);
  if (!p_->view.beta) return t - clog;
  return t <= 0 ? -kInf : std::log(t) / *p_->view.beta - clog;
}

double ConditionalTilt::conditional_ratio(const double* xy) const { return std::exp(log_conditional_ratio(xy)); }

double ConditionalTilt::ratio(const double* xy) const {
  Node n;
  node_at(*p_, xy[0], n);
  return std::exp(n.log_g - n.rule.log_fx) * conditional_ratio(xy);
}

double ConditionalTilt::pdf(const double* xy) const {
  require(p_->prior.density.has_value(), "ConditionalTilt::pdf: density prior required");
  const double lf = p_->prior.density->log_pdf(xy);
  if (lf == -kInf) return 0;
  const double lr = log_conditional_ratio(xy);
  if (lr == -kInf) return 0;
  Node n;
  node_at(*p_, xy[0], n);
  // log space: f(x,y) underflows long before g(x) f(y|x) does
  return std::exp(lf + n.log_g - n.rule.log_fx + lr);
}

Vec ConditionalTilt::expect(const std::vector<Func>& f) const {
  const int m = static_cast<int>(f.size());
  Vec out = Vec::Zero(m);
  const int k = static_cast<int>(p_->view.h.size());
  TiltForm tf{p_->view.beta};
  for (const Node& n : p_->nodes) {
    const XRule& r = n.rule;
    const int dim = static_cast<int>(r.pts.cols());
    const double kappa = kappa_of(n, p_->view.beta);
    std::vector<double> t(r.pts.rows()), hv(k);
    double shift = -kInf;
    for (Eigen::Index j = 0; j < r.pts.rows(); ++j) {
      const double* x = r.pts.data() + j * dim;
      for (int i = 0; i < k; ++i) hv[i] = p_->view.h[i](x);
      t[j] = tf.eval(p_->lambda, hv.data(), k, kappa);
      if (!p_->view.beta) shift = std::max(shift, t[j]);
    }
    double Z = 0;
    Vec acc = Vec::Zero(m);
    for (Eigen::Index j = 0; j < r.pts.rows(); ++j) {
      const double e = p_->view.beta ? (t[j] <= 0 ? 0.0 : std::pow(t[j], 1 / *p_->view.beta)) : std::exp(t[j] - shift);
      const double we = r.w[j] * e;
      if (we == 0) continue;
      Z += we;
      for (int i = 0; i < m; ++i) acc[i] += we * f[i](r.pts.data() + j * dim);
    }
    out += n.gw * acc / Z;
  }
  return out;
}

std::pair<Vec, Mat> ConditionalTilt::conditional_moments(double x) const {
  Node n;
  node_at(*p_, x, n);
  const XRule& r = n.rule;
  const int dim = static_cast<int>(r.pts.cols()), dy = dim - 1;
  const int k = static_cast<int>(p_->view.h.size());
  const double kappa = kappa_of(n, p_->view.beta);
  TiltForm tf{p_->view.beta};
  std::vector<double> t(r.pts.rows()), hv(k);
  double shift = -kInf;
  for (Eigen::Index j = 0; j < r.pts.rows(); ++j) {
    const double* xy = r.pts.data() + j * dim;
    for (int i = 0; i < k; ++i) hv[i] = p_->view.h[i](xy);
    t[j] = tf.eval(p_->lambda, hv.data(), k, kappa);
    if (!p_->view.beta) shift = std::max(shift, t[j]);
  }
  double Z = 0;
  Vec m1 = Vec::Zero(dy);
  Mat m2 = Mat::Zero(dy, dy);
  for (Eigen::Index j = 0; j < r.pts.rows(); ++j) {
    const double e = p_->view.beta ? (t[j] <= 0 ? 0.0 : std::pow(t[j], 1 / *p_->view.beta)) : std::exp(t[j] - shift);
    const double we = r.w[j] * e;
    if (we == 0) continue;
    const Vec y = r.pts.row(j).tail(dy).transpose();
    Z += we;
    m1 += we * y;
    m2 += we * y * y.transpose();
  }
  m1 /= Z;
  return {m1, m2 / Z - m1 * m1.transpose()};
}

double ConditionalTilt::marginal_term() const {
  if (p_->view.beta) return 0.0;
  double s = 0;
  for (const Node& n : p_->nodes) s += n.gw * (n.log_g - n.rule.log_fx);
  return s;
}

double ConditionalTilt::conditional_term() const {
  double s = 0;
  for (const Node& n : p_->nodes) {
    const NodeStats st = node_stats(n, p_->view.h, p_->lambda, p_->view.beta, false);
    if (p_->view.beta)
      s += n.gw * std::exp(*p_->view.beta * (n.log_g - n.rule.log_fx)) * st.div;
    else
      s += n.gw * st.div;
  }
  return s;
}

double ConditionalTilt::divergence() const {
  return std::max(marginal_term() + conditional_term(), p_->view.beta ? 1.0 : 0.0);
}

std::vector<double> ConditionalTilt::node_x() const {
  std::vector<double> v;
  for (const Node& n : p_->nodes) v.push_back(n.x);
  return v;
}

std::vector<double> ConditionalTilt::node_weights() const {
  std::vector<double> v;
  for (const Node& n : p_->nodes) v.push_back(n.gw);
  return v;
}

// ---------------------------------------------------------------- solvers

namespace {

struct Setup {
  std::shared_ptr<ConditionalTilt::Impl> impl;
  Vec c;
  int k = 0;
};

Setup setup(const JointPrior& prior, const MarginalView& view) {
  require(view.h.size() == view.c.size(), "marginal: one target per view function");
  for (double v : view.c) require(std::isfinite(v), "marginal: targets must be finite");
  Setup s;
  s.impl = std::make_shared<ConditionalTilt::Impl>();
  s.impl->prior = prior;
  s.impl->view = view;
  s.impl->build = make_builder(prior);
  s.impl->nodes = build_nodes(prior, view, s.impl->build);
  s.k = static_cast<int>(view.h.size());
  s.c = Eigen::Map<const Vec>(view.c.data(), s.k);
  s.impl->lambda = Vec::Zero(s.k);
  return s;
}

MarginalSolution finish(Setup& s, const Vec& lam, const Aggregate& a, SolveStatus st, int it, std::string msg,
                        double dual) {
  s.impl->lambda = lam;
  MarginalSolution out;
  out.posterior = ConditionalTilt(s.impl);
  out.report.status = st;
  out.report.iterations = it;
  out.report.message = std::move(msg);
  out.report.dual_value = dual;
  out.report.residuals = s.k ? Vec((a.m - s.c).cwiseAbs()) : Vec();
  return out;
}

}  // namespace

MarginalSolution solve_marginal_i(const JointPrior& prior, const MarginalView& view, const SolverOptions& opt) {
  require(!view.beta, "solve_marginal_i: view has beta set; use solve_marginal_poly");
  Setup s = setup(prior, view);
  const bool par = prior.cfg.parallel;
  Vec lam = opt.lambda0.size() == s.k ? opt.lambda0 : Vec::Zero(s.k);
  if (s.k == 0) return finish(s, lam, Aggregate{}, SolveStatus::Converged, 0, "", 0.0);
  const Vec tol = detail::residual_tols(view.g, opt, s.c);
  Aggregate a = aggregate(s.impl->nodes, view.h, lam, s.c, std::nullopt, par);
  for (int it = 0; it < opt.max_iter; ++it) {
    const Vec grad = a.m - s.c;
    if ((grad.cwiseAbs().array() <= tol.array()).all())
      return finish(s, lam, a, SolveStatus::Converged, it, "", a.phi - lam.dot(s.c));
    const Vec dir = detail::newton_direction(a.D, grad);
    const double phi0 = a.phi - lam.dot(s.c), slope = grad.dot(dir);
    bool ok = false;
    double t = 1;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      const Vec cand = lam + t * dir;
      Aggregate b;
      try {
        b = aggregate(s.impl->nodes, view.h, cand, s.c, std::nullopt, par);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateWeights) throw;
        continue;
      }
      const double phi1 = b.phi - cand.dot(s.c);
      if (!std::isfinite(phi1)) continue;
      if (phi1 <= phi0 + 1e-4 * t * slope ||
          (phi1 <= phi0 + 1e-14 * (1 + std::abs(phi0)) && (b.m - s.c).norm() < grad.norm())) {
        lam = cand;
        a = b;
        ok = true;
        break;
      }
    }
    if (!ok) return finish(s, lam, a, SolveStatus::Infeasible, it, "line search failed", kInf);
    if (lam.norm() > 1e6) return finish(s, lam, a, SolveStatus::Infeasible, it, "multipliers diverge", kInf);
  }
  return finish(s, lam, a, SolveStatus::Infeasible, opt.max_iter, "iteration limit reached", kInf);
}

MarginalSolution solve_marginal_poly(const JointPrior& prior, const MarginalView& view, const SolverOptions& opt) {
  require(view.beta.has_value() && *view.beta > 0 && std::isfinite(*view.beta), "solve_marginal_poly: beta must be > 0");
  Setup s = setup(prior, view);
  const bool par = prior.cfg.parallel;
  Vec lam = opt.lambda0.size() == s.k ? opt.lambda0 : Vec::Zero(s.k);
  if (s.k == 0) return finish(s, lam, Aggregate{}, SolveStatus::Converged, 0, "", 1.0);
  const Vec tol = detail::residual_tols(view.g, opt, s.c);
  Aggregate a = aggregate(s.impl->nodes, view.h, lam, s.c, view.beta, par);
  auto merit = [&](const Aggregate& b) { return (b.m - s.c).squaredNorm(); };
  int it = 0;
  bool conv = false;
  for (; it < opt.max_iter; ++it) {
    const Vec F = a.m - s.c;
    if ((F.cwiseAbs().array() <= tol.array()).all()) {
      conv = true;
      break;
    }
    Vec step;
    Eigen::ColPivHouseholderQR<Mat> qr(a.D);
    if (qr.rank() == s.k)
      step = -qr.solve(F);
    else
      step = -(a.D.transpose() * a.D + 1e-10 * Mat::Identity(s.k, s.k)).ldlt().solve(a.D.transpose() * F);
    const double f0 = merit(a);
    bool ok = false;
    double t = 1;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      const Vec cand = lam + t * step;
      Aggregate b;
      try {
        b = aggregate(s.impl->nodes, view.h, cand, s.c, view.beta, par);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateWeights) throw;
        continue;
      }
      if (merit(b) < (1 - 1e-4 * t) * f0) {
        lam = cand;
        a = b;
        ok = true;
        break;
      }
    }
    if (!ok || lam.norm() > 1e6) break;
  }
  if (!conv) return finish(s, lam, a, SolveStatus::Infeasible, it, "no multiplier solves the view equations", kInf);
  // nonnegativity on the nodes, plus a sample of g for Gaussian priors
  double min_u = a.min_u;
  if (prior.density && prior.density->kind() == DensityKind::GaussianND && !view.g.is_cloud() &&
      view.g.density().can_sample()) {
    const SampleCloud xs = sample(view.g.density(), 10000, prior.cfg.seed, par);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Node n;
      node_at(*s.impl, xs.point(i)[0], n);
      min_u = std::min(min_u, node_stats(n, view.h, lam, view.beta, false).min_u);
    }
  }
  if (min_u < -1e-12)
    return finish(s, lam, a, SolveStatus::Infeasible, it, "root violates the nonnegativity condition", kInf);
  if (a.min_strong <= 0) return finish(s, lam, a, SolveStatus::NotStronglyFeasible, it, "not strongly feasible", kInf);
  s.impl->lambda = lam;
  const double dual = ConditionalTilt(s.impl).divergence();
  return finish(s, lam, a, SolveStatus::Converged, it, "", dual);
}

ConditionalTilt conditional_tilt_at(const JointPrior& prior, const MarginalView& view, const Vec& lambda) {
  Setup s = setup(prior, view);
  require(lambda.size() == s.k, "conditional_tilt_at: one multiplier per view function");
  s.impl->lambda = lambda;
  return ConditionalTilt(s.impl);
}

// ---------------------------------------------------------------- change of variables

ChangeOfVariables ChangeOfVariables::linear(const Mat& A) {
  require(A.rows() == A.cols() && A.rows() > 0, "linear map: A must be square");
  const Eigen::FullPivLU<Mat> lu(A);
  const double det = A.determinant();
  const double scale = std::pow(std::max(A.cwiseAbs().maxCoeff(), 1e-300), double(A.rows()));
  if (!lu.isInvertible() || std::abs(det) <= 1e-12 * scale) fail(ErrorCode::SingularJacobian, "linear map is singular");
  const Mat inv = lu.inverse();
  ChangeOfVariables c;
  c.dim = static_cast<int>(A.rows());
  c.A = A;
  const int n = c.dim;
  c.forward = [A, n](const double* z, double* v) { Eigen::Map<Vec>(v, n) = A * Eigen::Map<const Vec>(z, n); };
  c.inverse = [inv, n](const double* v, double* z) { Eigen::Map<Vec>(z, n) = inv * Eigen::Map<const Vec>(v, n); };
  const double j = std::abs(det);
  c.jacobian = [j](const double*) { return j; };
  return c;
}

ChangeOfVariables ChangeOfVariables::canonical_completion(const Mat& views) {
  const int k = static_cast<int>(views.rows()), n = static_cast<int>(views.cols());
  require(k >= 1 && k <= n, "canonical completion: need 1..N view rows");
  Mat A = views;
  if (Eigen::FullPivLU<Mat>(A).rank() < k) fail(ErrorCode::SingularJacobian, "view rows are linearly dependent");
  for (int j = 0; j < n && A.rows() < n; ++j) {
    Mat B(A.rows() + 1, n);
    B << A, Vec::Unit(n, j).transpose();
    if (Eigen::FullPivLU<Mat>(B).rank() == B.rows()) A = B;
  }
  return linear(A);
}

LiftedProblem lift_views(const ChangeOfVariables& cov, const Density& z_prior, int marginal_on,
                         const std::vector<int>& moments_on, const std::vector<double>& targets, const Measure& g) {
  const int n = cov.dim;
  require(z_prior.dim() == n, "lift_views: prior dimension differs from the map");
  require(moments_on.size() == targets.size(), "lift_views: one target per moment index");
  require(marginal_on >= 0 && marginal_on < n, "lift_views: marginal index out of range");
  std::vector<int> order{marginal_on};
  for (int i : moments_on) {
    require(i >= 0 && i < n && i != marginal_on, "lift_views: moment indices must differ from the marginal index");
    require(std::find(order.begin(), order.end(), i) == order.end(), "lift_views: repeated index");
    order.push_back(i);
  }
  for (int i = 0; i < n; ++i)
    if (std::find(order.begin(), order.end(), i) == order.end()) order.push_back(i);

  ChangeOfVariables map;
  if (cov.A) {
    Mat P = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) P(i, order[i]) = 1;
    map = ChangeOfVariables::linear(P * *cov.A);
  } else {
    ChangeOfVariables m = cov;
    m.forward = [cov, order, n](const double* z, double* v) {
      std::vector<double> t(n);
      cov.forward(z, t.data());
      for (int i = 0; i < n; ++i) v[i] = t[order[i]];
    };
    m.inverse = [cov, order, n](const double* v, double* z) {
      std::vector<double> t(n);
      for (int i = 0; i < n; ++i) t[order[i]] = v[i];
      cov.inverse(t.data(), z);
    };
    map = m;
  }
  const ChangeOfVariables& M = map;
  std::optional<Density> prior_xy;
  if (M.A && z_prior.kind() == DensityKind::GaussianND) {
    const Mat& A = *M.A;
    prior_xy = Density::gaussian_nd(A * z_prior.mean_vector(), A * z_prior.cov_matrix() * A.transpose());
  } else {
    prior_xy = Density::custom(
        [M, z_prior, n](const double* v) {
          std::vector<double> z(n);
          M.inverse(v, z.data());
          const double j = M.jacobian(z.data());
          if (!(j > 0)) fail(ErrorCode::SingularJacobian, "jacobian vanishes");
          return z_prior.pdf(z.data()) / j;
        },
        std::vector<Interval>(n));
  }
  MarginalView view{g, {}, {}, std::nullopt};
  for (std::size_t i = 0; i < moments_on.size(); ++i) {
    view.h.push_back(coordinate(static_cast<int>(i) + 1));
    view.c.push_back(targets[i]);
  }
  auto pullback = [M, n](const ConditionalTilt& post) -> ScalarFn {
    return [M, n, post](const double* z) {
      std::vector<double> v(n);
      M.forward(z, v.data());
      return post.pdf(v.data()) * M.jacobian(z);
    };
  };
  return LiftedProblem{*prior_xy, view, map, pullback};
}

}  // namespace tiltkit
