#include "tiltkit/engine.hpp"

#include "tiltkit/error.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <limits>
#include <sstream>

namespace tiltkit {

void EngineConfig::validate() const {
  auto in01 = [](double v) { return v > 0 && v < 1; };
  require(in01(abs_tol), "engine: abs_tol must be in (0,1)");
  require(in01(rel_tol), "engine: rel_tol must be in (0,1)");
  require(in01(truncation_mass), "engine: truncation_mass must be in (0,1)");
  require(n_samples >= 1, "engine: n_samples must be >= 1");
  require(max_panels >= 16, "engine: max_panels must be >= 16");
}

namespace {

struct GK21 {
  double x[21], wk[21], wg[21];
};

const GK21& gk21() {
  static const GK21 r = [] {
    GK21 g{};
    using K = boost::math::quadrature::gauss_kronrod<double, 21>;
    using G = boost::math::quadrature::gauss<double, 10>;
    const auto& a = K::abscissa();
    const auto& wk = K::weights();
    const auto& wg = G::weights();
    g.x[0] = 0;
    g.wk[0] = wk[0];
    g.wg[0] = 0;
    for (int i = 1; i <= 10; ++i) {
      const double gw = (i % 2 == 1) ? wg[i / 2] : 0.0;
      g.x[2 * i - 1] = a[i];
      g.x[2 * i] = -a[i];
      g.wk[2 * i - 1] = g.wk[2 * i] = wk[i];
      g.wg[2 * i - 1] = g.wg[2 * i] = gw;
    }
    return g;
  }();
  return r;
}

inline double map_node(const Panel& p, double u, double& jac) {
  if (p.type == Panel::Finite) {
    jac = 1;
    return u;
  }
  const double om = 1 - u;
  jac = p.scale / (om * om);
  const double t = p.scale * u / om;
  return p.type == Panel::RightTail ? p.anchor + t : p.anchor - t;
}

bool splittable(const Panel& p) {
  const double w = p.b - p.a;
  if (p.type == Panel::Finite) return w > 1e-300 && w > 16 * std::numeric_limits<double>::epsilon() * std::max(std::abs(p.a), std::abs(p.b));
  return w > 1e-13;
}

// evaluates GK21 on the given panels in place
long eval_panels(std::vector<Panel>& ps, const std::vector<std::size_t>& which, const LineFn& f, int m,
                 bool parallel) {
  if (which.empty()) return 0;
  const GK21& g = gk21();
  const std::size_t n = which.size() * 21;
  std::vector<double> xs(n), jac(n), vals(n * m);
  for (std::size_t k = 0; k < which.size(); ++k) {
    const Panel& p = ps[which[k]];
    const double mid = 0.5 * (p.a + p.b), half = 0.5 * (p.b - p.a);
    for (int j = 0; j < 21; ++j) xs[k * 21 + j] = map_node(p, mid + half * g.x[j], jac[k * 21 + j]);
  }
  kernels::eval_points(xs.data(), 1, n, [&](const double* x, double* out) { f(x[0], out); }, m, vals.data(),
                       parallel);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t k = 0; k < which.size(); ++k) {
    Panel& p = ps[which[k]];
    const double half = 0.5 * (p.b - p.a);
    p.value.resize(m);
    p.error.resize(m);
    for (int c = 0; c < m; ++c) {
      double rk = 0, rg = 0, rabs = 0;
      for (int j = 0; j < 21; ++j) {
        const double v = vals[(k * 21 + j) * m + c] * jac[k * 21 + j];
        if (!std::isfinite(v)) {
          std::ostringstream os;
          os << "non-finite integrand at x = " << xs[k * 21 + j];
          fail(ErrorCode::DivergentIntegral, os.str());
        }
        rk += g.wk[j] * v;
        rg += g.wg[j] * v;
        rabs += g.wk[j] * std::abs(v);
      }
      double rasc = 0;
      const double mean = 0.5 * rk;
      for (int j = 0; j < 21; ++j) rasc += g.wk[j] * std::abs(vals[(k * 21 + j) * m + c] * jac[k * 21 + j] - mean);
      double err = std::abs((rk - rg) * half);
      rasc *= std::abs(half);
      rabs *= std::abs(half);
      if (rasc != 0 && err != 0) err = rasc * std::min(1.0, std::pow(200 * err / rasc, 1.5));
      if (rabs > std::numeric_limits<double>::min() / (50 * eps)) err = std::max(50 * eps * rabs, err);
      p.value[c] = rk * half;
      p.error[c] = err;
    }
  }
  return static_cast<long>(n);
}

void totals(const std::vector<Panel>& ps, int m, Vec& val, Vec& err) {
  val = Vec::Zero(m);
  err = Vec::Zero(m);
  for (const Panel& p : ps) {
    val += p.value;
    err += p.error;
  }
}

}  // namespace

Estimate integrate_line(const LineSpec& line, const LineFn& f, int m, const EngineConfig& cfg, bool parallel,
                        std::vector<Panel>* panels_out, bool divergence_check) {
  const double lo = line.range.lo, hi = line.range.hi;
  require(lo < hi, "integrate_line: empty range");
  std::vector<double> pts;
  if (std::isfinite(lo)) pts.push_back(lo);
  for (double x : line.mesh)
    if (x > lo && x < hi) pts.push_back(x);
  if (std::isfinite(hi)) pts.push_back(hi);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.empty()) pts.push_back(0.0);

  std::vector<Panel> ps;
  auto tail_panels = [&](Panel::Type t, double anchor, double scale) {
    for (auto [a, b] : {std::pair{0.0, 0.5}, std::pair{0.5, 0.9}, std::pair{0.9, 1.0}}) {
      Panel p;
      p.type = t;
      p.a = a;
      p.b = b;
      p.anchor = anchor;
      p.scale = scale;
      ps.push_back(p);
    }
  };
  const double s_lo = pts.size() >= 2 ? pts[1] - pts[0] : std::max(1.0, std::abs(pts[0]));
  const double s_hi = pts.size() >= 2 ? pts.back() - pts[pts.size() - 2] : std::max(1.0, std::abs(pts.back()));
  if (!std::isfinite(lo)) tail_panels(Panel::LeftTail, pts.front(), s_lo);
  // left tail panels are stored in increasing-x order
  std::reverse(ps.begin(), ps.end());
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    Panel p;
    p.a = pts[i];
    p.b = pts[i + 1];
    ps.push_back(p);
  }
  if (!std::isfinite(hi)) tail_panels(Panel::RightTail, pts.back(), s_hi);

  Estimate est;
  std::vector<std::size_t> all(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) all[i] = i;
  est.evaluations += eval_panels(ps, all, f, m, parallel);

  bool converged = false;
  while (true) {
    totals(ps, m, est.value, est.error);
    Vec tol(m);
    for (int c = 0; c < m; ++c) tol[c] = std::max(cfg.abs_tol, cfg.rel_tol * std::abs(est.value[c]));
    converged = true;
    for (int c = 0; c < m; ++c)
      if (est.error[c] > tol[c]) converged = false;
    if (converged || static_cast<int>(ps.size()) >= cfg.max_panels) break;

    std::vector<double> prio(ps.size(), -1.0);
    double maxp = -1;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!splittable(ps[i])) continue;
      double pr = 0;
      for (int c = 0; c < m; ++c) pr = std::max(pr, ps[i].error[c] / tol[c]);
      prio[i] = pr;
      maxp = std::max(maxp, pr);
    }
    if (maxp <= 0) break;
    std::vector<Panel> next;
    std::vector<std::size_t> fresh;
    int budget = cfg.max_panels - static_cast<int>(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (budget > 0 && prio[i] >= maxp / 8) {
        Panel l = ps[i], r = ps[i];
        const double mid = 0.5 * (ps[i].a + ps[i].b);
        // keep increasing-x order: left tails run backwards in the parameter
        if (ps[i].type == Panel::LeftTail) {
          l.a = mid;
          r.b = mid;
        } else {
          l.b = mid;
          r.a = mid;
        }
        fresh.push_back(next.size());
        next.push_back(l);
        fresh.push_back(next.size());
        next.push_back(r);
        --budget;
      } else {
        next.push_back(ps[i]);
      }
    }
    ps.swap(next);
    est.evaluations += eval_panels(ps, fresh, f, m, parallel);
  }
  est.converged = converged;
  if (panels_out) *panels_out = ps;

  if (!converged && divergence_check && (!std::isfinite(lo) || !std::isfinite(hi))) {
    const double center = pts[pts.size() / 2];
    double u0 = std::isfinite(line.trunc_hi) ? line.trunc_hi : pts.back() + 10 * s_hi;
    double l0 = std::isfinite(line.trunc_lo) ? line.trunc_lo : pts.front() - 10 * s_lo;
    u0 = std::max(u0, center + 1e-6 * (1 + std::abs(center)));
    l0 = std::min(l0, center - 1e-6 * (1 + std::abs(center)));
    Vec I[3];
    for (int k = 0; k < 3; ++k) {
      LineSpec sub;
      const double scale = std::ldexp(1.0, k);
      sub.range.lo = std::isfinite(lo) ? lo : center + scale * (l0 - center);
      sub.range.hi = std::isfinite(hi) ? hi : center + scale * (u0 - center);
      sub.mesh = line.mesh;
      sub.mesh.push_back(center + 0.5 * scale * (u0 - center));
      I[k] = integrate_line(sub, f, m, cfg, parallel, nullptr, false).value;
    }
    const Vec d1 = I[1] - I[0], d2 = I[2] - I[1];
    for (int c = 0; c < m; ++c) {
      const double thr = 10 * cfg.rel_tol * std::abs(I[2][c]) + cfg.abs_tol;
      if (std::abs(d1[c]) > thr && std::abs(d2[c]) > thr && std::abs(d2[c]) >= 0.9 * std::abs(d1[c])) {
        std::ostringstream os;
        os << "truncated estimates do not stabilise (component " << c << ": " << I[0][c] << ", " << I[1][c]
           << ", " << I[2][c] << ")";
        fail(ErrorCode::DivergentIntegral, os.str());
      }
    }
  }
  return est;
}

LineSpec line_for(const Density& d, int coord, const double* prefix, const EngineConfig& cfg,
                  const std::vector<double>& extra_breaks) {
  LineHint h = d.line(coord, prefix);
  LineSpec s;
  s.range = h.range;
  s.mesh = h.mesh;
  for (double b : extra_breaks)
    if (b > s.range.lo && b < s.range.hi) s.mesh.push_back(b);
  std::sort(s.mesh.begin(), s.mesh.end());
  s.mesh.erase(std::unique(s.mesh.begin(), s.mesh.end()), s.mesh.end());
  if (coord == 0 && d.dim() == 1 && d.has_quantile()) {
    if (!std::isfinite(s.range.hi)) s.trunc_hi = d.quantile(1 - 0.5 * cfg.truncation_mass);
    if (!std::isfinite(s.range.lo)) s.trunc_lo = d.quantile(0.5 * cfg.truncation_mass);
  }
  return s;
}

namespace {

Estimate integrate_mc(const Density& d, const Integrand& F, const EngineConfig& cfg) {
  SampleCloud cloud = sample(d, cfg.n_samples, cfg.seed, cfg.parallel);
  const int m = F.m;
  std::vector<double> acc(2 * m);
  kernels::weighted_sum(
      cloud.points().data(), cloud.dim(), cloud.weights().data(), cloud.size(),
      [&](const double* x, double* out) {
        F.f(x, out);
        for (int c = 0; c < m; ++c) out[m + c] = out[c] * out[c];
      },
      2 * m, acc.data(), cfg.parallel);
  Estimate e;
  e.value.resize(m);
  e.error.resize(m);
  const double n = static_cast<double>(cloud.size());
  for (int c = 0; c < m; ++c) {
    if (!std::isfinite(acc[c])) fail(ErrorCode::DivergentIntegral, "monte carlo: non-finite integrand");
    e.value[c] = acc[c];
    e.error[c] = std::sqrt(std::max(0.0, acc[m + c] - acc[c] * acc[c]) / n);
  }
  e.evaluations = static_cast<long>(cloud.size());
  return e;
}

}  // namespace

Estimate integrate(const Density& d, const Integrand& F, const EngineConfig& cfg) {
  cfg.validate();
  require(F.m >= 1 && static_cast<bool>(F.f), "integrate: empty integrand");
  const int dim = d.dim();
  const int m = F.m;
  using M = EngineConfig::Method;
  const bool mc = cfg.method == M::MonteCarlo || (cfg.method == M::Auto && dim >= 3);
  if (mc) return integrate_mc(d, F, cfg);
  require(dim <= 2, "integrate: quadrature supports at most 2 dimensions");
  require(!(cfg.method == M::Adaptive1D && dim != 1), "integrate: adaptive_quadrature_1d needs a 1-D density");
  if (d.degenerate()) fail(ErrorCode::InvalidInput, "integrate: pdf undefined for singular covariance");

  auto weighted = [&](const double* x, double* out) {
    const double p = d.pdf(x);
    if (!(p >= 0)) fail(ErrorCode::InvalidInput, "pdf negative or undefined on support");
    if (p == 0) {
      for (int c = 0; c < m; ++c) out[c] = 0;
      return;
    }
    F.f(x, out);
    for (int c = 0; c < m; ++c) out[c] *= p;
  };

  if (dim == 1) {
    LineSpec line = line_for(d, 0, nullptr, cfg, F.breaks);
    return integrate_line(line, [&](double x, double* out) { weighted(&x, out); }, m, cfg, cfg.parallel);
  }

  EngineConfig inner = cfg;
  inner.abs_tol = std::max(1e-300, cfg.abs_tol * 1e-2);
  LineSpec outer = line_for(d, 0, nullptr, cfg, F.breaks);
  long evals = 0;
  Estimate e = integrate_line(
      outer,
      [&](double x1, double* out) {
        LineSpec l2 = line_for(d, 1, &x1, cfg);
        Estimate r = integrate_line(
            l2,
            [&](double x2, double* o) {
              const double x[2] = {x1, x2};
              weighted(x, o);
            },
            m, inner, false);
        for (int c = 0; c < m; ++c) out[c] = r.value[c];
#pragma omp atomic
        evals += r.evaluations;
      },
      m, cfg, cfg.parallel);
  e.evaluations = evals;
  return e;
}

double expectation(const Density& d, const std::function<double(const double*)>& phi, const EngineConfig& cfg) {
  Integrand F;
  F.m = 1;
  F.f = [&](const double* x, double* out) { out[0] = phi(x); };
  return integrate(d, F, cfg).value[0];
}

NormalizationCheck check_normalized(const Density& d, const EngineConfig& cfg, double tol) {
  NormalizationCheck c;
  c.mass = expectation(d, [](const double*) { return 1.0; }, cfg);
  c.ok = std::abs(c.mass - 1) <= tol;
  if (!c.ok) c.message = "density integrates to " + std::to_string(c.mass) + ", not 1 (not rescaled)";
  return c;
}

Rule1D extract_line_rule(const LineSpec& line, const std::function<double(double)>& weight, const LineFn& ref, int m,
                         const EngineConfig& cfg, bool parallel) {
  std::vector<Panel> panels;
  integrate_line(
      line,
      [&](double x, double* out) {
        const double p = weight(x);
        if (p == 0) {
          for (int c = 0; c < m; ++c) out[c] = 0;
          return;
        }
        ref(x, out);
        for (int c = 0; c < m; ++c) out[c] *= p;
      },
      m, cfg, parallel, &panels);
  const GK21& g = gk21();
  Rule1D r;
  for (const Panel& p : panels) {
    const double mid = 0.5 * (p.a + p.b), half = 0.5 * (p.b - p.a);
    for (int j = 0; j < 21; ++j) {
      double jac;
      const double x = map_node(p, mid + half * g.x[j], jac);
      if (!std::isfinite(x)) continue;
      const double w = g.wk[j] * std::abs(half) * jac * weight(x);
      if (w > 0) {
        r.x.push_back(x);
        r.w.push_back(w);
      }
    }
  }
  return r;
}

Rule1D extract_rule(const Density& d, const Integrand& ref, const EngineConfig& cfg) {
  require(d.dim() == 1, "extract_rule: 1-D densities only");
  require(!d.degenerate(), "extract_rule: singular density");
  LineSpec line = line_for(d, 0, nullptr, cfg, ref.breaks);
  return extract_line_rule(
      line, [&](double x) { return d.pdf(&x); }, [&](double x, double* out) { ref.f(&x, out); }, ref.m, cfg,
      cfg.parallel);
}

}  // namespace tiltkit
