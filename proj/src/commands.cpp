#include "tiltkit/commands.hpp"

#include "tiltkit/error.hpp"
#include "tiltkit/marginal.hpp"
#include "tiltkit/wls.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace tiltkit {

std::string format_price(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

namespace {

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num_or_null(v[i]));
  return a;
}

json mat_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

Vec vec_from(const json& j, const std::string& field) {
  if (!j.is_array()) fail(ErrorCode::ConfigError, "field '" + field + "': expected an array");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(ErrorCode::ConfigError, "field '" + field + "': expected numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

// ---- moment views

TiltedPosterior posterior_at(const RunConfig& rc, const Vec& lambda) {
  const ConstraintSet cs = rc.constraints();
  TiltedPosterior p(rc.prior_measure(), cs.g, lambda, rc.beta);
  p.normalize();
  return p;
}

Vec moment_residuals(const RunConfig& rc, const TiltedPosterior& post, bool equality_only) {
  const ConstraintSet cs = rc.constraints();
  if (cs.k() == 0) return Vec();
  const Vec m = post.expect(cs.g), c = cs.targets();
  Vec r(cs.k());
  for (int i = 0; i < cs.k(); ++i)
    r[i] = (!equality_only && cs.sense[i] == Sense::Geq) ? std::max(0.0, c[i] - m[i]) : std::abs(m[i] - c[i]);
  return r;
}

struct ViewSolve {
  json summary;
  std::optional<TiltedPosterior> posterior;
  bool ok = true;
};

ViewSolve solve_views(const RunConfig& rc) {
  ViewSolve out;
  json& s = out.summary;
  s["beta"] = rc.beta ? json(*rc.beta) : json(nullptr);
  const Measure prior = rc.prior_measure();
  const ConstraintSet cs = rc.constraints();
  if (rc.identity || cs.k() == 0) {
    TiltedPosterior p(prior, {}, Vec(), rc.beta);
    p.normalize();
    s["kind"] = "identity";
    s["status"] = "Converged";
    s["message"] = "";
    s["lambda"] = json::array();
    s["residuals"] = json::array();
    s["divergence"] = num_or_null(p.divergence().value);
    s["iterations"] = 0;
    out.posterior = p;
    return out;
  }
  SolverOptions so;
  so.max_iter = rc.max_iter;
  so.tol = rc.tol;
  Vec lambda;
  SolveReport rep;
  bool wls = false;
  if (rc.penalty_t || !rc.t_grid.empty()) {
    if (!rc.beta) fail(ErrorCode::ConfigError, "field 'solver.penalty_t': the least-squares fallback needs a polynomial divergence");
    wls = true;
    WlsOptions wo;
    wo.max_iter = rc.max_iter;
    PerturbedSolution ps;
    if (!rc.t_grid.empty()) {
      DistanceCurve dc = distance_curve(prior, cs, *rc.beta, rc.t_grid, wo);
      ps = dc.solutions.back();
      json curve = json::array();
      for (auto& [t, d] : dc.points) curve.push_back({{"t", t}, {"distance", d}});
      s["distance_curve"] = curve;
      s["distance_converged"] = dc.converged;
    } else {
      ps = solve_perturbed(prior, cs, *rc.beta, *rc.penalty_t, wo);
    }
    lambda = ps.lambda;
    rep = ps.report;
    s["kind"] = "wls";
    s["t"] = ps.t;
    s["distance"] = ps.distance;
    s["objective"] = num_or_null(ps.objective);
    s["cap_hit"] = ps.cap_hit;
  } else {
    Solution sol = rc.beta ? solve_polynomial(prior, cs, *rc.beta, so) : solve_i_divergence(prior, cs, so);
    lambda = sol.posterior.lambda();
    rep = sol.report;
    s["kind"] = "moment";
  }
  s["status"] = to_string(rep.status);
  s["message"] = rep.message;
  s["iterations"] = rep.iterations;
  s["lambda"] = vec_json(lambda);
  out.ok = rep.ok();
  try {
    TiltedPosterior p = posterior_at(rc, lambda);
    s["residuals"] = vec_json(moment_residuals(rc, p, wls));
    s["divergence"] = num_or_null(p.divergence().value);
    out.posterior = p;
  } catch (const Error& e) {
    if (rep.ok()) throw;
    s["residuals"] = vec_json(rep.residuals);
    s["divergence"] = nullptr;
  }
  return out;
}

// ---- marginal views

struct MarginalSetup {
  JointPrior prior;
  MarginalView view;
};

MarginalSetup marginal_setup(const RunConfig& rc) {
  const MarginalSpec& m = *rc.marginal;
  if (!rc.views.empty()) fail(ErrorCode::ConfigError, "field 'views': cannot be combined with a marginal block");
  const int n = rc.prior_density ? rc.prior_density->dim() : rc.prior_cloud->dim();
  if (m.on < 0 || m.on >= n) fail(ErrorCode::ConfigError, "field 'marginal.on': coordinate out of range");
  std::vector<int> on;
  std::vector<double> targets;
  for (auto& [i, c] : m.moments) {
    if (i < 0 || i >= n || i == m.on) fail(ErrorCode::ConfigError, "field 'marginal.moments': bad coordinate");
    on.push_back(i);
    targets.push_back(c);
  }
  MarginalSetup out;
  const Measure g = Measure::of(m.g, rc.engine);
  if (rc.prior_density) {
    LiftedProblem lp = lift_views(ChangeOfVariables::linear(Mat::Identity(n, n)), *rc.prior_density, m.on, on, targets, g);
    out.prior = JointPrior::of(lp.prior_xy, rc.engine);
    out.view = lp.view;
  } else {
    // reorder cloud columns so X comes first and the moment coordinates follow
    std::vector<int> order{m.on};
    for (int i : on) order.push_back(i);
    for (int i = 0; i < n; ++i)
      if (std::find(order.begin(), order.end(), i) == order.end()) order.push_back(i);
    const SampleCloud& c = *rc.prior_cloud;
    RowMat pts(c.size(), n);
    for (int k = 0; k < n; ++k) pts.col(k) = c.points().col(order[k]);
    out.prior = JointPrior::of(SampleCloud(pts, c.weights()), rc.engine);
    out.view.g = g;
    for (std::size_t i = 0; i < on.size(); ++i) {
      out.view.h.push_back(coordinate(static_cast<int>(i) + 1));
      out.view.c.push_back(targets[i]);
    }
  }
  out.view.beta = rc.beta;
  return out;
}

Vec marginal_residuals(const MarginalSetup& ms, const ConditionalTilt& post) {
  if (ms.view.h.empty()) return Vec();
  const Vec m = post.expect(ms.view.h);
  Vec r(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) r[i] = std::abs(m[i] - ms.view.c[i]);
  return r;
}

json solve_marginal(const RunConfig& rc) {
  const MarginalSetup ms = marginal_setup(rc);
  SolverOptions so;
  so.max_iter = rc.max_iter;
  so.tol = rc.tol;
  MarginalSolution sol = rc.beta ? solve_marginal_poly(ms.prior, ms.view, so) : solve_marginal_i(ms.prior, ms.view, so);
  json s;
  s["kind"] = "marginal";
  s["beta"] = rc.beta ? json(*rc.beta) : json(nullptr);
  s["status"] = to_string(sol.report.status);
  s["message"] = sol.report.message;
  s["iterations"] = sol.report.iterations;
  s["lambda"] = vec_json(sol.posterior.lambda());
  s["residuals"] = vec_json(marginal_residuals(ms, sol.posterior));
  s["divergence"] = sol.report.ok() ? num_or_null(sol.posterior.divergence()) : json(nullptr);
  return s;
}

void write_text(const std::string& dir, const std::string& name, const std::string& body) {
  std::filesystem::create_directories(dir);
  std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary);
  if (!f) fail(ErrorCode::ConfigError, "field '--out': cannot write " + name);
  f << body;
}

}  // namespace

RunConfig apply_overrides(RunConfig rc, const CommandOptions& opt) {
  if (opt.seed) {
    rc.seed = *opt.seed;
    rc.engine.seed = *opt.seed;
  }
  if (opt.beta) {
    if (!(*opt.beta > 0) || !std::isfinite(*opt.beta)) fail(ErrorCode::ConfigError, "field '--beta': must be > 0");
    rc.beta = *opt.beta;
  }
  if (opt.penalty_t) {
    if (!(*opt.penalty_t > 0) || !std::isfinite(*opt.penalty_t))
      fail(ErrorCode::ConfigError, "field '--penalty-t': must be > 0");
    rc.penalty_t = *opt.penalty_t;
  }
  return rc;
}

CalibrateResult run_calibrate(const RunConfig& rc) {
  const int dim = rc.prior_density ? rc.prior_density->dim() : rc.prior_cloud->dim();
  if (dim != 1) fail(ErrorCode::ConfigError, "field 'prior': calibrate needs a one-dimensional prior");
  CalibrateResult out;
  ViewSolve vs = solve_views(rc);
  out.summary = vs.summary;
  out.exit_code = vs.ok ? kExitOk : kExitInfeasible;
  const Measure prior = rc.prior_measure();
  for (double K : rc.strikes) {
    PriceRow row{K, 0, std::nan("")};
    if (rc.prior_density && rc.prior_density->kind() == DensityKind::Lognormal)
      row.prior = rc.discount * lognormal_call_expectation(rc.prior_density->param(0), rc.prior_density->param(1), K);
    else
      row.prior = rc.discount * prior.expect(call_payoff(K).f, {K});
    if (vs.posterior && vs.ok) row.posterior = rc.discount * vs.posterior->expect(call_payoff(K).f, {K});
    out.prices.push_back(row);
  }
  return out;
}

json run_update(const RunConfig& rc) {
  if (rc.marginal) return solve_marginal(rc);
  return solve_views(rc).summary;
}

namespace {
MarkowitzPosterior markowitz_of(const RunConfig& rc) {
  if (!rc.markowitz) fail(ErrorCode::ConfigError, "field 'markowitz': missing");
  const MarkowitzSpec& m = *rc.markowitz;
  return markowitz_update(GaussianPrior::from_full(m.mean, m.cov, m.kx), m.g, m.targets);
}
}  // namespace

json run_markowitz(const RunConfig& rc) {
  const MarkowitzPosterior p = markowitz_of(rc);
  json s;
  s["kind"] = "markowitz";
  s["status"] = "Converged";
  s["eg"] = vec_json(p.eg);
  s["targets"] = vec_json(p.a);
  s["cond_mean_slope"] = mat_json(p.cond_mean_slope);
  s["cond_mean_intercept"] = vec_json(p.cond_mean_intercept);
  s["cond_cov"] = mat_json(p.cond_cov);
  s["lambda"] = vec_json(p.lambda);
  return s;
}

std::vector<std::pair<double, double>> run_var(const RunConfig& rc) {
  if (!rc.var) fail(ErrorCode::ConfigError, "field 'var': missing");
  const MarkowitzPosterior p = markowitz_of(rc);
  const VarSpec& v = *rc.var;
  if (v.weights.size() != p.prior.kx() + p.prior.ky())
    fail(ErrorCode::ConfigError, "field 'var.weights': one weight per asset");
  return var_estimate(p, v.weights, v.notional, v.levels, v.samples, rc.seed, rc.engine.parallel);
}

std::vector<SweepPoint> feasibility_sweep(const Measure& prior, const Func& g1, const Func& g2, const SweepSpec& s,
                                          int* skipped) {
  require(s.n >= 1 && s.grid >= 2 && s.max > 0, "feasibility_sweep: bad grid");
  const int n = s.n;
  // moment table E[g1^i g2^j], i + j <= n + 1
  std::vector<std::pair<int, int>> idx;
  for (int i = 0; i <= n + 1; ++i)
    for (int j = 0; i + j <= n + 1; ++j) idx.emplace_back(i, j);
  const int m = static_cast<int>(idx.size());
  auto term = [&](int q) {
    Integrand F;
    F.m = 1;
    F.f = [&, q](const double* x, double* out) {
      out[0] = std::pow(g1(x), idx[q].first) * std::pow(g2(x), idx[q].second);
    };
    return F;
  };
  Vec M(m);
  try {
    Integrand F;
    F.m = m;
    F.f = [&](const double* x, double* out) {
      const double a = g1(x), b = g2(x);
      for (int q = 0; q < m; ++q) out[q] = std::pow(a, idx[q].first) * std::pow(b, idx[q].second);
    };
    M = prior.integrate(F).value;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DivergentIntegral) throw;
    for (int q = 0; q < m; ++q) {
      try {
        M[q] = prior.integrate(term(q)).value[0];
      } catch (const Error& e2) {
        if (e2.code() != ErrorCode::DivergentIntegral) throw;
        M[q] = std::nan("");
      }
    }
  }
  auto mom = [&](int i, int j) {
    for (int q = 0; q < m; ++q)
      if (idx[q].first == i && idx[q].second == j) return M[q];
    return std::nan("");
  };
  const double e1 = mom(1, 0), e2 = mom(0, 1);
  require(e1 > 0 && e2 > 0, "feasibility_sweep: E[g1] and E[g2] must be positive");
  // multinomial coefficients n! / (i! j! (n-i-j)!)
  auto multi = [n](int i, int j) {
    return std::tgamma(n + 1.0) / (std::tgamma(i + 1.0) * std::tgamma(j + 1.0) * std::tgamma(n - i - j + 1.0));
  };
  std::vector<SweepPoint> out;
  int skip = 0;
  for (int p = 0; p < s.grid; ++p) {
    for (int q = 0; q < s.grid; ++q) {
      const double lam = s.max * p / (s.grid - 1), xi = s.max * q / (s.grid - 1);
      double Z = 0, A = 0, B = 0;
      for (int i = 0; i <= n; ++i)
        for (int j = 0; i + j <= n; ++j) {
          const double coef = multi(i, j) * std::pow(lam / n, i) * std::pow(xi / n, j);
          if (coef == 0) continue;
          Z += coef * mom(i, j);
          A += coef * mom(i + 1, j);
          B += coef * mom(i, j + 1);
        }
      if (!std::isfinite(Z) || !std::isfinite(A) || !std::isfinite(B)) {
        ++skip;
        continue;
      }
      out.push_back({lam, xi, A / (e1 * Z), B / (e2 * Z)});
    }
  }
  if (skipped) *skipped = skip;
  return out;
}

std::vector<SweepPoint> run_sweep(const RunConfig& rc, int* skipped) {
  if (!rc.sweep) fail(ErrorCode::ConfigError, "field 'sweep': missing");
  const int dim = rc.prior_density ? rc.prior_density->dim() : rc.prior_cloud->dim();
  if (dim != 2) fail(ErrorCode::ConfigError, "field 'prior': sweep needs a bivariate prior");
  Func g1 = coordinate(0), g2 = coordinate(1);
  if (!rc.views.empty()) {
    if (rc.views.size() != 2) fail(ErrorCode::ConfigError, "field 'views': sweep takes exactly two functions");
    g1 = rc.views[0].g;
    g2 = rc.views[1].g;
  }
  return feasibility_sweep(rc.prior_measure(), g1, g2, *rc.sweep, skipped);
}

Vec reevaluate_summary(const RunConfig& rc, const json& summary) {
  if (!summary.is_object() || !summary.contains("kind") || !summary.contains("lambda"))
    fail(ErrorCode::ConfigError, "field 'summary': not a posterior summary");
  const std::string kind = summary.at("kind").get<std::string>();
  const Vec lambda = vec_from(summary.at("lambda"), "summary.lambda");
  RunConfig r = rc;
  if (summary.contains("beta")) r.beta = summary.at("beta").is_null() ? std::nullopt : std::optional<double>(summary.at("beta").get<double>());
  if (kind == "identity") return Vec();
  if (kind == "marginal") {
    const MarginalSetup ms = marginal_setup(r);
    return marginal_residuals(ms, conditional_tilt_at(ms.prior, ms.view, lambda));
  }
  if (kind == "moment" || kind == "wls") return moment_residuals(r, posterior_at(r, lambda), kind == "wls");
  fail(ErrorCode::ConfigError, "field 'summary.kind': cannot re-evaluate '" + kind + "'");
}

int dispatch(const std::string& command, const std::string& config_path, const CommandOptions& opt, std::ostream& out,
             std::ostream& err) {
  try {
    const RunConfig rc = apply_overrides(load_config(config_path), opt);
    const std::string dir = opt.out_dir;
    if (command == "calibrate") {
      CalibrateResult r = run_calibrate(rc);
      std::string csv = "strike,prior,posterior\n";
      for (const PriceRow& p : r.prices)
        csv += format_price(p.strike) + "," + format_price(p.prior) + "," +
               (std::isfinite(p.posterior) ? format_price(p.posterior) : std::string("nan")) + "\n";
      write_text(dir, "prices.csv", csv);
      write_text(dir, "summary.json", r.summary.dump(2) + "\n");
      out << csv << r.summary.dump(2) << "\n";
      return r.exit_code;
    }
    if (command == "update") {
      const json s = run_update(rc);
      write_text(dir, "summary.json", s.dump(2) + "\n");
      out << s.dump(2) << "\n";
      return s.at("status") == "Converged" ? kExitOk : kExitInfeasible;
    }
    if (command == "markowitz") {
      const json s = run_markowitz(rc);
      write_text(dir, "markowitz.json", s.dump(2) + "\n");
      out << s.dump(2) << "\n";
      return kExitOk;
    }
    if (command == "var") {
      const auto rows = run_var(rc);
      std::string csv = "level,value\n";
      char buf[96];
      for (auto& [l, v] : rows) {
        std::snprintf(buf, sizeof buf, "%.6g,%.4f\n", l, v);
        csv += buf;
      }
      write_text(dir, "var.csv", csv);
      out << csv;
      return kExitOk;
    }
    if (command == "sweep") {
      int skipped = 0;
      const auto pts = run_sweep(rc, &skipped);
      std::string csv = "lambda,xi,a,b\n";
      char buf[160];
      for (const SweepPoint& p : pts) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g\n", p.lambda, p.xi, p.a, p.b);
        csv += buf;
      }
      write_text(dir, "sweep.csv", csv);
      if (skipped) err << "warning: " << skipped << " grid points skipped (divergent integral)\n";
      out << pts.size() << " points written to sweep.csv\n";
      return kExitOk;
    }
    if (command == "diagnose-truncation") {
      if (!rc.truncation) fail(ErrorCode::ConfigError, "field 'truncation': missing");
      const auto rows = truncated_pareto_diagnostic(rc.truncation->alpha, rc.truncation->c, rc.truncation->M_grid, rc.engine);
      std::string csv = "M,lambda,kl\n";
      char buf[160];
      for (const TruncationRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", r.M, r.lambda, r.kl);
        csv += buf;
      }
      write_text(dir, "truncation.csv", csv);
      out << csv;
      return kExitOk;
    }
    fail(ErrorCode::ConfigError, "field '<command>': unknown command '" + command + "'");
  } catch (const Error& e) {
    const bool config = e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::InvalidInput;
    json s{{"status", to_string(e.code())}, {"message", e.what()}};
    out << s.dump() << "\n";
    err << "error: " << e.what() << "\n";
    return config ? kExitConfig : kExitInfeasible;
  }
}

}  // namespace tiltkit
