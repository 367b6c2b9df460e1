#include "tiltkit/runconfig.hpp"

#include "tiltkit/error.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tiltkit {

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& msg) {
  fail(ErrorCode::ConfigError, "field '" + field + "': " + msg);
}

const json& need(const json& j, const std::string& key, const std::string& field) {
  if (!j.is_object() || !j.contains(key)) bad(field + "." + key, "missing");
  return j.at(key);
}

double num(const json& j, const std::string& field) {
  if (!j.is_number()) bad(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad(field, "must be finite");
  return v;
}

double num_at(const json& j, const std::string& key, const std::string& field) {
  return num(need(j, key, field), field + "." + key);
}

double num_or(const json& j, const std::string& key, double dflt, const std::string& field) {
  return j.contains(key) ? num(j.at(key), field + "." + key) : dflt;
}

int int_of(const json& j, const std::string& field) {
  if (!j.is_number_integer()) bad(field, "expected an integer");
  return j.get<int>();
}

std::vector<double> nums(const json& j, const std::string& field) {
  if (!j.is_array()) bad(field, "expected an array of numbers");
  std::vector<double> v;
  for (std::size_t i = 0; i < j.size(); ++i) v.push_back(num(j[i], field + "[" + std::to_string(i) + "]"));
  return v;
}

Vec vec_of(const json& j, const std::string& field) {
  const auto v = nums(j, field);
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Mat mat_of(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) bad(field, "expected a non-empty array of rows");
  const std::size_t n = j.size();
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = nums(j[i], field + "[" + std::to_string(i) + "]");
    if (row.size() != n) bad(field, "matrix must be square");
    for (std::size_t k = 0; k < n; ++k) m(i, k) = row[k];
  }
  return m;
}

std::string resolve(const std::string& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? p : (std::filesystem::path(base) / path).string();
}

Mat read_matrix_csv(const std::string& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) bad(field, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::stringstream ss(line);
    std::string cell;
    try {
      while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
    } catch (const std::exception&) {
      if (rows.empty()) continue;  // header
      bad(field, "non-numeric cell in " + path);
    }
    rows.push_back(r);
  }
  const std::size_t n = rows.size();
  if (n == 0) bad(field, "empty matrix in " + path);
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) bad(field, "matrix in " + path + " must be square");
    for (std::size_t k = 0; k < n; ++k) m(i, k) = rows[i][k];
  }
  return m;
}

// converts library InvalidInput from constructors into ConfigError on the field
template <class F>
auto guarded(const std::string& field, F f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    bad(field, e.what());
  }
}

}  // namespace

Density parse_density(const json& j, const std::string& field) {
  const json& k = need(j, "kind", field);
  if (!k.is_string()) bad(field + ".kind", "expected a string");
  const std::string kind = k.get<std::string>();
  return guarded(field, [&]() -> Density {
    if (kind == "exponential") return Density::exponential(num_at(j, "rate", field));
    if (kind == "pareto") return Density::pareto(num_at(j, "alpha", field));
    if (kind == "lognormal") return Density::lognormal(num_at(j, "mu", field), num_at(j, "sigma2", field));
    if (kind == "gamma") return Density::gamma(num_at(j, "shape", field), num_at(j, "rate", field));
    if (kind == "student_t")
      return Density::student_t(num_at(j, "dof", field), num_or(j, "loc", 0.0, field), num_or(j, "scale", 1.0, field));
    if (kind == "uniform") return Density::uniform(num_at(j, "a", field), num_at(j, "b", field));
    if (kind == "gaussian") return Density::gaussian(num_at(j, "mean", field), num_at(j, "var", field));
    if (kind == "gaussian_nd" || kind == "lognormal_nd") {
      const std::string mkey = kind == "gaussian_nd" ? "mean" : "mu";
      const Vec mu = vec_of(need(j, mkey, field), field + "." + mkey);
      Mat cov;
      if (j.contains("cov"))
        cov = mat_of(j.at("cov"), field + ".cov");
      else if (j.contains("cov_csv") && j.at("cov_csv").is_string())
        cov = read_matrix_csv(j.at("cov_csv").get<std::string>(), field + ".cov_csv");
      else
        bad(field + ".cov", "missing (give cov or cov_csv)");
      if (cov.rows() != mu.size()) bad(field + ".cov", "dimension differs from the mean");
      return kind == "gaussian_nd" ? Density::gaussian_nd(mu, cov) : Density::lognormal_nd(mu, cov);
    }
    bad(field + ".kind", "unknown density kind '" + kind + "'");
  });
}

Func parse_payoff(const json& j, const std::string& field) {
  const json& t = need(j, "type", field);
  if (!t.is_string()) bad(field + ".type", "expected a string");
  const std::string type = t.get<std::string>();
  const int coord = j.contains("coord") ? int_of(j.at("coord"), field + ".coord") : 0;
  if (coord < 0) bad(field + ".coord", "must be >= 0");
  return guarded(field, [&]() -> Func {
    if (type == "call") return call_payoff(num_at(j, "strike", field), coord);
    if (type == "put") return put_payoff(num_at(j, "strike", field), coord);
    if (type == "indicator") return indicator(num_at(j, "lo", field), num_at(j, "hi", field), coord);
    if (type == "linear") return linear(vec_of(need(j, "a", field), field + ".a"), num_or(j, "b", 0.0, field));
    if (type == "power") return power(num_at(j, "p", field), coord);
    bad(field + ".type", "unknown payoff type '" + type + "'");
  });
}

Measure RunConfig::prior_measure() const {
  if (prior_cloud) return Measure::of(*prior_cloud, engine);
  return Measure::of(*prior_density, engine);
}

ConstraintSet RunConfig::constraints() const {
  ConstraintSet cs;
  for (const ViewSpec& v : views) cs.add(v.g, v.tilt_target, v.sense, v.weight);
  return cs;
}

RunConfig parse_config(const json& j, const std::string& base_dir) {
  if (!j.is_object()) bad("<root>", "config must be a JSON object");
  RunConfig rc;
  rc.raw = j;
  rc.base_dir = base_dir;
  const int version = int_of(need(j, "version", "<root>"), "version");
  if (version != kConfigVersion) bad("version", "unsupported schema version " + std::to_string(version));
  static const std::vector<std::string> known = {"version", "prior", "views", "identity", "divergence", "discount",
                                                 "solver", "seed", "outputs", "marginal", "markowitz", "var",
                                                 "sweep", "truncation", "engine", "name"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) bad(it.key(), "unknown field");

  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) bad("seed", "expected a nonnegative integer");
    rc.seed = s.get<std::uint64_t>();
  }
  rc.engine.seed = rc.seed;
  if (j.contains("engine")) {
    const json& e = j.at("engine");
    rc.engine.abs_tol = num_or(e, "abs_tol", rc.engine.abs_tol, "engine");
    rc.engine.rel_tol = num_or(e, "rel_tol", rc.engine.rel_tol, "engine");
    rc.engine.truncation_mass = num_or(e, "truncation_mass", rc.engine.truncation_mass, "engine");
    if (e.contains("n_samples")) rc.engine.n_samples = static_cast<std::size_t>(int_of(e.at("n_samples"), "engine.n_samples"));
    if (e.contains("parallel")) {
      if (!e.at("parallel").is_boolean()) bad("engine.parallel", "expected a boolean");
      rc.engine.parallel = e.at("parallel").get<bool>();
    }
    guarded("engine", [&] {
      rc.engine.validate();
      return 0;
    });
  }

  // the prior: exactly one
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    if (p.is_object() && p.contains("kind") && p.at("kind") == "cloud") {
      const json& csv = need(p, "csv", "prior");
      if (!csv.is_string()) bad("prior.csv", "expected a path");
      rc.prior_cloud = guarded("prior.csv", [&] { return SampleCloud::read_csv(resolve(base_dir, csv.get<std::string>())); });
    } else {
      json pj = p;
      if (pj.is_object() && pj.contains("cov_csv") && pj.at("cov_csv").is_string())
        pj["cov_csv"] = resolve(base_dir, pj.at("cov_csv").get<std::string>());
      rc.prior_density = parse_density(pj, "prior");
    }
  } else {
    bad("prior", "missing (exactly one prior is required)");
  }

  if (j.contains("discount")) {
    const json& d = j.at("discount");
    rc.discount = std::exp(-num_at(d, "rate", "discount") * num_at(d, "maturity", "discount"));
  }

  if (j.contains("divergence")) {
    const json& d = j.at("divergence");
    const json& k = need(d, "kind", "divergence");
    if (k == "i") {
    } else if (k == "polynomial") {
      rc.beta = num_at(d, "beta", "divergence");
      if (!(*rc.beta > 0)) bad("divergence.beta", "must be > 0");
    } else {
      bad("divergence.kind", "expected \"i\" or \"polynomial\"");
    }
  }

  if (j.contains("identity")) {
    if (!j.at("identity").is_boolean()) bad("identity", "expected a boolean");
    rc.identity = j.at("identity").get<bool>();
  }

  if (j.contains("views")) {
    const json& vs = j.at("views");
    if (!vs.is_array()) bad("views", "expected an array");
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const std::string f = "views[" + std::to_string(i) + "]";
      const json& v = vs[i];
      ViewSpec s;
      s.g = parse_payoff(need(v, "payoff", f), f + ".payoff");
      s.target = num_at(v, "target", f);
      const std::string type = v.at("payoff").at("type").get<std::string>();
      const bool disc = type == "call" || type == "put";
      s.tilt_target = disc ? s.target / rc.discount : s.target;
      if (v.contains("sense")) {
        const json& se = v.at("sense");
        if (se == "eq") s.sense = Sense::Equality;
        else if (se == "geq") s.sense = Sense::Geq;
        else bad(f + ".sense", "expected \"eq\" or \"geq\"");
      }
      s.weight = num_or(v, "weight", 0.0, f);
      s.label = v.contains("label") && v.at("label").is_string() ? v.at("label").get<std::string>() : s.g.name;
      rc.views.push_back(std::move(s));
    }
  }

  if (j.contains("solver")) {
    const json& s = j.at("solver");
    rc.tol = num_or(s, "tol", 0.0, "solver");
    if (s.contains("max_iter")) rc.max_iter = int_of(s.at("max_iter"), "solver.max_iter");
    if (rc.max_iter < 1) bad("solver.max_iter", "must be >= 1");
    if (s.contains("penalty_t")) {
      rc.penalty_t = num(s.at("penalty_t"), "solver.penalty_t");
      if (!(*rc.penalty_t > 0)) bad("solver.penalty_t", "must be > 0");
    }
    if (s.contains("t_grid")) rc.t_grid = nums(s.at("t_grid"), "solver.t_grid");
  }

  if (j.contains("outputs")) {
    const json& o = j.at("outputs");
    if (o.contains("strikes")) rc.strikes = nums(o.at("strikes"), "outputs.strikes");
  }

  if (j.contains("marginal")) {
    const json& m = j.at("marginal");
    MarginalSpec ms{int_of(need(m, "on", "marginal"), "marginal.on"), parse_density(need(m, "density", "marginal"), "marginal.density"), {}};
    if (m.contains("moments")) {
      const json& mm = m.at("moments");
      if (!mm.is_array()) bad("marginal.moments", "expected an array");
      for (std::size_t i = 0; i < mm.size(); ++i) {
        const std::string f = "marginal.moments[" + std::to_string(i) + "]";
        ms.moments.emplace_back(int_of(need(mm[i], "on", f), f + ".on"), num_at(mm[i], "target", f));
      }
    }
    rc.marginal = ms;
  }

  if (j.contains("markowitz")) {
    const json& m = j.at("markowitz");
    if (!rc.prior_density || rc.prior_density->kind() != DensityKind::GaussianND)
      bad("prior.kind", "markowitz needs a gaussian_nd prior");
    MarkowitzSpec ms;
    ms.mean = rc.prior_density->mean_vector();
    ms.cov = rc.prior_density->cov_matrix();
    ms.kx = m.contains("kx") ? int_of(m.at("kx"), "markowitz.kx") : 1;
    if (ms.kx < 1 || ms.kx >= ms.mean.size()) bad("markowitz.kx", "need 1 <= kx < N");
    ms.targets = m.contains("targets") ? vec_of(m.at("targets"), "markowitz.targets") : Vec(ms.mean.tail(ms.mean.size() - ms.kx));
    if (ms.targets.size() != ms.mean.size() - ms.kx) bad("markowitz.targets", "one target per Y component");
    if (m.contains("g")) {
      const json& g = m.at("g");
      const json& k = need(g, "kind", "markowitz.g");
      if (k == "t_view") {
        if (ms.kx != 1) bad("markowitz.g", "t_view needs kx = 1");
        TScale conv = TScale::PriorVariance;
        if (g.contains("scale")) {
          if (g.at("scale") == "prior_variance") conv = TScale::PriorVariance;
          else if (g.at("scale") == "unit_variance") conv = TScale::UnitVariance;
          else bad("markowitz.g.scale", "expected \"prior_variance\" or \"unit_variance\"");
        }
        const double var = num_or(g, "var", ms.cov(0, 0), "markowitz.g");
        ms.g = Measure::of(guarded("markowitz.g", [&] {
          return t_view(num_at(g, "dof", "markowitz.g"), num_at(g, "loc", "markowitz.g"), var, conv);
        }), rc.engine);
      } else if (k == "point") {
        RowMat p(1, 1);
        p(0, 0) = num_at(g, "at", "markowitz.g");
        ms.g = Measure::of(SampleCloud::equal_weights(p), rc.engine);
      } else {
        ms.g = Measure::of(parse_density(g, "markowitz.g"), rc.engine);
      }
    } else {
      ms.g = Measure::of(guarded("markowitz", [&] {
        return Density::gaussian_nd(ms.mean.head(ms.kx), ms.cov.topLeftCorner(ms.kx, ms.kx));
      }), rc.engine);
    }
    rc.markowitz = ms;
  }

  if (j.contains("var")) {
    const json& v = j.at("var");
    VarSpec vs;
    vs.weights = vec_of(need(v, "weights", "var"), "var.weights");
    vs.notional = num_or(v, "notional", 1.0, "var");
    vs.levels = v.contains("levels") ? nums(v.at("levels"), "var.levels") : std::vector<double>{0.95, 0.99, 0.999};
    if (v.contains("samples")) vs.samples = static_cast<std::size_t>(int_of(v.at("samples"), "var.samples"));
    rc.var = vs;
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    SweepSpec ss;
    ss.n = s.contains("n") ? int_of(s.at("n"), "sweep.n") : 1;
    ss.grid = s.contains("grid") ? int_of(s.at("grid"), "sweep.grid") : 50;
    ss.max = num_or(s, "max", 10.0 * ss.n, "sweep");
    if (ss.n < 1) bad("sweep.n", "must be >= 1");
    if (ss.grid < 2) bad("sweep.grid", "must be >= 2");
    if (!(ss.max > 0)) bad("sweep.max", "must be > 0");
    rc.sweep = ss;
  }

  if (j.contains("truncation")) {
    const json& t = j.at("truncation");
    rc.truncation = TruncationSpec{num_at(t, "alpha", "truncation"), num_at(t, "c", "truncation"),
                                   nums(need(t, "M_grid", "truncation"), "truncation.M_grid")};
  }
  const bool any_view = !rc.views.empty() || rc.marginal || rc.markowitz || rc.sweep || rc.truncation;
  if (!any_view && !rc.identity) bad("views", "need at least one view, or \"identity\": true");
  if (rc.identity && !rc.views.empty()) bad("identity", "an identity run takes no views");
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "field '--config': cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ConfigError, "field '<root>': malformed JSON: " + std::string(e.what()));
  }
  return parse_config(j, std::filesystem::path(path).parent_path().string());
}

}  // namespace tiltkit
