#include "tiltkit/payoff.hpp"

#include "tiltkit/error.hpp"

#include <cmath>
#include <sstream>

namespace tiltkit {

namespace {
std::string fmt(const char* name, double v) {
  std::ostringstream os;
  os << name << "(" << v << ")";
  return os.str();
}
}  // namespace

Func call_payoff(double strike, int coord) {
  require(std::isfinite(strike), "call: strike must be finite");
  Func g;
  g.f = [strike, coord](const double* x) { return std::max(x[coord] - strike, 0.0); };
  g.name = fmt("call", strike);
  g.coord = coord;
  g.kinks = {strike};
  g.piecewise_linear = true;
  g.nonneg = true;
  return g;
}

Func put_payoff(double strike, int coord) {
  require(std::isfinite(strike), "put: strike must be finite");
  Func g;
  g.f = [strike, coord](const double* x) { return std::max(strike - x[coord], 0.0); };
  g.name = fmt("put", strike);
  g.coord = coord;
  g.kinks = {strike};
  g.piecewise_linear = true;
  g.nonneg = true;
  return g;
}

Func indicator(double lo, double hi, int coord) {
  require(lo < hi, "indicator: need lo < hi");
  Func g;
  g.f = [lo, hi, coord](const double* x) { return (x[coord] >= lo && x[coord] < hi) ? 1.0 : 0.0; };
  std::ostringstream os;
  os << "indicator[" << lo << "," << hi << ")";
  g.name = os.str();
  g.coord = coord;
  if (std::isfinite(lo)) g.kinks.push_back(lo);
  if (std::isfinite(hi)) g.kinks.push_back(hi);
  g.piecewise_linear = true;
  g.nonneg = true;
  return g;
}

Func linear(const Vec& a, double b) {
  require(a.size() >= 1 && a.allFinite(), "linear: bad coefficients");
  Func g;
  g.f = [a, b](const double* x) {
    double s = b;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += a[i] * x[i];
    return s;
  };
  int nz = 0, last = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != 0) {
      ++nz;
      last = static_cast<int>(i);
    }
  g.name = "linear";
  if (nz <= 1) {
    g.coord = last;
    g.piecewise_linear = true;
  }
  return g;
}

Func coordinate(int i) {
  require(i >= 0, "coordinate: negative index");
  Func g;
  g.f = [i](const double* x) { return x[i]; };
  g.name = "x" + std::to_string(i + 1);
  g.coord = i;
  g.piecewise_linear = true;
  return g;
}

Func power(double p, int coord) {
  require(std::isfinite(p) && p > 0, "power: exponent must be > 0");
  Func g;
  g.f = [p, coord](const double* x) { return x[coord] <= 0 ? 0.0 : std::pow(x[coord], p); };
  g.name = fmt("power", p);
  g.coord = coord;
  g.nonneg = true;
  g.piecewise_linear = (p == 1.0);
  if (p != 1.0) g.kinks = {0.0};
  return g;
}

Func constant(double v) {
  Func g;
  g.f = [v](const double*) { return v; };
  g.name = fmt("const", v);
  g.piecewise_linear = true;
  g.nonneg = v >= 0;
  return g;
}

Func custom_func(std::function<double(const double*)> f, std::string name) {
  Func g;
  g.f = std::move(f);
  g.name = std::move(name);
  return g;
}

Func scaled(const Func& g, double s) {
  Func h = g;
  auto inner = g.f;
  h.f = [inner, s](const double* x) { return s * inner(x); };
  h.nonneg = g.nonneg && s >= 0;
  h.name = g.name + "*" + std::to_string(s);
  return h;
}

double lognormal_call_expectation(double mu, double sigma2, double strike) {
  require(sigma2 > 0 && std::isfinite(mu), "lognormal_call_expectation: need sigma2 > 0");
  const double sd = std::sqrt(sigma2), fwd = std::exp(mu + 0.5 * sigma2);
  if (strike <= 0) return fwd - strike;
  const double d1 = (mu + sigma2 - std::log(strike)) / sd, d2 = d1 - sd;
  auto Phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  return fwd * Phi(d1) - strike * Phi(d2);
}

}  // namespace tiltkit
