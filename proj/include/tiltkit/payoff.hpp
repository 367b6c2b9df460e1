#pragma once

#include "tiltkit/density.hpp"

#include <functional>
#include <string>
#include <vector>

namespace tiltkit {

// A scalar function on the prior's support, with the structural facts the
// solvers can exploit (kinks for quadrature, piecewise linearity and sign
// for the tilt nonnegativity check).
struct Func {
  std::function<double(const double*)> f;
  std::string name;
  int coord = 0;               // coordinate the kinks refer to
  std::vector<double> kinks;   // kinks / jumps along `coord`
  bool piecewise_linear = false;  // in x[coord] alone, linear between kinks
  bool nonneg = false;

  double operator()(const double* x) const { return f(x); }
  double operator()(double x) const { return f(&x); }
};

Func call_payoff(double strike, int coord = 0);
Func put_payoff(double strike, int coord = 0);
Func indicator(double lo, double hi, int coord = 0);  // 1 on [lo, hi)
Func linear(const Vec& a, double b = 0.0);           // a.x + b
Func coordinate(int i);
Func power(double p, int coord = 0);                  // x^p on x >= 0
Func constant(double v);
Func custom_func(std::function<double(const double*)> f, std::string name = "custom");
Func scaled(const Func& g, double s);

// E[(S - K)^+] for S ~ lognormal(mu, sigma2); times the discount factor this is Black-Scholes
double lognormal_call_expectation(double mu, double sigma2, double strike);

}  // namespace tiltkit
