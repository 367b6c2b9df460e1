#pragma once

#include "tiltkit/cloud.hpp"
#include "tiltkit/density.hpp"
#include "tiltkit/kernels.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tiltkit {

struct EngineConfig {
  enum class Method { Auto, Adaptive1D, Tensor, MonteCarlo };
  Method method = Method::Auto;
  double abs_tol = 1e-13;
  double rel_tol = 1e-11;
  double truncation_mass = 1e-10;
  std::uint64_t seed = 20240517;
  std::size_t n_samples = 1'000'000;
  int max_panels = 2000;
  bool parallel = true;

  void validate() const;
};

using PointFn = kernels::PointFn;

// m-component integrand; the engine multiplies by the pdf itself.
// breaks: known kinks/jumps along coordinate 0
struct Integrand {
  int m = 1;
  PointFn f;
  std::vector<double> breaks;
};

struct Estimate {
  Vec value;
  Vec error;
  bool converged = true;
  long evaluations = 0;
};

Estimate integrate(const Density& d, const Integrand& f, const EngineConfig& cfg = {});
double expectation(const Density& d, const std::function<double(const double*)>& phi, const EngineConfig& cfg = {});

// custom pdfs are trusted; this reports (never fixes) a bad normalization
struct NormalizationCheck {
  double mass = 0;
  bool ok = false;
  std::string message;
};
NormalizationCheck check_normalized(const Density& d, const EngineConfig& cfg = {}, double tol = 1e-6);

// --- lower-level 1-D machinery -------------------------------------------

// f returns the full (weight-folded) integrand at x
using LineFn = std::function<void(double x, double* out)>;

struct LineSpec {
  Interval range;
  std::vector<double> mesh;           // interior breakpoints
  double trunc_lo = std::nan("");     // starting truncation bounds for the divergence test
  double trunc_hi = std::nan("");
};

struct Panel {
  enum Type { Finite, RightTail, LeftTail } type = Finite;
  double a = 0, b = 0;            // parameter range
  double anchor = 0, scale = 1;   // tail map x = anchor +/- scale u/(1-u)
  Vec value, error;
};

Estimate integrate_line(const LineSpec& line, const LineFn& f, int m, const EngineConfig& cfg, bool parallel,
                        std::vector<Panel>* panels_out = nullptr, bool divergence_check = true);

// Quadrature rule for a 1-D density: sum_i w[i] phi(x[i]) ~ E[phi]. Nodes come from the
// converged panels of `ref` (which should cover the smoothness of the intended integrands).
struct Rule1D {
  std::vector<double> x, w;
};
Rule1D extract_rule(const Density& d, const Integrand& ref, const EngineConfig& cfg = {});
// same along a line with an explicit weight function; ref returns unweighted values
Rule1D extract_line_rule(const LineSpec& line, const std::function<double(double)>& weight, const LineFn& ref, int m,
                         const EngineConfig& cfg, bool parallel);

LineSpec line_for(const Density& d, int coord, const double* prefix, const EngineConfig& cfg,
                  const std::vector<double>& extra_breaks = {});

}  // namespace tiltkit
