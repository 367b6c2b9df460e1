#pragma once

#include "tiltkit/cloud.hpp"
#include "tiltkit/engine.hpp"

#include <memory>

namespace tiltkit {

// A prior the solvers can integrate against: an analytic density with its
// engine, or a weighted sample cloud (exact finite sums).
class Measure {
 public:
  static Measure of(const Density& d, const EngineConfig& cfg = {});
  static Measure of(const SampleCloud& c, const EngineConfig& cfg = {});

  int dim() const;
  bool is_cloud() const;
  // true when integrals carry Monte-Carlo error (N>=3 densities)
  bool sampled() const;
  const Density& density() const;
  const SampleCloud& cloud() const;
  const EngineConfig& config() const;

  Estimate integrate(const Integrand& f) const;
  double expect(const ScalarFn& phi, const std::vector<double>& breaks = {}) const;

  // Points used for pointwise checks of tilt nonnegativity: 1-D quantile grid
  // (1e5 points), samples for N-D densities, the points of a cloud.
  const RowMat& check_points() const;

 private:
  struct State;
  std::shared_ptr<State> s_;
};

}  // namespace tiltkit
