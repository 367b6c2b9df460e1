#include "tiltkit/measure.hpp"

#include "tiltkit/error.hpp"

#include <mutex>
#include <optional>

namespace tiltkit {

constexpr std::size_t kCheckPoints = 100000;

struct Measure::State {
  std::optional<Density> density;
  std::optional<SampleCloud> cloud;
  EngineConfig cfg;
  bool sampled = false;
  mutable std::once_flag once;
  mutable RowMat check;
};

Measure Measure::of(const Density& d, const EngineConfig& cfg) {
  cfg.validate();
  Measure m;
  m.s_ = std::make_shared<State>();
  m.s_->density = d;
  m.s_->cfg = cfg;
  using M = EngineConfig::Method;
  if (cfg.method == M::MonteCarlo || (cfg.method == M::Auto && d.dim() >= 3)) {
    // sample once; every integral is then a fixed weighted sum
    m.s_->cloud = sample(d, cfg.n_samples, cfg.seed, cfg.parallel);
    m.s_->sampled = true;
  }
  return m;
}

Measure Measure::of(const SampleCloud& c, const EngineConfig& cfg) {
  cfg.validate();
  Measure m;
  m.s_ = std::make_shared<State>();
  m.s_->cloud = c;
  m.s_->cfg = cfg;
  return m;
}

int Measure::dim() const { return s_->cloud ? s_->cloud->dim() : s_->density->dim(); }
bool Measure::is_cloud() const { return !s_->density.has_value(); }
bool Measure::sampled() const { return s_->sampled; }
const EngineConfig& Measure::config() const { return s_->cfg; }

const Density& Measure::density() const {
  require(s_->density.has_value(), "measure: not a density");
  return *s_->density;
}

const SampleCloud& Measure::cloud() const {
  require(s_->cloud.has_value(), "measure: not a cloud");
  return *s_->cloud;
}

Estimate Measure::integrate(const Integrand& f) const {
  if (s_->cloud) {
    const SampleCloud& c = *s_->cloud;
    Estimate e;
    e.value.resize(f.m);
    e.error = Vec::Zero(f.m);
    kernels::weighted_sum(c.points().data(), c.dim(), c.weights().data(), c.size(), f.f, f.m, e.value.data(),
                          s_->cfg.parallel);
    for (int i = 0; i < f.m; ++i)
      if (!std::isfinite(e.value[i])) fail(ErrorCode::DivergentIntegral, "cloud sum is not finite");
    e.evaluations = static_cast<long>(c.size());
    return e;
  }
  return tiltkit::integrate(*s_->density, f, s_->cfg);
}

double Measure::expect(const ScalarFn& phi, const std::vector<double>& breaks) const {
  Integrand F;
  F.m = 1;
  F.f = [&](const double* x, double* out) { out[0] = phi(x); };
  F.breaks = breaks;
  return integrate(F).value[0];
}

const RowMat& Measure::check_points() const {
  std::call_once(s_->once, [this] {
    const State& s = *s_;
    if (s.cloud) {
      s.check = s.cloud->points();
      return;
    }
    const Density& d = *s.density;
    if (d.dim() == 1 && d.has_quantile()) {
      s.check.resize(kCheckPoints, 1);
      for (std::size_t i = 0; i < kCheckPoints; ++i) s.check(i, 0) = d.quantile((i + 0.5) / kCheckPoints);
      return;
    }
    if (d.can_sample()) {
      s.check = sample(d, kCheckPoints, s.cfg.seed ^ 0x9e3779b97f4a7c15ULL, s.cfg.parallel).points();
      return;
    }
    // custom density: grid over a box built from the quadrature hints
    const int dim = d.dim();
    require(dim <= 2, "check_points: custom densities above 2-D are not supported");
    std::vector<std::vector<double>> axes(dim);
    const std::size_t per = dim == 1 ? kCheckPoints : 316;
    for (int j = 0; j < dim; ++j) {
      LineHint h = d.line(j, nullptr);
      double lo = h.range.lo, hi = h.range.hi;
      double mlo = h.mesh.empty() ? 0.0 : h.mesh.front(), mhi = h.mesh.empty() ? 1.0 : h.mesh.back();
      if (!std::isfinite(lo)) lo = mlo - 10 * (1 + std::abs(mhi - mlo));
      if (!std::isfinite(hi)) hi = mhi + 10 * (1 + std::abs(mhi - mlo));
      for (std::size_t i = 0; i < per; ++i) axes[j].push_back(lo + (hi - lo) * (i + 0.5) / per);
    }
    if (dim == 1) {
      s.check.resize(per, 1);
      for (std::size_t i = 0; i < per; ++i) s.check(i, 0) = axes[0][i];
    } else {
      s.check.resize(per * per, 2);
      for (std::size_t i = 0; i < per; ++i)
        for (std::size_t k = 0; k < per; ++k) {
          s.check(i * per + k, 0) = axes[0][i];
          s.check(i * per + k, 1) = axes[1][k];
        }
    }
  });
  return s_->check;
}

}  // namespace tiltkit
