#pragma once

#include "tiltkit/measure.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace tiltkit {

// Gaussian prior split into X (first kx coordinates) and Y (the rest).
struct GaussianPrior {
  Vec mu_x, mu_y;
  Mat sigma_xx, sigma_xy, sigma_yx, sigma_yy;

  static GaussianPrior from_full(const Vec& mu, const Mat& sigma, int kx = 1);
  int kx() const { return static_cast<int>(mu_x.size()); }
  int ky() const { return static_cast<int>(mu_y.size()); }
  Vec mean() const;
  Mat cov() const;
  Density density() const;
  void validate() const;
};

struct MarkowitzPosterior {
  GaussianPrior prior;
  Measure g;        // law of X under the posterior
  Vec eg;           // E_g[X]
  Vec a;            // target E[Y]
  Mat cond_mean_slope;
  Vec cond_mean_intercept;  // E[Y | X=x] = intercept + slope x
  Mat cond_cov;
  Vec lambda;

  Vec cond_mean(const Vec& x) const { return cond_mean_intercept + cond_mean_slope * x; }
  // rows (x, y), deterministic per seed
  RowMat sample(std::size_t n, std::uint64_t seed, bool parallel = true) const;
};

MarkowitzPosterior markowitz_update(const GaussianPrior& prior, const Measure& g, const Vec& a);
MarkowitzPosterior markowitz_update(const GaussianPrior& prior, const Density& g, const Vec& a);

// Student-t marginal view "(X - loc)/sqrt(var) ~ t_dof". PriorVariance uses var as
// the scale; UnitVariance rescales so the view itself has variance var.
enum class TScale { PriorVariance, UnitVariance };
Density t_view(double dof, double loc, double var, TScale convention = TScale::PriorVariance);

struct TailRatio {
  std::vector<std::pair<double, double>> curve;  // (s, f_Y(s) / g(s))
  double limit = 0;  // |sigma_xy / sigma_xx|^(alpha - 1)
};

// alpha: tail index of g; taken from the dof for Student t when omitted
TailRatio tail_ratio_diagnostic(const MarkowitzPosterior& post, int component, const std::vector<double>& s_grid,
                                std::optional<double> alpha = std::nullopt, const EngineConfig& cfg = {});

// loss = -notional * w.(x, y); VaR = empirical loss quantile at each level
std::vector<std::pair<double, double>> var_estimate(const MarkowitzPosterior& post, const Vec& weights,
                                                    double notional, const std::vector<double>& levels,
                                                    std::size_t n = 100000, std::uint64_t seed = 20240517,
                                                    bool parallel = true);

}  // namespace tiltkit
