#pragma once

#include "tiltkit/measure.hpp"

#include <vector>

namespace tiltkit {

enum class DivKind { IDivergence, Polynomial, Tsallis, Renyi, TotalVariation };

struct DivergenceValue {
  DivKind kind;
  double param = 0;  // beta / alpha / gamma where relevant
  double value = 0;  // may be +inf
};

// ratio = d(nu)/d(mu) evaluated pointwise; breaks = kinks of the ratio along coordinate 0
DivergenceValue i_divergence(const ScalarFn& ratio, const Measure& base, const std::vector<double>& breaks = {});
DivergenceValue polynomial_divergence(const ScalarFn& ratio, const Measure& base, double beta,
                                      const std::vector<double>& breaks = {});
DivergenceValue tsallis(const ScalarFn& ratio, const Measure& base, double alpha,
                        const std::vector<double>& breaks = {});
DivergenceValue renyi(const ScalarFn& ratio, const Measure& base, double gamma,
                      const std::vector<double>& breaks = {});

double tsallis_from_polynomial(double i_beta, double beta);
double renyi_from_polynomial(double i_beta, double beta);

DivergenceValue total_variation(const SampleCloud& p, const SampleCloud& q);
DivergenceValue total_variation(const ScalarFn& ratio, const Measure& base, const std::vector<double>& breaks = {});
DivergenceValue total_variation(const Density& p, const Density& q, const EngineConfig& cfg = {},
                                const std::vector<double>& breaks = {});

// finite distributions on {0..n-1}: base q and the ratio p/q (p > 0 where q = 0 is
// reported as +inf by the divergence functions, as it is not absolutely continuous)
Measure discrete_measure(const Vec& q, const EngineConfig& cfg = {});
ScalarFn discrete_ratio(const Vec& p, const Vec& q);
bool absolutely_continuous(const Vec& p, const Vec& q);

}  // namespace tiltkit
