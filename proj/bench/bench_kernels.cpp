#include "tiltkit/engine.hpp"
#include "tiltkit/kernels.hpp"
#include "tiltkit/marginal.hpp"
#include "tiltkit/payoff.hpp"

#include <benchmark/benchmark.h>

#include <cmath>

using namespace tiltkit;

namespace {

RowMat points(std::size_t n) {
  RowMat p(n, 2);
  kernels::draw_points(Density::gaussian_nd(Vec::Zero(2), Mat::Identity(2, 2)), n, 7, p.data(), false);
  return p;
}

void BM_weighted_sum(benchmark::State& st) {
  const std::size_t n = st.range(0);
  const bool par = st.range(1);
  const RowMat p = points(n);
  const Vec w = Vec::Constant(n, 1.0 / n);
  double out[3];
  for (auto _ : st) {
    kernels::weighted_sum(p.data(), 2, w.data(), n,
                          [](const double* x, double* o) {
                            const double e = std::exp(0.3 * x[0] - 0.2 * x[1]);
                            o[0] = e;
                            o[1] = e * x[0];
                            o[2] = e * x[1];
                          },
                          3, out, par);
    benchmark::DoNotOptimize(out[0]);
  }
}

void BM_draw(benchmark::State& st) {
  const std::size_t n = st.range(0);
  const bool par = st.range(1);
  const Density d = Density::student_t(3, 0, 1);
  std::vector<double> out(n);
  for (auto _ : st) {
    kernels::draw_points(d, n, 11, out.data(), par);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_integrate_line(benchmark::State& st) {
  const bool par = st.range(0);
  const Density d = Density::lognormal(std::log(50) + 0.03, 0.04);
  EngineConfig cfg;
  cfg.parallel = par;
  const LineSpec line = line_for(d, 0, nullptr, cfg, {50, 55, 60, 65, 70, 75, 80});
  for (auto _ : st) {
    auto e = integrate_line(
        line,
        [&](double x, double* o) {
          const double f = d.pdf(x);
          for (int k = 0; k < 7; ++k) o[k] = f * std::max(x - 50 - 5 * k, 0.0);
        },
        7, cfg, par);
    benchmark::DoNotOptimize(e.value[0]);
  }
}

void BM_marginal_solve(benchmark::State& st) {
  const bool par = st.range(0);
  Vec mu = Vec::Zero(3);
  Mat S(3, 3);
  S << 1, .4, .2, .4, 1, .3, .2, .3, 1;
  EngineConfig cfg;
  cfg.parallel = par;
  const JointPrior jp = JointPrior::of(Density::gaussian_nd(mu, S), cfg);
  MarginalView v{Measure::of(Density::student_t(3, 0, 0.6), cfg), {coordinate(1), coordinate(2)}, {0.3, -0.1}, std::nullopt};
  for (auto _ : st) {
    auto s = solve_marginal_i(jp, v);
    benchmark::DoNotOptimize(s.posterior.lambda()[0]);
  }
}

}  // namespace

BENCHMARK(BM_weighted_sum)->Args({1 << 20, 0})->Args({1 << 20, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_draw)->Args({1 << 20, 0})->Args({1 << 20, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_integrate_line)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_marginal_solve)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
