#include <doctest.h>

#include "perturbation.hpp"
#include "tiltkit/error.hpp"
#include "tiltkit/tilt.hpp"

#include <cmath>
#include <random>

using namespace tiltkit;

namespace {

const double kMu = std::log(50.0) + 0.03;
const double kDisc = std::exp(-0.05);

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidInput;
}

ConstraintSet mean_view(double c) {
  ConstraintSet cs;
  cs.add(coordinate(0), c);
  return cs;
}

double example2_lambda(double sigma2, double a) {
  return (a - 1) / (std::exp(sigma2 / 2) * (std::exp(sigma2) - a));
}

}  // namespace

TEST_CASE("gaussian mean shift") {
  Vec a(2), ahat(2);
  a << 0.5, -1.0;
  ahat << 1.0, 0.2;
  Mat S(2, 2);
  S << 1.0, 0.3, 0.3, 0.5;
  Measure prior = Measure::of(Density::gaussian_nd(a, S));
  ConstraintSet cs;
  cs.add(coordinate(0), ahat[0]);
  cs.add(coordinate(1), ahat[1]);
  auto s = solve_i_divergence(prior, cs);
  REQUIRE(s.report.ok());
  Vec expected = S.ldlt().solve(ahat - a);
  CHECK((s.posterior.lambda() - expected).cwiseAbs().maxCoeff() < 1e-8);
  // posterior is N(ahat, S): compare pdf ratios at a few points
  Density target = Density::gaussian_nd(ahat, S);
  Density base = Density::gaussian_nd(a, S);
  for (double x : {-1.0, 0.0, 1.5}) {
    const double pt[2] = {x, 0.3 * x};
    CHECK(s.posterior.ratio(pt) == doctest::Approx(target.pdf(pt) / base.pdf(pt)).epsilon(1e-7));
  }
}

TEST_CASE("empty constraint set") {
  Measure prior = Measure::of(Density::gamma(2, 1));
  auto s = solve_i_divergence(prior, {});
  CHECK(s.report.ok());
  CHECK(s.posterior.lambda().size() == 0);
  CHECK(s.posterior.divergence().value == 0.0);
  auto p = solve_polynomial(prior, {}, 0.5);
  CHECK(p.report.ok());
  CHECK(p.posterior.lambda().size() == 0);
  CHECK(p.posterior.divergence().value == doctest::Approx(1.0));
}

TEST_CASE("exponential prior with mean raised") {
  const double alpha = 2.0, gamma = 0.8;
  Measure prior = Measure::of(Density::exponential(alpha));
  auto s = solve_i_divergence(prior, mean_view(1 / gamma));
  REQUIRE(s.report.ok());
  CHECK(s.posterior.lambda()[0] == doctest::Approx(alpha - gamma).epsilon(1e-9));
  for (double x : {0.0, 1.0, 5.0})
    CHECK(s.posterior.pdf(x) == doctest::Approx(gamma * std::exp(-gamma * x)).epsilon(1e-9));
}

TEST_CASE("example 2 closed form for lognormal priors") {
  const double s2 = 0.04;
  Measure prior = Measure::of(Density::lognormal(0, s2));
  const double m = std::exp(s2 / 2);
  for (double a : {1.01, 1.02, 1.03}) {
    auto s = solve_polynomial(prior, mean_view(a * m), 1.0);
    REQUIRE(s.report.ok());
    CHECK(std::abs(s.posterior.lambda()[0] - example2_lambda(s2, a)) < 1e-8);
  }
}

TEST_CASE("two-call calibration") {
  Measure prior = Measure::of(Density::lognormal(kMu, 0.04));
  ConstraintSet cs;
  cs.add(call_payoff(55), 5.0 / kDisc);
  cs.add(call_payoff(60), 3.0 / kDisc);
  auto s = solve_polynomial(prior, cs, 1.0);
  REQUIRE(s.report.ok());
  CHECK(std::abs(s.posterior.lambda()[0] - 0.0945945) < 1e-4);
  CHECK(std::abs(s.posterior.lambda()[1] + 0.0357495) < 1e-4);
  CHECK(s.report.residuals.cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(in_feasible_region(prior, cs.g, s.posterior.lambda(), 1.0));
  // exact piecewise-linear minimum of the tilt
  CHECK(min_tilt(prior, cs.g, s.posterior.lambda(), 1.0) > 0);
  // at the optimum, strongly feasible
  CHECK(1 + s.posterior.lambda().dot(cs.targets()) > 0);
}

TEST_CASE("single-constraint polynomial solver") {
  SUBCASE("a = 1 gives the prior") {
    auto s = solve_single_constraint_poly(Measure::of(Density::gamma(2, 1)), coordinate(0), 1.0, 1);
    REQUIRE(s.report.ok());
    CHECK(s.posterior.lambda()[0] == 0.0);
  }
  SUBCASE("gamma(2,1), n = 1: feasible on [1, 1.5)") {
    Measure m = Measure::of(Density::gamma(2, 1));
    CHECK(feasibility_bound(m, coordinate(0), 1) == doctest::Approx(1.5).epsilon(1e-10));
    for (double a : {1.1, 1.3, 1.49}) {
      auto s = solve_single_constraint_poly(m, coordinate(0), a, 1);
      REQUIRE(s.report.ok());
      CHECK(s.posterior.lambda()[0] > 0);
      CHECK(s.posterior.expect([](const double* x) { return x[0]; }) == doctest::Approx(2 * a).epsilon(1e-9));
    }
    CHECK(solve_single_constraint_poly(m, coordinate(0), 1.5, 1).report.status == SolveStatus::Infeasible);
    CHECK(solve_single_constraint_poly(m, coordinate(0), 1.6, 1).report.status == SolveStatus::Infeasible);
  }
  SUBCASE("n = 2 agrees with the generic solver at beta = 1/2") {
    Measure m = Measure::of(Density::gamma(3, 2));
    const double mean = 1.5, a = 1.3;
    auto s = solve_single_constraint_poly(m, coordinate(0), a, 2);
    auto g = solve_polynomial(m, mean_view(a * mean), 0.5);
    REQUIRE(s.report.ok());
    REQUIRE(g.report.ok());
    for (double x : {0.1, 1.0, 4.0}) CHECK(s.posterior.ratio(x) == doctest::Approx(g.posterior.ratio(x)).epsilon(1e-8));
  }
  SUBCASE("pareto(5), n = 1") {
    Measure m = Measure::of(Density::pareto(5));
    const double bound = feasibility_bound(m, coordinate(0), 1);
    CHECK(bound == doctest::Approx(3.0).epsilon(1e-10));
    auto s = solve_single_constraint_poly(m, coordinate(0), 1.1, 1);
    CHECK(s.report.ok());
    CHECK(solve_single_constraint_poly(m, coordinate(0), bound * 1.01, 1).report.status == SolveStatus::Infeasible);
  }
}

TEST_CASE("feasibility bounds") {
  CHECK(feasibility_bound(Measure::of(Density::lognormal(0, 0.04)), coordinate(0), 1) ==
        doctest::Approx(std::exp(0.04)).epsilon(1e-10));
  CHECK(feasibility_bound(Measure::of(Density::lognormal(0.7, 0.1)), coordinate(0), 3) ==
        doctest::Approx(std::exp(0.3)).epsilon(1e-10));
  for (double rate : {0.5, 1.0, 7.0})
    CHECK(feasibility_bound(Measure::of(Density::gamma(3, rate)), coordinate(0), 2) ==
          doctest::Approx(1 + 2.0 / 3).epsilon(1e-10));
  CHECK(feasibility_bound(Measure::of(Density::gamma(3, 1)), constant(1.0), 1) == doctest::Approx(1.0));
  CHECK(code_of([] { feasibility_bound(Measure::of(Density::pareto(4)), coordinate(0), 2); }) ==
        ErrorCode::DivergentIntegral);
}

TEST_CASE("mean raise under a pareto prior has no exponential tilt") {
  auto s = solve_i_divergence(Measure::of(Density::pareto(4)), mean_view(1.0));
  CHECK_FALSE(s.report.ok());
  CHECK(s.report.status == SolveStatus::Infeasible);
  // a mean decrease is fine
  auto d = solve_i_divergence(Measure::of(Density::pareto(4)), mean_view(0.4));
  CHECK(d.report.ok());
  CHECK(d.posterior.lambda()[0] < 0);
}

TEST_CASE("suggest_beta") {
  ConstraintSet cs = mean_view(0.4);
  // E[X^k] finite for k < 4, so m + 1 <= 3
  CHECK(suggest_beta(Measure::of(Density::pareto(5)), cs) == doctest::Approx(0.5));
  CHECK(suggest_beta(Measure::of(Density::lognormal(0, 0.04)), cs, 8) == doctest::Approx(1.0 / 8));
}

TEST_CASE("dual stationarity matches the constraint residuals") {
  Measure prior = Measure::of(Density::gamma(2.5, 1.0));
  ConstraintSet cs;
  cs.add(coordinate(0), 2.0);
  cs.add(call_payoff(3.0), 0.3);
  auto s = solve_i_divergence(prior, cs);
  REQUIRE(s.report.ok());
  const Vec lam = s.posterior.lambda();
  // gradient of log E[exp(lambda.g)] - lambda.c by central differences
  auto dual = [&](const Vec& l) {
    TiltedPosterior t(prior, cs.g, l, std::nullopt);
    t.normalize();
    return std::log(t.normalizer()) + t.shift() - l.dot(cs.targets());
  };
  Vec grad(2);
  for (int i = 0; i < 2; ++i) {
    Vec e = Vec::Zero(2);
    e[i] = 1e-5;
    grad[i] = (dual(lam + e) - dual(lam - e)) / 2e-5;
  }
  CHECK(grad.norm() < 1e-6);
  Vec resid = s.posterior.expect(cs.g) - cs.targets();
  CHECK(resid.cwiseAbs().maxCoeff() <= 1e-10 * 2);
  CHECK(s.report.dual_value == doctest::Approx(dual(lam)).epsilon(1e-9));
}

TEST_CASE("theta dual equivalence") {
  Measure prior = Measure::of(Density::lognormal(kMu, 0.04));
  ConstraintSet cs;
  cs.add(call_payoff(55), 5.0 / kDisc);
  cs.add(call_payoff(60), 3.0 / kDisc);
  for (double beta : {1.0, 0.5}) {
    auto s = solve_polynomial(prior, cs, beta);
    REQUIRE(s.report.ok());
    const Vec c = cs.targets();
    const Vec lam = s.posterior.lambda();
    Vec theta = phi_map(lam, c, beta);
    CHECK((psi_map(theta, c, beta) - lam).cwiseAbs().maxCoeff() < 1e-10);
    Vec grad;
    theta_dual(prior, cs, theta, beta, &grad);
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-8);
  }
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0, 0.1);
  for (int t = 0; t < 50; ++t) {
    Vec l(3), c(3);
    for (int i = 0; i < 3; ++i) {
      l[i] = z(rng);
      c[i] = z(rng);
    }
    if (1 + 0.7 * l.dot(c) <= 0) continue;
    CHECK((psi_map(phi_map(l, c, 0.7), c, 0.7) - l).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("uniqueness: different starts agree") {
  Measure prior = Measure::of(Density::lognormal(kMu, 0.04));
  ConstraintSet cs;
  cs.add(call_payoff(55), 5.0 / kDisc);
  cs.add(call_payoff(60), 3.0 / kDisc);
  SolverOptions o1, o2;
  o2.lambda0 = Vec::Constant(2, 0.02);
  auto a = solve_polynomial(prior, cs, 1.0, o1);
  auto b = solve_polynomial(prior, cs, 1.0, o2);
  REQUIRE(a.report.ok());
  REQUIRE(b.report.ok());
  CHECK((a.posterior.lambda() - b.posterior.lambda()).cwiseAbs().maxCoeff() < 1e-6);

  Measure gp = Measure::of(Density::gamma(2, 1));
  ConstraintSet c2;
  c2.add(coordinate(0), 2.5);
  c2.add(power(2.0), 9.0);
  // a positive x^2 coefficient has no MGF; start inside the domain
  o2.lambda0 = Vec(2);
  o2.lambda0 << 0.6, -0.02;
  auto x = solve_i_divergence(gp, c2, o1);
  auto y = solve_i_divergence(gp, c2, o2);
  REQUIRE(x.report.ok());
  REQUIRE(y.report.ok());
  CHECK((x.posterior.lambda() - y.posterior.lambda()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("tail shape: exponential vs polynomial posterior") {
  const double alpha = 1.0, mean = 1.5;
  Measure prior = Measure::of(Density::exponential(alpha));
  auto e = solve_i_divergence(prior, mean_view(mean));
  auto p = solve_polynomial(prior, mean_view(mean), 1.0);
  REQUIRE(e.report.ok());
  REQUIRE(p.report.ok());
  auto slope = [](const TiltedPosterior& t) { return (std::log(t.pdf(50.0)) - std::log(t.pdf(10.0))) / 40.0; };
  const double se = slope(e.posterior), sp = slope(p.posterior);
  CHECK(se == doctest::Approx(-1 / mean).epsilon(1e-8));
  CHECK(sp < se);
  CHECK(std::abs(sp + alpha) < 0.1);
}

TEST_CASE("inequality constraints satisfy KKT") {
  Measure prior = Measure::of(Density::gamma(2, 1));
  SUBCASE("inactive") {
    ConstraintSet cs;
    cs.add(coordinate(0), 1.5, Sense::Geq);
    cs.add(power(2.0), 5.0);
    auto s = solve_i_divergence(prior, cs);
    REQUIRE(s.report.ok());
    const Vec m = s.posterior.expect(cs.g);
    CHECK(m[0] >= 1.5);
    CHECK(std::abs(s.posterior.lambda()[0] * (1.5 - m[0])) < 1e-8);
  }
  SUBCASE("active") {
    ConstraintSet cs;
    cs.add(coordinate(0), 2.6, Sense::Geq);
    auto s = solve_i_divergence(prior, cs);
    REQUIRE(s.report.ok());
    CHECK(s.posterior.lambda()[0] > 0);
    CHECK(s.posterior.expect(cs.g)[0] == doctest::Approx(2.6).epsilon(1e-9));
    auto p = solve_polynomial(prior, cs, 1.0);
    REQUIRE(p.report.ok());
    CHECK(p.posterior.lambda()[0] > 0);
    CHECK(p.posterior.expect(cs.g)[0] == doctest::Approx(2.6).epsilon(1e-9));
  }
  SUBCASE("slack inequality has zero multiplier") {
    ConstraintSet cs;
    cs.add(coordinate(0), 1.0, Sense::Geq);
    auto p = solve_polynomial(prior, cs, 1.0);
    REQUIRE(p.report.ok());
    CHECK(p.posterior.lambda()[0] == 0.0);
  }
}

TEST_CASE("second moment raise has no exponential tilt under a gamma prior") {
  ConstraintSet cs;
  cs.add(power(2.0), 7.0);
  CHECK(solve_i_divergence(Measure::of(Density::gamma(2, 1)), cs).report.status == SolveStatus::Infeasible);
}

TEST_CASE("constraint set validation") {
  ConstraintSet cs;
  cs.add(coordinate(0), 1.0);
  cs.add(coordinate(0), 2.0, Sense::Geq);  // geq after equality
  CHECK_THROWS_AS(cs.validate(), Error);
  CHECK(code_of([] { solve_polynomial(Measure::of(Density::gamma(2, 1)), mean_view(2.1), 0.0); }) ==
        ErrorCode::InvalidInput);
}

TEST_CASE("disjoint-set update") {
  SUBCASE("uniform halves") {
    Measure m = Measure::of(Density::uniform(0, 1));
    BlockFn blk = [](const double* x) { return x[0] < 0.5 ? 0 : 1; };
    Vec a(2);
    a << 0.3, 0.7;
    auto post = disjoint_set_update(m, blk, a, {0.5});
    const double v = post.expect([](const double* x) { return x[0] <= 0.25 ? 1.0 : 0.0; }, {0.25, 0.5});
    CHECK(v == doctest::Approx(0.15).epsilon(1e-12));
  }
  SUBCASE("alpha = prior masses gives the prior") {
    Measure m = Measure::of(Density::exponential(1));
    BlockFn blk = [](const double* x) { return x[0] < 1 ? 0 : (x[0] < 3 ? 1 : 2); };
    Vec mass = block_masses(m, blk, 3, {1, 3});
    auto post = disjoint_set_update(m, blk, mass, {1, 3});
    for (double x : {0.5, 2.0, 10.0}) CHECK(post.ratio(x) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("tail-probability view") {
    const double x0 = 4.6;
    Measure m = Measure::of(Density::exponential(1));
    BlockFn blk = [x0](const double* x) { return x[0] >= x0 ? 0 : 1; };
    Vec a(2);
    a << 0.01, 0.99;
    auto post = disjoint_set_update(m, blk, a, {x0});
    CHECK(post.expect([x0](const double* x) { return x[0] >= x0 ? 1.0 : 0.0; }, {x0}) ==
          doctest::Approx(0.01).epsilon(1e-12));
  }
  SUBCASE("empty block with positive alpha") {
    Measure m = Measure::of(Density::uniform(0, 1));
    BlockFn blk = [](const double* x) { return x[0] < 2 ? 0 : 1; };
    Vec a(2);
    a << 0.5, 0.5;
    CHECK(code_of([&] { disjoint_set_update(m, blk, a, {}); }) == ErrorCode::InvalidInput);
  }
}

TEST_CASE("truncated pareto diagnostic") {
  auto rows = truncated_pareto_diagnostic(4, 1.0, {1e3, 1e4});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].lambda > rows[1].lambda);
  CHECK(rows[1].lambda > 0);
  auto zero = truncated_pareto_diagnostic(4, 0.5, {1e2, 1e4});
  for (const auto& r : zero) {
    CHECK(r.lambda == 0.0);
    CHECK(r.kl == 0.0);
  }
  auto grid = truncated_pareto_diagnostic(4, 1.0, {1e2, 1e3, 1e4, 1e5, 1e6});
  for (std::size_t i = 1; i < grid.size(); ++i) {
    CHECK(grid[i].lambda < grid[i - 1].lambda);
    CHECK(grid[i].kl < grid[i - 1].kl);
  }
  CHECK(code_of([] { truncated_pareto_diagnostic(4, 1.0, {0.9}); }) == ErrorCode::RootNotBracketed);
  CHECK(code_of([] { truncated_pareto_diagnostic(4, 0.3, {1e3}); }) == ErrorCode::InvalidInput);
}

TEST_CASE("optimality by perturbation") {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 20; ++t) {
    auto inst = perturb::random_instance(rng);
    for (std::optional<double> beta : {std::optional<double>{}, std::optional<double>{1.0}, std::optional<double>{0.5}}) {
      auto r = perturb::check(inst, beta, rng);
      CAPTURE(t);
      CAPTURE(r.message);
      CHECK(r.ok);
    }
  }
}
