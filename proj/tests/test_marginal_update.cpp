#include <doctest.h>

#include "tiltkit/engine.hpp"
#include "tiltkit/error.hpp"
#include "tiltkit/marginal.hpp"

#include <cmath>

using namespace tiltkit;

namespace {

const double kRho = 0.5;

Density biv(double rho = kRho) {
  Mat S(2, 2);
  S << 1, rho, rho, 1;
  return Density::gaussian_nd(Vec::Zero(2), S);
}

Density t3_unit(double loc) { return Density::student_t(3, loc, 1 / std::sqrt(3.0)); }

MarginalView y_view(const Density& g, double target, std::optional<double> beta = std::nullopt) {
  return MarginalView{Measure::of(g), {coordinate(1)}, {target}, beta};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidInput;
}

// 2x2 tables: prior f[x][y], target X-marginal g, view E[Y] = c
struct Table {
  double f[2][2] = {{0.3, 0.2}, {0.1, 0.4}};
  double g[2] = {0.2, 0.8};
  double c = 0.8;
};

SampleCloud table_cloud(const Table& t) {
  RowMat pts(4, 2);
  pts << 0, 0, 0, 1, 1, 0, 1, 1;
  Vec w(4);
  w << t.f[0][0], t.f[0][1], t.f[1][0], t.f[1][1];
  return SampleCloud(pts, w);
}

SampleCloud g_cloud(const Table& t) {
  RowMat pts(2, 1);
  pts << 0, 1;
  Vec w(2);
  w << t.g[0], t.g[1];
  return SampleCloud(pts, w);
}

// feasible tables have one free parameter: p01 = s, p00 = g0 - s, p11 = c - s, p10 = g1 - c + s
double brute_force(const Table& t, std::optional<double> beta, double* argmin = nullptr) {
  double best = kInf;
  const int n = 2000000;
  for (int i = 0; i <= n; ++i) {
    const double s = t.g[0] * i / n;
    const double p[2][2] = {{t.g[0] - s, s}, {t.g[1] - t.c + s, t.c - s}};
    if (p[1][0] < 0 || p[1][1] < 0) continue;
    double obj = 0;
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y) {
        const double r = p[x][y] / t.f[x][y];
        if (r <= 0) continue;
        obj += beta ? t.f[x][y] * std::pow(r, *beta + 1) : p[x][y] * std::log(r);
      }
    if (obj < best) {
      best = obj;
      if (argmin) *argmin = s;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("marginal replacement with no moment views") {
  Density g = t3_unit(0.2);
  for (std::optional<double> beta : {std::optional<double>{}, std::optional<double>{0.5}}) {
    MarginalView v{Measure::of(g), {}, {}, beta};
    auto s = beta ? solve_marginal_poly(JointPrior::of(biv()), v) : solve_marginal_i(JointPrior::of(biv()), v);
    REQUIRE(s.report.ok());
    CHECK(s.posterior.lambda().size() == 0);
    const double phi0 = std::exp(-0.5 * 0.7 * 0.7) / std::sqrt(2 * M_PI);
    const double pt[2] = {0.7, -0.4};
    CHECK(s.posterior.ratio(pt) == doctest::Approx(g.pdf(0.7) / phi0).epsilon(1e-10));
  }
}

TEST_CASE("prior's own marginal and mean give lambda = 0") {
  auto s = solve_marginal_i(JointPrior::of(biv()), y_view(Density::gaussian(0, 1), 0.0));
  REQUIRE(s.report.ok());
  CHECK(std::abs(s.posterior.lambda()[0]) < 1e-10);
  CHECK(s.posterior.divergence() < 1e-10);
}

TEST_CASE("gaussian prior with a t3 marginal: closed form") {
  const double loc = 0.5, a = 1.0;
  Density g = t3_unit(loc);
  auto s = solve_marginal_i(JointPrior::of(biv()), y_view(g, a));
  REQUIRE(s.report.ok());
  const double s2 = 1 - kRho * kRho;
  const double lambda = (a - kRho * loc) / s2;
  CHECK(s.posterior.lambda()[0] == doctest::Approx(lambda).epsilon(1e-8));
  auto [m, c] = s.posterior.conditional_moments(2.0);
  CHECK(m[0] == doctest::Approx(kRho * 2.0 + lambda * s2).epsilon(1e-8));
  CHECK(c(0, 0) == doctest::Approx(s2).epsilon(1e-8));
  Vec e = s.posterior.expect({coordinate(0), coordinate(1)});
  CHECK(e[0] == doctest::Approx(loc).epsilon(1e-8));
  CHECK(e[1] == doctest::Approx(a).epsilon(1e-8));

  SUBCASE("objective decomposition") {
    // int g log(g / f_X) by independent quadrature; per-x conditional KL is lambda^2 s2 / 2
    const double marg = expectation(g, [&](const double* x) {
      return std::log(g.pdf(x[0])) + 0.5 * x[0] * x[0] + 0.5 * std::log(2 * M_PI);
    });
    CHECK(s.posterior.marginal_term() == doctest::Approx(marg).epsilon(1e-6));
    CHECK(s.posterior.conditional_term() == doctest::Approx(lambda * lambda * s2 / 2).epsilon(1e-6));
    CHECK(s.posterior.divergence() == doctest::Approx(marg + lambda * lambda * s2 / 2).epsilon(1e-6));
  }
  SUBCASE("exact marginal at 50 points") {
    for (int i = 0; i < 50; ++i) {
      const double x = -6.0 + 12.0 * i / 49;
      Density slice = Density::custom(
          [&, x](const double* y) {
            const double p[2] = {x, y[0]};
            return s.posterior.pdf(p);
          },
          {Interval{}});
      const double mass = expectation(slice, [](const double*) { return 1.0; });
      CHECK(mass == doctest::Approx(g.pdf(x)).epsilon(1e-8));
    }
  }
  SUBCASE("two starts agree") {
    SolverOptions o;
    o.lambda0 = Vec::Constant(1, -3.0);
    auto t = solve_marginal_i(JointPrior::of(biv()), y_view(g, a), o);
    REQUIRE(t.report.ok());
    CHECK(std::abs(t.posterior.lambda()[0] - s.posterior.lambda()[0]) < 1e-6);
  }
}

TEST_CASE("joint moment views on both coordinates") {
  // light-tailed g: the tilt e^{lambda x y} shifts the conditional by lambda x s2
  const double loc = 0.3, var = 0.8;
  Density g = Density::gaussian(loc, var);
  MarginalView v{Measure::of(g), {custom_func([](const double* z) { return z[0] * z[1]; }, "xy")}, {0.9}, std::nullopt};
  auto s = solve_marginal_i(JointPrior::of(biv()), v);
  REQUIRE(s.report.ok());
  CHECK(s.report.residuals.cwiseAbs().maxCoeff() < 1e-9);
  // tilt e^{lambda x y}: conditional mean rho x + lambda x s2, so E[XY] = (rho + lambda s2) E[X^2]
  const double ex2 = var + loc * loc;
  CHECK(s.posterior.lambda()[0] == doctest::Approx((0.9 / ex2 - kRho) / (1 - kRho * kRho)).epsilon(1e-7));
}

TEST_CASE("polynomial marginal update approaches the I-divergence update as beta -> 0") {
  Density g = Density::gaussian(0.3, 1.2);
  auto ref = solve_marginal_i(JointPrior::of(biv()), y_view(g, 0.6));
  REQUIRE(ref.report.ok());
  double prev = kInf;
  for (double beta : {1e-2, 1e-3, 1e-4}) {
    auto p = solve_marginal_poly(JointPrior::of(biv()), y_view(g, 0.6, beta));
    REQUIRE(p.report.ok());
    const double gap = std::abs(p.posterior.lambda()[0] - ref.posterior.lambda()[0]);
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("discrete 2x2 table against brute force") {
  Table t;
  JointPrior prior = JointPrior::of(table_cloud(t));
  MarginalView v{Measure::of(g_cloud(t)), {coordinate(1)}, {t.c}, std::nullopt};

  SUBCASE("i-divergence: the conditional tilt is the exact optimum") {
    auto s = solve_marginal_i(prior, v);
    REQUIRE(s.report.ok());
    double arg = 0;
    const double best = brute_force(t, std::nullopt, &arg);
    CHECK(s.posterior.divergence() == doctest::Approx(best).epsilon(1e-9));
    const double xy01[2] = {0, 1};
    CHECK(s.posterior.ratio(xy01) * t.f[0][1] == doctest::Approx(arg).epsilon(1e-5));
  }
  SUBCASE("polynomial: constraints hold and brute force is never worse") {
    v.beta = 1.0;
    auto s = solve_marginal_poly(prior, v);
    REQUIRE(s.report.ok());
    Vec e = s.posterior.expect({coordinate(0), coordinate(1)});
    CHECK(e[0] == doctest::Approx(t.g[1]).epsilon(1e-12));
    CHECK(e[1] == doctest::Approx(t.c).epsilon(1e-10));
    const double best = brute_force(t, 1.0);
    CHECK(best <= s.posterior.divergence() + 1e-12);
    CHECK(s.posterior.divergence() - best < 1e-3);
  }
  SUBCASE("g off the prior's x-support") {
    RowMat pts(2, 1);
    pts << 0, 2;
    MarginalView bad{Measure::of(SampleCloud(pts, Vec::Constant(2, 0.5))), {coordinate(1)}, {t.c}, std::nullopt};
    CHECK(code_of([&] { solve_marginal_i(prior, bad); }) == ErrorCode::NotAbsolutelyContinuous);
  }
}

TEST_CASE("polynomial nonnegativity is enforced") {
  // h = y is unbounded below, so at beta = 1 a t3 marginal cannot keep the tilt nonnegative
  auto p = solve_marginal_poly(JointPrior::of(biv()), y_view(t3_unit(0.5), 1.0, 1.0));
  CHECK_FALSE(p.report.ok());
}

TEST_CASE("change of variables") {
  SUBCASE("linear maps round trip") {
    Mat A(3, 3);
    A << 1, 2, 0, 0, 1, -1, 1, 0, 1;
    auto cov = ChangeOfVariables::linear(A);
    const double z[3] = {0.3, -1.2, 2.0};
    double v[3], back[3];
    cov.forward(z, v);
    cov.inverse(v, back);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(back[i] - z[i]) < 1e-12);
    CHECK(cov.jacobian(z) == doctest::Approx(std::abs(A.determinant())));
  }
  SUBCASE("singular maps are rejected") {
    Mat A(2, 2);
    A << 1, 2, 2, 4;
    CHECK(code_of([&] { ChangeOfVariables::linear(A); }) == ErrorCode::SingularJacobian);
    Mat views(2, 3);
    views << 1, 1, 0, 2, 2, 0;
    CHECK(code_of([&] { ChangeOfVariables::canonical_completion(views); }) == ErrorCode::SingularJacobian);
  }
  SUBCASE("identity map leaves the problem unchanged") {
    auto cov = ChangeOfVariables::linear(Mat::Identity(2, 2));
    Density g = t3_unit(0.1);
    auto lp = lift_views(cov, biv(), 0, {1}, {0.4}, Measure::of(g));
    for (double x : {-1.0, 0.0, 2.0}) {
      const double p[2] = {x, 0.5 - x};
      CHECK(lp.prior_xy.pdf(p) == doctest::Approx(biv().pdf(p)).epsilon(1e-12));
    }
    auto a = solve_marginal_i(JointPrior::of(lp.prior_xy), lp.view);
    auto b = solve_marginal_i(JointPrior::of(biv()), y_view(g, 0.4));
    REQUIRE(a.report.ok());
    REQUIRE(b.report.ok());
    CHECK(a.posterior.lambda()[0] == doctest::Approx(b.posterior.lambda()[0]).epsilon(1e-10));
  }
  SUBCASE("view on Z2 and a moment on Z3 - Z4") {
    Mat S = Mat::Identity(4, 4) * 0.5 + Mat::Constant(4, 4, 0.5);
    Vec mu(4);
    mu << 0.001, 0.002, 0.0, 0.001;
    S *= 1e-4;
    Mat views(2, 4);
    views << 0, 1, 0, 0, 0, 0, 1, -1;
    auto cov = ChangeOfVariables::canonical_completion(views);
    REQUIRE(cov.A.has_value());
    const double z[4] = {0.01, -0.02, 0.03, 0.005};
    CHECK(cov.jacobian(z) == doctest::Approx(std::abs(cov.A->determinant())));
    double v[4], back[4];
    cov.forward(z, v);
    cov.inverse(v, back);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(back[i] - z[i]) < 1e-8);
    CHECK(v[0] == z[1]);
    CHECK(v[1] == doctest::Approx(z[2] - z[3]));

    Density g = Density::student_t(3, 0.002, 0.01);
    auto lp = lift_views(cov, Density::gaussian_nd(mu, S), 0, {1}, {0.002}, Measure::of(g));
    auto s = solve_marginal_i(JointPrior::of(lp.prior_xy), lp.view);
    REQUIRE(s.report.ok());
    Func spread = custom_func([](const double* w) { return w[1]; });
    CHECK(s.posterior.expect({spread})[0] == doctest::Approx(0.002).epsilon(1e-8));
  }
  SUBCASE("pullback integrates to one") {
    Mat A(2, 2);
    A << 2, 0.5, 0, 1;
    auto cov = ChangeOfVariables::linear(A);
    for (const Density& g : {Density::gaussian(0.0, 4.85), t3_unit(0.4)}) {
      auto lp = lift_views(cov, biv(0.3), 0, {}, {}, Measure::of(g));
      auto s = solve_marginal_i(JointPrior::of(lp.prior_xy), lp.view);
      REQUIRE(s.report.ok());
      ScalarFn fz = lp.pullback(s.posterior);
      Density post = Density::custom(fz, {Interval{}, Interval{}});
      CHECK(check_normalized(post).mass == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}
