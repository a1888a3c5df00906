#include <catch_amalgamated.hpp>

#include <cmath>

#include "vov/dynamics.hpp"
#include "vov/prng.hpp"

using namespace vov;
using Catch::Approx;

TEST_CASE("interpolate blends endpoints linearly") {
  REQUIRE(interpolate({0.0}, {1.0}, 0.25) == Vec{0.25});
  Vec e = {3.0, -7.0, 0.5};
  REQUIRE(interpolate({9.0, 9.0, 9.0}, e, 1.0) == e);
  REQUIRE(interpolate({2.0, -2.0}, {0.0, 0.0}, 0.5) == Vec{1.0, -1.0});
  REQUIRE_THROWS_AS(interpolate({0.0}, {1.0, 2.0}, 0.5), DimensionError);
  REQUIRE_THROWS_AS(interpolate({0.0}, {1.0}, 1.5), DomainError);
  REQUIRE_THROWS_AS(interpolate({0.0}, {1.0}, -0.1), DomainError);
}

TEST_CASE("optimal field points from the signal through the current state") {
  REQUIRE(optimal_vf({0.25}, 0.25, {0.0}) == Vec{1.0});
  REQUIRE(optimal_vf({0.7, -0.7}, 0.3, {0.7, -0.7}) == Vec{0.0, 0.0});
  REQUIRE(optimal_vf({1.2}, 0.6, {0.6})[0] == Approx(1.0).margin(1e-15));
  REQUIRE_THROWS_AS(optimal_vf({1.0}, 0.0, {0.0}), DomainError);
  REQUIRE_THROWS_AS(optimal_vf({1.0}, -0.5, {0.0}), DomainError);
}

TEST_CASE("optimal field recovers the noise direction on interpolated states") {
  PrngStream rng(3, "dyn");
  for (uint32_t i = 0; i < 50; ++i) {
    Vec x = rng.normal_vector(i, 0, 6);
    Vec eps = rng.normal_vector(i, 1, 6);
    double t = 0.01 + 0.98 * rng.uniform(i, 2);
    Vec v = optimal_vf(interpolate(x, eps, t), t, x);
    for (size_t j = 0; j < x.size(); ++j)
      REQUIRE(v[j] == Approx(eps[j] - x[j]).margin(1e-12));
  }
}

TEST_CASE("schedule coefficients follow the linear-interpolant diffusion") {
  ScheduleCoeffs c = schedule_coeffs(0.5);
  REQUIRE(c.sigma == Approx(std::sqrt(2.0)).epsilon(1e-15));
  REQUIRE(c.beta == Approx(-2.0).epsilon(1e-15));
  REQUIRE(c.alpha == Approx(0.5).epsilon(1e-15));
  REQUIRE(c.marginal_var == Approx(0.25).epsilon(1e-15));

  ScheduleCoeffs lo = schedule_coeffs(1e-9);
  REQUIRE(lo.sigma == Approx(0.0).margin(1e-4));
  REQUIRE(lo.alpha == Approx(1.0).margin(1e-8));

  REQUIRE_THROWS_AS(schedule_coeffs(0.0), DomainError);
  REQUIRE_THROWS_AS(schedule_coeffs(1.0), DomainError);
}

TEST_CASE("marginal kernel of the point-mass target") {
  KernelParams k = marginal_kernel({2.0}, 0.5);
  REQUIRE(k.mean == Vec{1.0});
  REQUIRE(k.var == Approx(0.25).epsilon(1e-15));

  KernelParams top = marginal_kernel({2.0, -1.0}, 1.0);
  REQUIRE(top.mean == Vec{0.0, 0.0});
  REQUIRE(top.var == 1.0);

  for (double t : {0.1, 0.37, 0.9}) {
    KernelParams z = marginal_kernel({0.0}, t);
    REQUIRE(z.mean == Vec{0.0});
    REQUIRE(z.var == Approx(t * t));
  }
}

TEST_CASE("score conversion") {
  REQUIRE(score_from_vf({0.0}, {0.0}, 0.5) == Vec{0.0});
  REQUIRE(score_from_vf({-2.0}, {1.0}, 0.5) == Vec{0.0});
  REQUIRE_THROWS_AS(score_from_vf({0.0}, {0.0}, 0.0), DomainError);
}

TEST_CASE("score of the optimal field equals the Gaussian marginal score") {
  PrngStream rng(4, "score");
  for (uint32_t i = 0; i < 100; ++i) {
    Vec x = rng.normal_vector(i, 0, 4);
    Vec x_t = rng.normal_vector(i, 1, 4);
    double t = 0.02 + 0.96 * rng.uniform(i, 2);
    Vec s = score_from_vf(optimal_vf(x_t, t, x), x_t, t);
    for (size_t j = 0; j < x.size(); ++j) {
      double expected = -(x_t[j] - (1.0 - t) * x[j]) / (t * t);
      double rel = std::abs(s[j] - expected) / std::max(1.0, std::abs(expected));
      REQUIRE(rel < 1e-10);
    }
  }
}

TEST_CASE("euler steps follow the backward flow") {
  Vec x = {0.3, -1.1};
  VectorField vstar = [&x](const Vec& x_t, double t) { return optimal_vf(x_t, t, x); };

  TrajState s{{5.0, -5.0}, 1.0};
  ode_step(s, 1.0, vstar);  // single full step lands on x exactly
  REQUIRE(s.t == Approx(0.0).margin(1e-15));
  REQUIRE(s.x[0] == Approx(x[0]).margin(1e-12));
  REQUIRE(s.x[1] == Approx(x[1]).margin(1e-12));

  VectorField zero = [](const Vec& x_t, double) { return Vec(x_t.size(), 0.0); };
  TrajState f{{2.0}, 0.8};
  ode_step(f, 0.3, zero);
  REQUIRE(f.x == Vec{2.0});
  REQUIRE(f.t == Approx(0.5));

  REQUIRE_THROWS_AS(ode_step(f, -0.1, zero), DomainError);
  REQUIRE_THROWS_AS(ode_step(f, 0.9, zero), DomainError);  // crosses t=0
  VectorField bad = [](const Vec& x_t, double) {
    return Vec(x_t.size(), std::numeric_limits<double>::quiet_NaN());
  };
  REQUIRE_THROWS_AS(ode_step(f, 0.1, bad), NumericError);
}

TEST_CASE("four uniform euler steps under the optimal field are exact") {
  Vec x = {0.0};
  VectorField vstar = [&x](const Vec& x_t, double t) { return optimal_vf(x_t, t, x); };
  TrajState s{{1.0}, 1.0};
  for (int i = 0; i < 4; ++i) ode_step(s, 0.25, vstar);
  REQUIRE(std::abs(s.x[0]) < 1e-15);
}

TEST_CASE("ode reconstruction is exact from any start in any number of steps") {
  PrngStream rng(9, "ode");
  for (uint32_t trial = 0; trial < 10; ++trial) {
    Vec x = rng.normal_vector(trial, 0, 5);
    VectorField vstar = [&x](const Vec& x_t, double t) { return optimal_vf(x_t, t, x); };
    TrajState s{rng.normal_vector(trial, 1, 5), 1.0 - 1e-3};
    int steps = 1 + int(trial % 7);
    TimeGrid grid = TimeGrid::uniform(steps);
    // integrate down to the lowest boundary, then hop
    for (int n = steps; n >= 1; --n) ode_step(s, grid.dt(n), vstar);
    s.t = grid.boundaries.front();
    Vec rec = one_step_map(s, vstar);
    for (size_t j = 0; j < x.size(); ++j) REQUIRE(rec[j] == Approx(x[j]).margin(1e-9));
  }
}

TEST_CASE("sde step: mean, variance, and domain guards") {
  VectorField zero = [](const Vec& x_t, double) { return Vec(x_t.size(), 0.0); };
  TrajState s{{1.0}, 0.5};
  sde_step(s, 0.1, zero, {0.0});
  REQUIRE(s.x[0] == Approx(0.8).epsilon(1e-15));
  REQUIRE(s.t == Approx(0.4));

  // the noise multiplier is sqrt((2t/(1-t)) dt): with unit noise the increment
  // over the drifted mean isolates the kernel standard deviation
  TrajState a{{1.0}, 0.5}, b{{1.0}, 0.5};
  sde_step(a, 0.1, zero, {0.0});
  sde_step(b, 0.1, zero, {1.0});
  double sd = b.x[0] - a.x[0];
  REQUIRE(sd * sd == Approx(0.2).epsilon(1e-12));

  TrajState top{{1.0}, 1.0};
  REQUIRE_THROWS_AS(sde_step(top, 0.1, zero, {0.0}), DomainError);
  TrajState bot{{1.0}, 0.0};
  REQUIRE_THROWS_AS(sde_step(bot, 0.1, zero, {0.0}), DomainError);
}

TEST_CASE("transition kernels: model form, pinned form, and their consistency") {
  KernelParams opt = optimal_kernel({1.0}, 0.5, 0.1, {0.0});
  REQUIRE(opt.mean[0] == Approx(0.4).epsilon(1e-15));
  REQUIRE(opt.var == Approx(0.2).epsilon(1e-15));

  // kernel mean equals an sde_step with zero noise under the same field
  Vec x = {1.0};
  VectorField vstar = [&x](const Vec& x_t, double t) { return optimal_vf(x_t, t, x); };
  Vec x_t = {(1.0 - 0.5) * 1.0};  // on the noiseless path mean
  KernelParams k = optimal_kernel(x_t, 0.5, 0.1, x);
  TrajState s{x_t, 0.5};
  sde_step(s, 0.1, vstar, {0.0});
  REQUIRE(k.mean[0] == Approx(s.x[0]).epsilon(1e-14));

  // dt -> 0 with x_t = x: mean collapses onto the state
  KernelParams tiny = optimal_kernel({0.7}, 0.4, 1e-9, {0.7});
  REQUIRE(tiny.mean[0] == Approx(0.7).margin(1e-8));

  REQUIRE_THROWS_AS(optimal_kernel({1.0}, 0.0, 0.1, {0.0}), DomainError);
  REQUIRE_THROWS_AS(optimal_kernel({1.0}, 1.0, 0.1, {0.0}), DomainError);
  REQUIRE(em_kernel({1.0}, 0.5, 0.1, {2.0}).mean[0] ==
          Approx(1.0 - (1.0 / 0.5 + 2.0 * 2.0) * 0.1).epsilon(1e-15));
}

TEST_CASE("one-step map is the exact inverse under the optimal field") {
  PrngStream rng(5, "osm");
  for (uint32_t i = 0; i < 20; ++i) {
    Vec x = rng.normal_vector(i, 0, 3);
    VectorField vstar = [&x](const Vec& x_t, double t) { return optimal_vf(x_t, t, x); };
    Vec x_t = rng.normal_vector(i, 1, 3);
    double t = 0.05 + 0.9 * rng.uniform(i, 2);
    Vec rec = one_step_map({x_t, t}, vstar);
    for (size_t j = 0; j < x.size(); ++j) REQUIRE(rec[j] == Approx(x[j]).margin(1e-12));
  }

  // t -> 0 limit: the map returns the state itself
  VectorField unit = [](const Vec& x_t, double) { return Vec(x_t.size(), 1.0); };
  Vec near = one_step_map({{0.42}, 1e-12}, unit);
  REQUIRE(near[0] == Approx(0.42).margin(1e-11));

  REQUIRE_THROWS_AS(one_step_map({{0.0}, 0.0}, unit), DomainError);
}

TEST_CASE("one-step map under a constant field offset errs by exactly -t c") {
  Vec x = {0.2, -0.4};
  Vec c = {0.7, 1.3};
  VectorField off = [&x, &c](const Vec& x_t, double t) {
    Vec v = optimal_vf(x_t, t, x);
    for (size_t j = 0; j < v.size(); ++j) v[j] += c[j];
    return v;
  };
  for (double t : {0.9, 0.5, 0.13}) {
    Vec rec = one_step_map({{1.0, 2.0}, t}, off);
    for (size_t j = 0; j < x.size(); ++j)
      REQUIRE(rec[j] - x[j] == Approx(-t * c[j]).margin(1e-12));
  }
}

TEST_CASE("conditioned drift term") {
  // kernel mode: no correction needed
  Vec x = {1.5, -0.5};
  Vec mode = {(1.0 - 0.3) * 1.5, (1.0 - 0.3) * -0.5};
  Vec d = doob_drift(mode, 0.3, x);
  REQUIRE(d[0] == Approx(0.0).margin(1e-12));
  REQUIRE(d[1] == Approx(0.0).margin(1e-12));
  REQUIRE_THROWS_AS(doob_drift({0.0}, 0.0, {0.0}), DomainError);
  REQUIRE_THROWS_AS(doob_drift({0.0}, 1.0, {0.0}), DomainError);
}

TEST_CASE("conditioned drift equals the reverse drift under the optimal field") {
  // beta_t x_t - doob == x_t/(1-t) + 2 v*(x_t): the h-transform correction of
  // the forward drift reproduces the reverse-sampler drift exactly.
  PrngStream rng(6, "doob");
  for (uint32_t i = 0; i < 10; ++i) {
    Vec x = rng.normal_vector(i, 0, 3);
    Vec x_t = rng.normal_vector(i, 1, 3);
    double t = 0.05 + 0.9 * rng.uniform(i, 2);
    ScheduleCoeffs sc = schedule_coeffs(t);
    Vec doob = doob_drift(x_t, t, x);
    Vec v = optimal_vf(x_t, t, x);
    for (size_t j = 0; j < x.size(); ++j) {
      double lhs = sc.beta * x_t[j] - doob[j];
      double rhs = x_t[j] / (1.0 - t) + 2.0 * v[j];
      double rel = std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-6});
      REQUIRE(rel < 1e-10);
    }
  }
}

TEST_CASE("sde ensemble matches the analytic marginal at mid trajectory") {
  // 10^4 particles, analytic field: empirical moments at t in {0.75,0.5,0.25}
  // must match N((1-t) x, t^2) within 4 SE on the mean and 10% on the variance.
  const double x0 = 2.0;
  Vec xv = {x0};
  VectorField vstar = [&xv](const Vec& x_t, double t) { return optimal_vf(x_t, t, xv); };
  const size_t particles = 10000;
  const double t_hi = 1.0 - 1e-3;
  const std::vector<double> stops = {0.75, 0.5, 0.25};
  const int steps_per_segment = 40;

  std::vector<double> times = {t_hi};
  for (double c : stops) {
    double from = times.back();
    for (int j = 1; j <= steps_per_segment; ++j)
      times.push_back(from + (c - from) * double(j) / steps_per_segment);
    times.back() = c;
  }

  PrngStream init(2024, "mc-init");
  PrngStream noise(2024, "mc-noise");
  std::vector<std::vector<double>> at(stops.size());
  for (size_t p = 0; p < particles; ++p) {
    TrajState st{Vec{init.normal(uint32_t(p), 0)}, t_hi};
    size_t ck = 0;
    for (size_t j = 1; j < times.size(); ++j) {
      Vec z = {noise.normal(uint32_t(p), uint32_t(j))};
      sde_step(st, st.t - times[j], vstar, z);
      st.t = times[j];
      if (ck < stops.size() && times[j] == stops[ck]) at[ck++].push_back(st.x[0]);
    }
  }

  for (size_t c = 0; c < stops.size(); ++c) {
    double n = double(at[c].size());
    REQUIRE(n == double(particles));
    double sum = 0, sumsq = 0;
    for (double v : at[c]) { sum += v; sumsq += v * v; }
    double mean = sum / n;
    double var = (sumsq - sum * sum / n) / (n - 1.0);
    double want_mean = (1.0 - stops[c]) * x0;
    double want_var = stops[c] * stops[c];
    double se = std::sqrt(var / n);
    INFO("t=" << stops[c] << " mean=" << mean << " want=" << want_mean << " se=" << se);
    REQUIRE(std::abs(mean - want_mean) < 4.0 * se);
    REQUIRE(std::abs(var - want_var) < 0.10 * want_var);
  }
}

TEST_CASE("time grids are validated and uniform construction pins endpoints") {
  TimeGrid g = TimeGrid::uniform(100);
  REQUIRE(g.steps() == 100);
  REQUIRE(g.boundaries.front() == Approx(1e-3));
  REQUIRE(g.boundaries.back() == Approx(1.0 - 1e-3));
  for (int n = 1; n <= g.steps(); ++n) REQUIRE(g.dt(n) > 0.0);

  REQUIRE_THROWS_AS(TimeGrid::uniform(0), DomainError);
  REQUIRE_THROWS_AS(TimeGrid({0.5, 0.4}, 0.5, 0.6).validate(), DomainError);
}
