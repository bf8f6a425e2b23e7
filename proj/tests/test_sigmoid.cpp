#include <doctest.h>

#include <cmath>
#include <random>

#include "dive/sigmoid.hpp"

using namespace dive;

TEST_SUITE("sigmoid") {

TEST_CASE("value at the inflection centre is d + a/2") {
  CHECK(sigmoid_eval(0.0, {1.0, 1.0, 0.0, 0.0}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigmoid_eval(1.0, {2.0, 0.5, 1.0, -1.0}) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(sigmoid_eval(-3.0, {4.0, -2.0, -3.0, 7.0}) == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("asymptotes saturate without overflow") {
  const TrajectoryParams t{1.0, 1.0, 0.0, 0.0};
  CHECK(sigmoid_eval(1e6, t) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sigmoid_eval(-1e6, t) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::isfinite(sigmoid_eval(1e308, t)));
  CHECK(std::isfinite(sigmoid_eval(-1e308, {1e10, -1e5, 3.0, 0.0})));
}

TEST_CASE("monotone in s and bounded by the asymptotes") {
  const TrajectoryParams t{2.0, 0.7, 0.3, -1.0};
  double prev = sigmoid_eval(-20.0, t);
  for (double s = -19.5; s <= 20.0; s += 0.5) {
    const double v = sigmoid_eval(s, t);
    CHECK(v >= prev);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    prev = v;
  }
}

TEST_CASE("dps is the affine map alpha t + beta") {
  CHECK(dps({1.0, 0.0}, 70.0) == 70.0);  // the no-staging model
  CHECK(dps({2.0, -100.0}, 60.0) == 20.0);
}

TEST_CASE("trivial partials") {
  const TrajectoryParams t{3.0, 2.0, 1.0, -0.5};
  CHECK(sigmoid_grad(0.12, t).dd == 1.0);
  CHECK(sigmoid_grad(1.0, t).da == doctest::Approx(0.5).epsilon(1e-15));  // s = c
}

TEST_CASE("gradient matches central finite differences on 1000 draws") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u_s(-5.0, 5.0);
  std::uniform_real_distribution<double> u_a(0.5, 3.0);
  std::uniform_real_distribution<double> u_b(0.2, 3.0);
  std::uniform_real_distribution<double> u_c(-3.0, 3.0);
  std::uniform_real_distribution<double> u_d(-2.0, 2.0);
  std::bernoulli_distribution flip(0.5);

  const double h = 1e-6;
  auto fd = [&](auto get, auto set, TrajectoryParams t, double s) {
    TrajectoryParams lo = t, hi = t;
    set(lo, get(t) - h);
    set(hi, get(t) + h);
    return (sigmoid_eval(s, hi) - sigmoid_eval(s, lo)) / (2.0 * h);
  };

  for (int i = 0; i < 1000; ++i) {
    TrajectoryParams t{u_a(rng), (flip(rng) ? 1.0 : -1.0) * u_b(rng), u_c(rng), u_d(rng)};
    const double s = u_s(rng);
    const SigmoidGrad g = sigmoid_grad(s, t);

    auto check = [&](double analytic, double numeric) {
      CHECK(std::abs(analytic - numeric) <= 1e-6 * (1.0 + std::abs(numeric)));
    };
    check(g.da, fd([](const TrajectoryParams& p) { return p.a; },
                   [](TrajectoryParams& p, double v) { p.a = v; }, t, s));
    check(g.db, fd([](const TrajectoryParams& p) { return p.b; },
                   [](TrajectoryParams& p, double v) { p.b = v; }, t, s));
    check(g.dc, fd([](const TrajectoryParams& p) { return p.c; },
                   [](TrajectoryParams& p, double v) { p.c = v; }, t, s));
    check(g.dd, fd([](const TrajectoryParams& p) { return p.d; },
                   [](TrajectoryParams& p, double v) { p.d = v; }, t, s));
    check(g.ds, (sigmoid_eval(s + h, t) - sigmoid_eval(s - h, t)) / (2.0 * h));
  }
}

}  // TEST_SUITE
