#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "facetalk/rng.hpp"
#include "facetalk/schedule.hpp"

using namespace facetalk;
using namespace facetalk::diffusion;

TEST_CASE("cosine schedule endpoints and shape") {
  const auto sched = build_cosine_schedule(1000, 0.008);
  CHECK(sched.alpha_bar[0] == 1.0);
  CHECK(sched.alpha_bar[1000] <= 1e-3);
  CHECK(sched.alpha_bar.size() == 1001);

  const auto tiny = build_cosine_schedule(2, 0.008);
  CHECK(tiny.alpha_bar.size() == 3);
}

TEST_CASE("cosine schedule matches the closed form everywhere") {
  const int steps = 1000;
  const double s = 0.008;
  const auto sched = build_cosine_schedule(steps, s);
  auto f = [&](double t) {
    const double c = std::cos((t / steps + s) / (1.0 + s) * M_PI / 2.0);
    return c * c;
  };
  for (int t = 0; t <= steps; ++t) {
    CHECK(sched.alpha_bar[t] == doctest::Approx(f(t) / f(0)).epsilon(1e-12));
    if (t > 0) {
      CHECK(sched.alpha_bar[t] < sched.alpha_bar[t - 1]);
      const double a = sched.alpha(t);
      CHECK(a > 0.0);
      CHECK(a < 1.0);
    }
  }
}

TEST_CASE("invalid schedule configuration") {
  CHECK_THROWS_AS(build_cosine_schedule(0, 0.008), ConfigError);
  CHECK_THROWS_AS(build_cosine_schedule(10, 0.0), ConfigError);
  CHECK_THROWS_AS(build_cosine_schedule(10, -1.0), ConfigError);
}

TEST_CASE("forward noise endpoints") {
  const auto sched = build_cosine_schedule(100, 0.008);
  CounterRng rng(7);
  const MatX<double> x0 = rng.normal_matrix<double>(4, 6);
  const MatX<double> eps = rng.normal_matrix<double>(4, 6);

  const auto at0 = forward_noise(x0, 0, eps, sched);
  CHECK(at0.values == x0);

  const MatX<double> zero = MatX<double>::Zero(4, 6);
  const auto atT = forward_noise(zero, 100, eps, sched);
  const double b = std::sqrt(1.0 - sched.alpha_bar[100]);
  CHECK((atT.values - b * eps).cwiseAbs().maxCoeff() == 0.0);

  MatX<double> bad(3, 6);
  CHECK_THROWS_AS(forward_noise(x0, 1, bad, sched), DimensionError);
  CHECK_THROWS_AS(forward_noise(x0, 101, eps, sched), ConfigError);
}

TEST_CASE("forward noise is affine with the schedule coefficients") {
  const auto sched = build_cosine_schedule(50, 0.008);
  CounterRng rng(11);
  const MatX<double> x0 = rng.normal_matrix<double>(3, 5);
  const MatX<double> eps = rng.normal_matrix<double>(3, 5);
  const int t = 23;
  const MatX<double> zero = MatX<double>::Zero(3, 5);

  const MatX<double> both = forward_noise(x0, t, eps, sched).values;
  const MatX<double> only_x = forward_noise(x0, t, zero, sched).values;
  const MatX<double> only_e = forward_noise(zero, t, eps, sched).values;
  CHECK((both - only_x - only_e).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((only_x - std::sqrt(sched.alpha_bar[t]) * x0).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("diffusion loss") {
  CounterRng rng(3);
  const MatX<double> x0 = rng.normal_matrix<double>(5, 7);
  CHECK(diffusion_loss(x0, x0) == 0.0);

  const MatX<double> zeros = MatX<double>::Zero(2, 3);
  const MatX<double> ones = MatX<double>::Ones(2, 3);
  CHECK(diffusion_loss(zeros, ones) == 1.0);

  const MatX<double> y = rng.normal_matrix<double>(5, 7);
  double brute = 0.0;
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 7; ++j) brute += std::pow(x0(i, j) - y(i, j), 2);
  brute /= 35.0;
  CHECK(diffusion_loss(x0, y) == doctest::Approx(brute).epsilon(1e-14));

  MatX<double> bad(4, 7);
  CHECK_THROWS_AS(diffusion_loss(x0, bad), DimensionError);
}

TEST_CASE("posterior step at t=1 returns the prediction exactly") {
  const auto sched = build_cosine_schedule(40, 0.008);
  CounterRng rng(5);
  NoisySequence<double> xt;
  xt.values = rng.normal_matrix<double>(3, 4);
  xt.t = 1;
  const MatX<double> x0_hat = rng.normal_matrix<double>(3, 4);
  const MatX<double> noise = rng.normal_matrix<double>(3, 4);
  const auto prev = posterior_step(xt, x0_hat, noise, sched);
  CHECK(prev.t == 0);
  CHECK(prev.values == x0_hat);
  CHECK(sched.posterior_variance(1) == 0.0);

  xt.t = 0;
  CHECK_THROWS_AS(posterior_step(xt, x0_hat, noise, sched), ConfigError);
}

TEST_CASE("posterior step with zero noise returns the posterior mean") {
  const auto sched = build_cosine_schedule(40, 0.008);
  CounterRng rng(9);
  NoisySequence<double> xt;
  xt.values = rng.normal_matrix<double>(2, 3);
  xt.t = 17;
  const MatX<double> x0_hat = rng.normal_matrix<double>(2, 3);
  const MatX<double> zero = MatX<double>::Zero(2, 3);
  const auto prev = posterior_step(xt, x0_hat, zero, sched);

  const double ab_t = sched.alpha_bar[17];
  const double ab_p = sched.alpha_bar[16];
  const double beta = sched.beta(17);
  const MatX<double> mean =
      (std::sqrt(ab_p) * beta / (1.0 - ab_t)) * x0_hat +
      (std::sqrt(sched.alpha(17)) * (1.0 - ab_p) / (1.0 - ab_t)) * xt.values;
  CHECK((prev.values - mean).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(prev.t == 16);
}

TEST_CASE("constant-prediction oracle closes the reverse loop onto x0*") {
  const auto sched = build_cosine_schedule(200, 0.008);
  CounterRng rng(13);
  const MatX<double> x0_star = rng.normal_matrix<double>(2, 5);

  NoisySequence<double> x;
  x.values = rng.normal_matrix<double>(2, 5);
  x.t = sched.steps;
  for (int t = sched.steps; t >= 1; --t) {
    const MatX<double> noise = rng.normal_matrix<double>(2, 5);
    x = posterior_step(x, x0_star, noise, sched);
  }
  CHECK(x.t == 0);
  const double floor = 3.0 * std::sqrt(sched.posterior_variance(2));
  CHECK((x.values - x0_star).cwiseAbs().maxCoeff() <= floor);
  // With a constant prediction the final step lands on x0* exactly.
  CHECK((x.values - x0_star).cwiseAbs().maxCoeff() == 0.0);
}
