#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "facetalk/evalkit.hpp"
#include "facetalk/rng.hpp"

using namespace facetalk;
using namespace facetalk::metrics;

TEST_CASE("diversity of identical samples is zero") {
  MatX<double> seq(4, 3);
  seq.setConstant(0.7);
  std::vector<SampleSet> sets = {{seq, seq, seq}};
  CHECK(diversity(sets) == 0.0);
}

TEST_CASE("diversity hand example") {
  MatX<double> a(1, 1), b(1, 1);
  a << 0.0;
  b << 3.0;
  std::vector<SampleSet> sets = {{a, b}};
  CHECK(diversity(sets) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("diversity is positively homogeneous") {
  CounterRng rng(1);
  SampleSet set;
  for (int k = 0; k < 3; ++k) set.push_back(rng.normal_matrix<double>(5, 4));
  std::vector<SampleSet> sets = {set};
  const double d1 = diversity(sets);

  const double c = 2.5;
  SampleSet scaled;
  for (const auto& s : set) scaled.push_back(c * s);
  std::vector<SampleSet> sets2 = {scaled};
  CHECK(diversity(sets2) == doctest::Approx(c * d1).epsilon(1e-12));
}

TEST_CASE("diversity is permutation-invariant and set-averaged") {
  CounterRng rng(2);
  SampleSet a, b;
  for (int k = 0; k < 4; ++k) {
    a.push_back(rng.normal_matrix<double>(3, 2));
    b.push_back(rng.normal_matrix<double>(3, 2));
  }
  SampleSet shuffled = a;
  std::swap(shuffled[0], shuffled[3]);
  std::swap(shuffled[1], shuffled[2]);
  CHECK(diversity({a}) == doctest::Approx(diversity({shuffled})).epsilon(1e-15));

  const double da = diversity({a});
  const double db = diversity({b});
  CHECK(diversity({a, b}) == doctest::Approx(0.5 * (da + db)).epsilon(1e-12));
}

TEST_CASE("diversity input validation") {
  MatX<double> seq(2, 2);
  seq.setZero();
  CHECK_THROWS_AS(diversity({SampleSet{seq}}), InsufficientInputError);
  MatX<double> other(3, 2);
  other.setZero();
  CHECK_THROWS_AS(diversity({SampleSet{seq, other}}), DimensionError);
}

TEST_CASE("adjacent MAE and RMSE") {
  MatX<double> constant(5, 3);
  constant.setConstant(1.23);
  auto [mae0, rmse0] = adjacent_mae_rmse(constant);
  CHECK(mae0 == 0.0);
  CHECK(rmse0 == 0.0);

  // Linear ramp: every step is exactly 0.01 in every coordinate.
  MatX<double> ramp(10, 4);
  for (Index i = 0; i < 10; ++i) ramp.row(i).setConstant(0.01 * double(i));
  auto [mae, rmse] = adjacent_mae_rmse(ramp);
  CHECK(mae == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(rmse == doctest::Approx(0.01).epsilon(1e-12));

  // Random sequence against a scalar recomputation.
  CounterRng rng(3);
  const MatX<double> seq = rng.normal_matrix<double>(20, 6);
  auto [m, r] = adjacent_mae_rmse(seq);
  double sa = 0.0, sq = 0.0;
  for (Index i = 0; i + 1 < 20; ++i)
    for (Index j = 0; j < 6; ++j) {
      const double d = seq(i + 1, j) - seq(i, j);
      sa += std::abs(d);
      sq += d * d;
    }
  const double count = 19.0 * 6.0;
  CHECK(m == doctest::Approx(sa / count).epsilon(1e-12));
  CHECK(r == doctest::Approx(std::sqrt(sq / count)).epsilon(1e-12));

  MatX<double> one(1, 3);
  CHECK_THROWS_AS(adjacent_mae_rmse(one), InsufficientInputError);
}

TEST_CASE("MAE never exceeds RMSE") {
  CounterRng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const MatX<double> seq = rng.normal_matrix<double>(8, 5);
    auto [mae, rmse] = adjacent_mae_rmse(seq);
    CHECK(mae <= rmse + 1e-15);
  }
}

TEST_CASE("autocorrelation identities") {
  CounterRng rng(5);
  const MatX<double> seq = rng.normal_matrix<double>(50, 3);
  CHECK(autocorrelation(seq, 0) == doctest::Approx(1.0).epsilon(1e-12));

  // Alternating scalar sequence: lag-1 correlation is exactly -1.
  MatX<double> alt(11, 1);
  for (Index i = 0; i < 11; ++i) alt(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
  CHECK(autocorrelation(alt, 1) == doctest::Approx(-1.0).epsilon(1e-12));

  // White noise decorrelates.
  const MatX<double> noise = rng.normal_matrix<double>(10000, 1);
  CHECK(std::abs(autocorrelation(noise, 1)) < 0.05);
}

TEST_CASE("autocorrelation is affine-invariant with positive scale") {
  CounterRng rng(6);
  const MatX<double> seq = rng.normal_matrix<double>(40, 2);
  const double base = autocorrelation(seq, 2);
  const MatX<double> affine = (3.7 * seq.array() + 11.0).matrix();
  CHECK(autocorrelation(affine, 2) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("autocorrelation errors") {
  MatX<double> constant(6, 2);
  constant.setConstant(5.0);
  CHECK_THROWS_AS(autocorrelation(constant, 1), DegenerateInputError);

  CounterRng rng(7);
  const MatX<double> seq = rng.normal_matrix<double>(4, 2);
  CHECK_THROWS_AS(autocorrelation(seq, 4), InsufficientInputError);
  CHECK_THROWS_AS(autocorrelation(seq, -1), ConfigError);
}
