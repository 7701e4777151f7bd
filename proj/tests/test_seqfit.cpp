#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "facetalk/evalkit.hpp"
#include "facetalk/seqfit.hpp"
#include "facetalk/synthetic.hpp"
#include "fd_check.hpp"

using namespace facetalk;
using namespace facetalk::fitting;

namespace {

struct Oracle {
  field::HeadField f = field::make_head_field(99);
  VecX<double> id = field::default_identity();
};

FitConfig quick_config() {
  FitConfig c;
  c.sample_count = 600;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("point sampling without replacement") {
  CounterRng rng(1);
  Points<double> cloud(50, 3);
  for (Index i = 0; i < 50; ++i)
    for (int a = 0; a < 3; ++a) cloud(i, a) = rng.normal();

  CounterRng s1(42), s2(42);
  const Points<double> a = sample_points(cloud, 20, s1);
  const Points<double> b = sample_points(cloud, 20, s2);
  CHECK(a == b);  // same stream, same subset

  // Every sampled point is a member of the input.
  for (Index i = 0; i < a.rows(); ++i) {
    bool found = false;
    for (Index j = 0; j < cloud.rows(); ++j)
      if (a.row(i) == cloud.row(j)) found = true;
    CHECK(found);
  }

  // count == K yields a permutation (all rows distinct members).
  CounterRng s3(7);
  const Points<double> full = sample_points(cloud, 50, s3);
  std::set<std::array<double, 3>> seen;
  for (Index i = 0; i < 50; ++i)
    seen.insert({full(i, 0), full(i, 1), full(i, 2)});
  CHECK(seen.size() == 50);

  CounterRng s4(9);
  CHECK_THROWS_AS(sample_points(cloud, 51, s4), InsufficientInputError);
}

TEST_CASE("window loss vanishes on ground-truth surface samples") {
  const Oracle o;
  const VecX<double> theta = synth::observable_code(o.f, 3, 1.0);
  const Points<double> pts = synth::sample_surface_points(o.f, o.id, theta,
                                                          400, 11);

  MatX<double> codes(1, kExpressionDim);
  codes.row(0) = theta.transpose();
  FitConfig config = quick_config();
  const auto loss = window_loss(o.f, o.id, codes, {pts}, config);
  CHECK(loss.sdf <= 1e-9);

  // Constant codes have zero temporal loss.
  MatX<double> constant(4, kExpressionDim);
  for (int i = 0; i < 4; ++i) constant.row(i) = theta.transpose();
  std::vector<Points<double>> frames(4, pts);
  const auto loss4 = window_loss(o.f, o.id, constant, frames, config);
  CHECK(loss4.temp == 0.0);
}

TEST_CASE("temporal loss is zero iff adjacent codes are equal") {
  const Oracle o;
  CounterRng rng(5);
  MatX<double> codes = 0.1 * rng.normal_matrix<double>(3, kExpressionDim);
  std::vector<Points<double>> frames(3, Points<double>::Zero(0, 3));
  FitConfig config = quick_config();
  config.lambda_sdf = 0.0;
  const auto loss = window_loss(o.f, o.id, codes, frames, config);
  CHECK(loss.temp > 0.0);

  codes.row(1) = codes.row(0);
  codes.row(2) = codes.row(0);
  const auto loss2 = window_loss(o.f, o.id, codes, frames, config);
  CHECK(loss2.temp == 0.0);
}

TEST_CASE("window loss gradient matches finite differences") {
  const Oracle o;
  CounterRng rng(13);
  const Index n = 3;
  MatX<double> codes = 0.3 * rng.normal_matrix<double>(n, kExpressionDim);
  std::vector<Points<double>> samples;
  for (Index i = 0; i < n; ++i) {
    const VecX<double> theta = synth::observable_code(o.f, 20 + i, 0.8);
    samples.push_back(
        synth::sample_surface_points(o.f, o.id, theta, 60, 30 + i));
  }
  FitConfig config = quick_config();

  MatX<double> grad(n, kExpressionDim);
  window_loss(o.f, o.id, codes, samples, config, &grad);

  auto loss_only = [&]() {
    return window_loss(o.f, o.id, codes, samples, config).total;
  };
  std::vector<std::pair<std::string, MatX<double>*>> tensors = {
      {"codes", &codes}};
  std::vector<std::pair<std::string, const MatX<double>*>> grads = {
      {"codes", &grad}};
  const auto res = fd::check_gradients(tensors, grads, loss_only, 120,
                                       0xfeed, 1e-5);
  INFO(res.worst);
  CHECK(res.checked >= 100);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("regularizer alone drives codes to zero") {
  const Oracle o;
  CounterRng rng(17);
  MatX<double> init = 0.05 * rng.normal_matrix<double>(2, kExpressionDim);
  std::vector<PointCloudFrame> frames(2, Points<double>::Zero(0, 3));
  FitConfig config = quick_config();
  config.lambda_sdf = 0.0;
  config.lambda_temp = 0.0;
  config.lambda_reg = 1.0;
  config.iters = 800;
  config.lr_drop_iter = 600;
  const auto result = fit_window(o.f, o.id, frames, init, config);
  CHECK(result.codes.rowwise().norm().maxCoeff() <
        0.05 * init.rowwise().norm().maxCoeff());
}

TEST_CASE("synthetic recovery within five percent") {
  const Oracle o;
  const Index n = 3;
  std::vector<VecX<double>> truth;
  std::vector<PointCloudFrame> frames;
  for (Index i = 0; i < n; ++i) {
    // A smooth trajectory in the observable subspace.
    const double a = 0.3 * double(i);
    VecX<double> theta =
        std::cos(a) * synth::identifiable_code(o.f, o.id, 100, 1.0) +
        std::sin(a) * synth::identifiable_code(o.f, o.id, 101, 1.0);
    truth.push_back(theta);
    frames.push_back(
        synth::sample_surface_points(o.f, o.id, theta, 2000, 200 + i));
  }
  FitConfig config = quick_config();
  const auto result = fit_window(o.f, o.id, frames,
                                 MatX<double>::Zero(n, kExpressionDim), config);
  for (Index i = 0; i < n; ++i) {
    const double rel =
        (result.codes.row(i).transpose() - truth[i]).norm() / truth[i].norm();
    INFO("frame ", i, " relative error ", rel);
    CHECK(rel <= 0.05);
  }
}

TEST_CASE("starting at the optimum stays near the optimum") {
  const Oracle o;
  const VecX<double> theta = synth::identifiable_code(o.f, o.id, 300, 1.0);
  std::vector<PointCloudFrame> frames = {
      synth::sample_surface_points(o.f, o.id, theta, 1500, 301)};
  MatX<double> init(1, kExpressionDim);
  init.row(0) = theta.transpose();

  FitConfig config = quick_config();
  const auto initial =
      window_loss(o.f, o.id, init, {frames[0]}, config);
  const auto result = fit_window(o.f, o.id, frames, init, config);
  CHECK(result.final_loss.total <= initial.total + 1e-6);
  const double moved = (result.codes.row(0).transpose() - theta).norm();
  CHECK(moved / theta.norm() < 0.02);
}

TEST_CASE("doubling the regularizer shrinks the fitted codes") {
  const Oracle o;
  const VecX<double> theta = synth::identifiable_code(o.f, o.id, 400, 1.0);
  std::vector<PointCloudFrame> frames = {
      synth::sample_surface_points(o.f, o.id, theta, 1200, 401)};

  FitConfig weak = quick_config();
  weak.lambda_reg = 0.5;
  FitConfig strong = weak;
  strong.lambda_reg = 1.0;

  const auto a = fit_window(o.f, o.id, frames,
                            MatX<double>::Zero(1, kExpressionDim), weak);
  const auto b = fit_window(o.f, o.id, frames,
                            MatX<double>::Zero(1, kExpressionDim), strong);
  CHECK(b.codes.row(0).norm() < a.codes.row(0).norm());
}

TEST_CASE("window start arithmetic") {
  CHECK(window_starts(10, 10, 2) == std::vector<Index>{0});
  CHECK(window_starts(5, 10, 2) == std::vector<Index>{0});
  CHECK(window_starts(26, 10, 2) == std::vector<Index>{0, 8, 16});
  CHECK(window_starts(25, 10, 2) == std::vector<Index>{0, 8, 15});
  CHECK(window_starts(18, 10, 2) == std::vector<Index>{0, 8});
}

TEST_CASE("temporal term reduces adjacent-frame jitter") {
  const Oracle o;
  const Index n = 6;
  CounterRng noise_rng(55);
  std::vector<PointCloudFrame> frames;
  for (Index i = 0; i < n; ++i) {
    const double a = 0.25 * double(i);
    const VecX<double> theta =
        std::cos(a) * synth::identifiable_code(o.f, o.id, 500, 0.9) +
        std::sin(a) * synth::identifiable_code(o.f, o.id, 501, 0.9);
    Points<double> pts =
        synth::sample_surface_points(o.f, o.id, theta, 900, 510 + i);
    // Per-frame jitter so the per-frame optima wobble.
    for (Index k = 0; k < pts.rows(); ++k)
      for (int c = 0; c < 3; ++c) pts(k, c) += 0.004 * noise_rng.normal();
    frames.push_back(pts);
  }

  FitConfig with_temp = quick_config();
  with_temp.window = 6;
  with_temp.iters = 400;
  FitConfig no_temp = with_temp;
  no_temp.lambda_temp = 0.0;

  const MatX<double> fit_t = fit_sequence(o.f, o.id, frames, with_temp);
  const MatX<double> fit_0 = fit_sequence(o.f, o.id, frames, no_temp);
  const auto [mae_t, rmse_t] = metrics::adjacent_mae_rmse(fit_t);
  const auto [mae_0, rmse_0] = metrics::adjacent_mae_rmse(fit_0);
  INFO("with temporal ", mae_t, " without ", mae_0);
  CHECK(mae_t < mae_0);
}

TEST_CASE("sequence fitting is deterministic and thread-invariant") {
  const Oracle o;
  const Index n = 4;
  std::vector<PointCloudFrame> frames;
  for (Index i = 0; i < n; ++i) {
    const VecX<double> theta = synth::observable_code(o.f, 600 + i, 0.7);
    frames.push_back(
        synth::sample_surface_points(o.f, o.id, theta, 700, 610 + i));
  }
  FitConfig config = quick_config();
  config.window = 4;
  config.iters = 60;

  const MatX<double> a = fit_sequence(o.f, o.id, frames, config);
  const MatX<double> b = fit_sequence(o.f, o.id, frames, config);
  CHECK(a == b);

  FitConfig threaded = config;
  threaded.threads = 3;
  const MatX<double> c = fit_sequence(o.f, o.id, frames, threaded);
  CHECK(a == c);
}
