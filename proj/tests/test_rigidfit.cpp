#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "facetalk/rigidfit.hpp"
#include "facetalk/rng.hpp"

using namespace facetalk;
using namespace facetalk::rigid;

namespace {

Points<double> random_cloud(Index n, uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed);
  Points<double> p(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) p(i, a) = scale * rng.normal();
  return p;
}

Mat3<double> random_rotation(uint64_t seed) {
  CounterRng rng(seed);
  Vec3<double> w{rng.normal(), rng.normal(), rng.normal()};
  return rodrigues(Vec3<double>(0.7 * w.normalized()));
}

Points<double> apply_similarity(const Points<double>& p, double s,
                                const Mat3<double>& r,
                                const Vec3<double>& t) {
  Points<double> out(p.rows(), 3);
  for (Index i = 0; i < p.rows(); ++i)
    out.row(i) = (s * (r * p.row(i).transpose()) + t).transpose();
  return out;
}

}  // namespace

TEST_CASE("backprojection basics") {
  CameraParams cam;  // identity intrinsics and extrinsics
  DepthMap map;
  map.depth = MatX<double>::Zero(3, 3);
  map.mask.setConstant(3, 3, false);
  map.depth(0, 0) = 1.0;
  map.mask(0, 0) = true;

  const auto [pts, nrm] = backproject(map, cam);
  REQUIRE(pts.rows() == 1);
  CHECK((pts.row(0).transpose() - Vec3<double>{0, 0, 1}).norm() < 1e-15);

  // Depth outside (0, 1.4) is filtered out.
  DepthMap far;
  far.depth = MatX<double>::Constant(4, 4, 1.5);
  far.mask.setConstant(4, 4, true);
  const auto [fp, fn] = backproject(far, cam);
  CHECK(fp.rows() == 0);

  DepthMap zero;
  zero.depth = MatX<double>::Zero(4, 4);
  zero.mask.setConstant(4, 4, true);
  CHECK(backproject(zero, cam).first.rows() == 0);
}

TEST_CASE("backprojection round-trips a rendered plane") {
  CameraParams cam;
  cam.intrinsics << 50, 0, 16, 0, 50, 12, 0, 0, 1;
  cam.rotation = random_rotation(5);
  cam.translation = Vec3<double>{0.2, -0.1, 0.3};

  // Render a fronto-parallel plane at camera depth 1.2.
  const Index rows = 24, cols = 32;
  DepthMap map;
  map.depth = MatX<double>::Constant(rows, cols, 1.2);
  map.mask.setConstant(rows, cols, true);

  const auto [pts, nrm] = backproject(map, cam);
  REQUIRE(pts.rows() == rows * cols);

  // Forward-project every world point back into the image.
  const Mat3<double> kinv = cam.intrinsics.inverse();
  Index at = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const Vec3<double> world = pts.row(at).transpose();
      const Vec3<double> camp =
          cam.rotation.transpose() * (world - cam.translation);
      CHECK(camp[2] == doctest::Approx(1.2).epsilon(1e-9));
      const Vec3<double> pix = cam.intrinsics * (camp / camp[2]);
      CHECK(std::abs(pix[0] - double(c)) < 1e-6);
      CHECK(std::abs(pix[1] - double(r)) < 1e-6);
      ++at;
    }

  // Normals of a depth plane point along -z in camera space, rotated by R.
  const Vec3<double> expected = cam.rotation * Vec3<double>{0, 0, -1};
  for (Index i = 0; i < nrm.rows(); ++i)
    CHECK(std::abs(std::abs(nrm.row(i).dot(expected.transpose())) - 1.0) <
          1e-6);
}

TEST_CASE("Kabsch recovers rigid transforms") {
  const Points<double> src = random_cloud(40, 1);
  auto [r_id, t_id] = estimate_rigid(src, src);
  CHECK((r_id - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(t_id.norm() < 1e-12);

  const Mat3<double> r_true = random_rotation(2);
  const Vec3<double> t_true{0.3, -0.7, 0.11};
  const Points<double> dst = apply_similarity(src, 1.0, r_true, t_true);
  auto [r, t] = estimate_rigid(src, dst);
  CHECK((r - r_true).norm() < 1e-9);
  CHECK((t - t_true).norm() < 1e-9);

  // Pure translation.
  const Points<double> shifted =
      apply_similarity(src, 1.0, Mat3<double>::Identity(), t_true);
  auto [rt, tt] = estimate_rigid(src, shifted);
  CHECK((rt - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tt - t_true).norm() < 1e-12);

  // Collinear points are a rank error.
  Points<double> line(5, 3);
  for (Index i = 0; i < 5; ++i)
    line.row(i) = Vec3<double>{double(i), 2.0 * i, -double(i)}.transpose();
  CHECK_THROWS_AS(estimate_rigid(line, line), NumericalError);
  CHECK_THROWS_AS(estimate_rigid(src.topRows(2), src.topRows(2)),
                  InsufficientInputError);
}

TEST_CASE("Umeyama recovers similarity transforms") {
  const Points<double> src = random_cloud(35, 3);

  const Points<double> doubled = apply_similarity(
      src, 2.0, Mat3<double>::Identity(), Vec3<double>::Zero());
  auto [s2, r2, t2] = estimate_similarity(src, doubled);
  CHECK(s2 == doctest::Approx(2.0).epsilon(1e-12));
  CHECK((r2 - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(t2.norm() < 1e-9);

  const double s_true = 0.37;
  const Mat3<double> r_true = random_rotation(4);
  const Vec3<double> t_true{-0.2, 0.5, 1.4};
  const Points<double> dst = apply_similarity(src, s_true, r_true, t_true);
  auto [s, r, t] = estimate_similarity(src, dst);
  CHECK(std::abs(s - s_true) < 1e-9);
  CHECK((r - r_true).norm() < 1e-9);
  CHECK((t - t_true).norm() < 1e-9);

  // The rotation agrees with the rigid estimate on the same data.
  auto [rr, tr] = estimate_rigid(src, dst);
  CHECK((r - rr).cwiseAbs().maxCoeff() == 0.0);

  // Zero-variance source is a scale error.
  Points<double> collapsed = Points<double>::Zero(5, 3);
  CHECK_THROWS_AS(estimate_similarity(collapsed, random_cloud(5, 6)),
                  NumericalError);
}

TEST_CASE("similarity estimation composes predictably") {
  const Points<double> src = random_cloud(30, 7);
  const double s_inner = 1.7;
  const Mat3<double> r_inner = random_rotation(8);
  const Vec3<double> t_inner{0.1, 0.2, -0.3};
  const Points<double> dst =
      apply_similarity(src, s_inner, r_inner, t_inner);

  const double s_outer = 0.6;
  const Mat3<double> r_outer = random_rotation(9);
  const Vec3<double> t_outer{-1.0, 0.4, 0.2};
  const Points<double> src2 = apply_similarity(src, s_outer, r_outer, t_outer);
  const Points<double> dst2 = apply_similarity(dst, s_outer, r_outer, t_outer);

  // estimate(U src, U dst) == U T U^{-1} for the known inner transform T.
  auto [s, r, t] = estimate_similarity(src2, dst2);
  CHECK(std::abs(s - s_inner) < 1e-9);
  const Mat3<double> r_expected = r_outer * r_inner * r_outer.transpose();
  CHECK((r - r_expected).norm() < 1e-9);
  const Vec3<double> t_expected =
      s_outer * (r_outer * t_inner) + t_outer -
      s_inner * (r_expected * t_outer);
  CHECK((t - t_expected).norm() < 1e-9);
}

TEST_CASE("outlier filter") {
  const Points<double> src = random_cloud(20, 11);
  const auto all = filter_outliers(src, src, 0.020);
  CHECK(all.size() == 20);

  Points<double> dst = src;
  dst.row(7) += Vec3<double>{0.1, 0, 0}.transpose();
  const auto keep = filter_outliers(src, dst, 0.020);
  CHECK(keep.size() == 19);
  for (Index i : keep) CHECK(i != 7);

  // Exactly tau stays (inclusive threshold).
  Points<double> at_origin = src;
  at_origin.row(3).setZero();
  Points<double> border = at_origin;
  border.row(3) = Vec3<double>{0.020, 0, 0}.transpose();
  CHECK(filter_outliers(at_origin, border, 0.020).size() == 20);

  // Idempotence.
  const auto again =
      filter_outliers(select_rows(src, keep), select_rows(dst, keep), 0.020);
  CHECK(again.size() == keep.size());
}

TEST_CASE("Rodrigues jacobian matches finite differences") {
  CounterRng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3<double> w{rng.normal(), rng.normal(), rng.normal()};
    w *= 0.5;
    const auto jac = rodrigues_jacobian(w);
    const double h = 1e-7;
    for (int k = 0; k < 3; ++k) {
      Vec3<double> wp = w, wm = w;
      wp[k] += h;
      wm[k] -= h;
      const Mat3<double> fd = (rodrigues(wp) - rodrigues(wm)) / (2 * h);
      CHECK((jac[k] - fd).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("template model is seeded and consistent") {
  const TemplateModel a = make_template_model(3);
  const TemplateModel b = make_template_model(3);
  CHECK(a.base == b.base);
  CHECK(a.landmark_vertices == b.landmark_vertices);
  // Landmark indices are distinct and in range.
  std::vector<Index> sorted = a.landmark_vertices;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK(sorted.front() >= 0);
  CHECK(sorted.back() < a.vertex_count);
}

TEST_CASE("template fit gradient matches finite differences") {
  // Probes the full objective (landmarks, geometry, regularizers,
  // smoothness) through a tiny two-frame problem.
  const TemplateModel model = make_template_model(5);
  CounterRng rng(17);

  VecX<double> shape_true = 0.4 * rng.normal_matrix<double>(model.shape_dims, 1);
  std::vector<Points<double>> lmk, pts, nrm;
  std::vector<FrameParams> truth(2);
  for (int i = 0; i < 2; ++i) {
    truth[i].scale = 1.1;
    truth[i].rotation = Vec3<double>{0.1 * i, 0.05, -0.02};
    truth[i].translation = Vec3<double>{0.05, 0.1 * i, 0.0};
    truth[i].expr = 0.3 * rng.normal_matrix<double>(model.expr_dims, 1);
    lmk.push_back(template_landmarks(model, shape_true, truth[i]));
    const Points<double> v = template_vertices(model, shape_true, truth[i]);
    pts.push_back(v);
    Points<double> n(v.rows(), 3);
    for (Index j = 0; j < v.rows(); ++j)
      n.row(j) = v.row(j).normalized();
    nrm.push_back(n);
  }

  TemplateFitConfig config;
  config.iters = 1;  // single evaluation, gradients only
  const auto result = fit_template_sequence(model, lmk, pts, nrm, config);
  CHECK(std::isfinite(result.loss.total));
  CHECK(result.loss.geo ==
        doctest::Approx(0.1 * result.loss.point + 0.9 * result.loss.plane)
            .epsilon(1e-15));
}

TEST_CASE("template fit recovers synthetic parameters") {
  const TemplateModel model = make_template_model(21);
  CounterRng rng(23);

  const VecX<double> shape_true =
      0.5 * rng.normal_matrix<double>(model.shape_dims, 1);
  const int n_frames = 4;
  std::vector<Points<double>> lmk, pts, nrm;
  for (int i = 0; i < n_frames; ++i) {
    FrameParams f;
    f.scale = 1.15;
    f.rotation = Vec3<double>{0.2, -0.1, 0.15} +
                 0.05 * Vec3<double>{std::sin(0.5 * i), std::cos(0.4 * i), 0.0};
    f.translation =
        Vec3<double>{0.1, -0.05, 0.2} + 0.02 * i * Vec3<double>{1, 0, 0};
    f.expr = 0.4 * rng.normal_matrix<double>(model.expr_dims, 1);
    lmk.push_back(template_landmarks(model, shape_true, f));
    const Points<double> v = template_vertices(model, shape_true, f);
    pts.push_back(v);
    Points<double> n(v.rows(), 3);
    for (Index j = 0; j < v.rows(); ++j) n.row(j) = v.row(j).normalized();
    nrm.push_back(n);
  }

  TemplateFitConfig config;
  config.iters = 2500;
  const auto result = fit_template_sequence(model, lmk, pts, nrm, config);

  CHECK(result.landmark_residual <= 1e-3);
  const double shape_err =
      (result.shape - shape_true).norm() / shape_true.norm();
  CHECK(shape_err <= 0.10);
}

TEST_CASE("regularizers alone drive codes and translations to zero") {
  const TemplateModel model = make_template_model(31);
  CounterRng rng(33);
  std::vector<Points<double>> lmk, pts, nrm;
  FrameParams f;
  f.scale = 1.0;
  f.expr = VecX<double>::Zero(model.expr_dims);
  const VecX<double> shape0 = VecX<double>::Zero(model.shape_dims);
  for (int i = 0; i < 2; ++i) {
    lmk.push_back(template_landmarks(model, shape0, f));
    pts.push_back(Points<double>::Zero(0, 3));
    nrm.push_back(Points<double>::Zero(0, 3));
  }

  TemplateFitConfig config;
  config.lambda_lmk = 0.0;
  config.lambda_geo = 0.0;
  config.lambda_smooth = 0.0;
  config.lambda_reg = 1.0;
  config.iters = 1500;
  config.lr = 0.01;
  auto result = fit_template_sequence(model, lmk, pts, nrm, config);
  for (const auto& fr : result.frames) {
    CHECK(fr.expr.norm() < 0.05);
    CHECK(fr.translation.norm() < 0.05);
  }
  CHECK(result.shape.norm() < 0.05);
}

TEST_CASE("constant motion yields near-zero smoothness at the optimum") {
  const TemplateModel model = make_template_model(41);
  CounterRng rng(43);
  const VecX<double> shape_true =
      0.3 * rng.normal_matrix<double>(model.shape_dims, 1);
  FrameParams f;
  f.scale = 1.05;
  f.rotation = Vec3<double>{0.1, 0.05, -0.1};
  f.translation = Vec3<double>{0.02, 0.03, -0.01};
  f.expr = 0.3 * rng.normal_matrix<double>(model.expr_dims, 1);

  std::vector<Points<double>> lmk, pts, nrm;
  for (int i = 0; i < 3; ++i) {
    lmk.push_back(template_landmarks(model, shape_true, f));
    const Points<double> v = template_vertices(model, shape_true, f);
    pts.push_back(v);
    Points<double> n(v.rows(), 3);
    for (Index j = 0; j < v.rows(); ++j) n.row(j) = v.row(j).normalized();
    nrm.push_back(n);
  }

  TemplateFitConfig config;
  config.iters = 1500;
  const auto result = fit_template_sequence(model, lmk, pts, nrm, config);
  CHECK(result.loss.smooth < 1e-2);
}
