#pragma once

#include <Eigen/SVD>
#include <array>
#include <cmath>
#include <tuple>
#include <vector>

#include "facetalk/adam.hpp"
#include "facetalk/common.hpp"
#include "facetalk/rng.hpp"

namespace facetalk {
namespace rigid {

struct CameraParams {
  Mat3<double> intrinsics = Mat3<double>::Identity();
  Mat3<double> rotation = Mat3<double>::Identity();  // camera to world
  Vec3<double> translation = Vec3<double>::Zero();

  void validate() const {
    const Mat3<double> rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3<double>::Identity()).cwiseAbs().maxCoeff() > 1e-8 ||
        std::abs(rotation.determinant() - 1.0) > 1e-8)
      throw ConfigError("extrinsic rotation must be orthonormal with det 1");
  }
};

struct DepthMap {
  MatX<double> depth;                                    // rows x cols
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
};

// Pixels pass iff masked on and depth in (0, 1.4). Pixel (u,v) maps through
// the inverse intrinsics to a ray scaled by depth, then to world coordinates;
// normals come from local depth tangents and rotate by R only.
inline std::pair<Points<double>, Points<double>> backproject(
    const DepthMap& map, const CameraParams& cam, double max_depth = 1.4) {
  if (map.depth.rows() != map.mask.rows() ||
      map.depth.cols() != map.mask.cols())
    throw DimensionError("depth map and mask must share resolution");
  cam.validate();
  const Mat3<double> kinv = cam.intrinsics.inverse();

  auto valid = [&](Index r, Index c) {
    return map.mask(r, c) && map.depth(r, c) > 0.0 &&
           map.depth(r, c) < max_depth;
  };
  auto cam_point = [&](Index r, Index c) -> Vec3<double> {
    // Pixel x = column, y = row.
    const Vec3<double> pix{double(c), double(r), 1.0};
    return map.depth(r, c) * (kinv * pix);
  };

  std::vector<Vec3<double>> pts, nrm;
  for (Index r = 0; r < map.depth.rows(); ++r)
    for (Index c = 0; c < map.depth.cols(); ++c) {
      if (!valid(r, c)) continue;
      const Vec3<double> p = cam_point(r, c);

      // Central differences where neighbors are valid, one-sided otherwise.
      const Index c0 = (c > 0 && valid(r, c - 1)) ? c - 1 : c;
      const Index c1 = (c + 1 < map.depth.cols() && valid(r, c + 1)) ? c + 1 : c;
      const Index r0 = (r > 0 && valid(r - 1, c)) ? r - 1 : r;
      const Index r1 = (r + 1 < map.depth.rows() && valid(r + 1, c)) ? r + 1 : r;
      Vec3<double> n{0.0, 0.0, -1.0};
      if (c1 > c0 && r1 > r0) {
        const Vec3<double> tu = cam_point(r, c1) - cam_point(r, c0);
        const Vec3<double> tv = cam_point(r1, c) - cam_point(r0, c);
        n = tu.cross(tv);
        if (n.norm() > 0) n.normalize();
        if (n.dot(p) > 0) n = -n;  // face the camera
      }
      pts.push_back(cam.rotation * p + cam.translation);
      nrm.push_back(cam.rotation * n);
    }

  Points<double> points(Index(pts.size()), 3), normals(Index(nrm.size()), 3);
  for (size_t i = 0; i < pts.size(); ++i) {
    points.row(Index(i)) = pts[i].transpose();
    normals.row(Index(i)) = nrm[i].transpose();
  }
  return {points, normals};
}

namespace detail {

struct AlignmentCore {
  Vec3<double> src_centroid, dst_centroid;
  Mat3<double> rotation;
  double src_variance = 0.0;
  double scale_numerator = 0.0;  // trace(D S) of the Umeyama closed form
};

inline AlignmentCore align_core(const Points<double>& src,
                                const Points<double>& dst) {
  if (src.rows() != dst.rows())
    throw DimensionError("point sets must have equal counts");
  if (src.rows() < 3)
    throw InsufficientInputError("alignment needs at least three points");

  AlignmentCore core;
  core.src_centroid = src.colwise().mean().transpose();
  core.dst_centroid = dst.colwise().mean().transpose();
  const Points<double> s = src.rowwise() - core.src_centroid.transpose();
  const Points<double> d = dst.rowwise() - core.dst_centroid.transpose();
  core.src_variance = s.squaredNorm() / double(src.rows());

  const Mat3<double> cov = d.transpose() * s / double(src.rows());
  Eigen::JacobiSVD<Mat3<double>> svd(cov,
                                     Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3<double> sing = svd.singularValues();
  if (sing[1] <= 1e-12 * std::max(sing[0], 1e-300))
    throw NumericalError("alignment rank error: points are collinear");

  Vec3<double> correction = Vec3<double>::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0)
    correction[2] = -1.0;
  core.rotation = svd.matrixU() * correction.asDiagonal() *
                  svd.matrixV().transpose();
  core.scale_numerator = (sing.array() * correction.array()).sum();
  return core;
}

}  // namespace detail

// Least-squares rigid transform (Kabsch): dst ~= R src + t.
inline std::pair<Mat3<double>, Vec3<double>> estimate_rigid(
    const Points<double>& src, const Points<double>& dst) {
  const auto core = detail::align_core(src, dst);
  const Vec3<double> t =
      core.dst_centroid - core.rotation * core.src_centroid;
  return {core.rotation, t};
}

// Umeyama closed form with isotropic scale: dst ~= s R src + t.
inline std::tuple<double, Mat3<double>, Vec3<double>> estimate_similarity(
    const Points<double>& src, const Points<double>& dst) {
  const auto core = detail::align_core(src, dst);
  if (core.src_variance <= 0.0)
    throw NumericalError("similarity scale error: source has zero variance");
  const double s = core.scale_numerator / core.src_variance;
  const Vec3<double> t =
      core.dst_centroid - s * (core.rotation * core.src_centroid);
  return {s, core.rotation, t};
}

// Keeps index i iff ||src_i - dst_i|| <= tau (inclusive).
inline std::vector<Index> filter_outliers(const Points<double>& src,
                                          const Points<double>& dst,
                                          double tau = 0.020) {
  if (src.rows() != dst.rows())
    throw DimensionError("outlier filter needs equal point counts");
  std::vector<Index> keep;
  for (Index i = 0; i < src.rows(); ++i)
    if ((src.row(i) - dst.row(i)).norm() <= tau) keep.push_back(i);
  return keep;
}

inline Points<double> select_rows(const Points<double>& pts,
                                  const std::vector<Index>& rows) {
  Points<double> out(Index(rows.size()), 3);
  for (size_t i = 0; i < rows.size(); ++i) out.row(Index(i)) = pts.row(rows[i]);
  return out;
}

// Rodrigues rotation from an axis-angle vector.
inline Mat3<double> rodrigues(const Vec3<double>& w) {
  const double theta = w.norm();
  Mat3<double> k;
  k << 0, -w[2], w[1], w[2], 0, -w[0], -w[1], w[0], 0;
  if (theta < 1e-12) return Mat3<double>::Identity() + k;
  const Mat3<double> kk = k * k;
  return Mat3<double>::Identity() + std::sin(theta) / theta * k +
         (1.0 - std::cos(theta)) / (theta * theta) * kk;
}

// d R / d w_i (Gallego & Yezzi closed form).
inline std::array<Mat3<double>, 3> rodrigues_jacobian(const Vec3<double>& w) {
  const double theta2 = w.squaredNorm();
  std::array<Mat3<double>, 3> jac;
  if (theta2 < 1e-16) {
    for (int i = 0; i < 3; ++i) {
      Vec3<double> e = Vec3<double>::Zero();
      e[i] = 1.0;
      Mat3<double> k;
      k << 0, -e[2], e[1], e[2], 0, -e[0], -e[1], e[0], 0;
      jac[i] = k;
    }
    return jac;
  }
  const Mat3<double> r = rodrigues(w);
  Mat3<double> wx;
  wx << 0, -w[2], w[1], w[2], 0, -w[0], -w[1], w[0], 0;
  const Mat3<double> eye_minus_r = Mat3<double>::Identity() - r;
  for (int i = 0; i < 3; ++i) {
    Vec3<double> e = Vec3<double>::Zero();
    e[i] = 1.0;
    const Vec3<double> v = w.cross(Vec3<double>(eye_minus_r * e));
    Mat3<double> vx;
    vx << 0, -v[2], v[1], v[2], 0, -v[0], -v[1], v[0], 0;
    jac[i] = (w[i] * wx + vx) / theta2 * r;
  }
  return jac;
}

inline Vec3<double> axis_angle_from_rotation(const Mat3<double>& r) {
  const double cos_theta =
      std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  if (theta < 1e-12) return Vec3<double>::Zero();
  Vec3<double> axis{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  axis *= 0.5 / std::sin(theta);
  return theta * axis;
}

// Seeded linear template: base vertices on a blobby sphere, dense shape and
// expression bases, and 68 distinct landmark vertices with the usual
// jaw/brow/nose/eye/mouth index layout.
struct TemplateModel {
  uint64_t seed = 0;
  Index vertex_count = 500;
  Index shape_dims = 20;
  Index expr_dims = 10;
  Points<double> base;        // V x 3
  MatX<double> shape_basis;   // 3V x d_s
  MatX<double> expr_basis;    // 3V x d_e
  std::vector<Index> landmark_vertices;  // 68 entries
};

inline TemplateModel make_template_model(uint64_t seed) {
  TemplateModel m;
  m.seed = seed;
  CounterRng rng(CounterRng::mix(seed, /*stream=*/0x7e17u));

  m.base.resize(m.vertex_count, 3);
  for (Index v = 0; v < m.vertex_count; ++v) {
    Vec3<double> dir{rng.normal(), rng.normal(), rng.normal()};
    dir.normalize();
    const double radius = 0.5 * (1.0 + 0.15 * rng.uniform(-1.0, 1.0));
    m.base.row(v) = (radius * dir).transpose();
  }
  m.shape_basis = 0.02 * rng.normal_matrix<double>(3 * m.vertex_count,
                                                   m.shape_dims);
  m.expr_basis = 0.015 * rng.normal_matrix<double>(3 * m.vertex_count,
                                                   m.expr_dims);

  // 68 distinct landmark vertices via a partial Fisher-Yates shuffle.
  std::vector<Index> order(m.vertex_count);
  for (Index i = 0; i < m.vertex_count; ++i) order[i] = i;
  for (Index i = 0; i < kLandmarkCount; ++i) {
    const Index j = i + Index(rng.uniform_index(uint64_t(m.vertex_count - i)));
    std::swap(order[i], order[j]);
  }
  m.landmark_vertices.assign(order.begin(), order.begin() + kLandmarkCount);
  return m;
}

// Landmark region weights on the standard 68-point layout.
struct RegionWeights {
  double mouth = 2.0;  // 48..67
  double jaw = 1.0;    // 0..16
  double eyes = 1.0;   // 36..47
  double other = 0.5;  // brows 17..26, nose 27..35

  double at(Index l) const {
    if (l >= 48) return mouth;
    if (l <= 16) return jaw;
    if (l >= 36) return eyes;
    return other;
  }
};

struct FrameParams {
  double scale = 1.0;
  Vec3<double> rotation = Vec3<double>::Zero();  // axis-angle
  Vec3<double> translation = Vec3<double>::Zero();
  VecX<double> expr;
};

// Rest-pose vertices for codes, then the per-frame similarity transform.
inline Points<double> template_vertices(const TemplateModel& m,
                                        const VecX<double>& shape,
                                        const FrameParams& f) {
  VecX<double> u(3 * m.vertex_count);
  for (Index v = 0; v < m.vertex_count; ++v)
    for (Index a = 0; a < 3; ++a) u[3 * v + a] = m.base(v, a);
  u += m.shape_basis * shape + m.expr_basis * f.expr;

  const Mat3<double> r = rodrigues(f.rotation);
  Points<double> out(m.vertex_count, 3);
  for (Index v = 0; v < m.vertex_count; ++v) {
    const Vec3<double> p{u[3 * v], u[3 * v + 1], u[3 * v + 2]};
    out.row(v) = (f.scale * (r * p) + f.translation).transpose();
  }
  return out;
}

inline Points<double> template_landmarks(const TemplateModel& m,
                                         const VecX<double>& shape,
                                         const FrameParams& f) {
  const Points<double> verts = template_vertices(m, shape, f);
  Points<double> lmk(kLandmarkCount, 3);
  for (Index l = 0; l < kLandmarkCount; ++l)
    lmk.row(l) = verts.row(m.landmark_vertices[l]);
  return lmk;
}

struct TemplateFitConfig {
  int iters = 2500;
  int refresh_every = 100;  // nearest-neighbor correspondence cadence
  double lr = 0.005;
  double lambda_lmk = 1.0;
  double lambda_geo = 1.0;
  double lambda_reg = 1e-3;
  double lambda_smooth = 0.1;
  double outlier_tau = 0.020;
  RegionWeights region;
  uint64_t seed = 0;
};

struct TemplateFitLoss {
  double lmk = 0.0, point = 0.0, plane = 0.0, geo = 0.0, reg = 0.0,
         smooth = 0.0, total = 0.0;
};

struct TemplateFitResult {
  VecX<double> shape;
  std::vector<FrameParams> frames;
  TemplateFitLoss loss;
  double landmark_residual = 0.0;  // mean Euclidean error per landmark
};

namespace detail {

// Gradient of ||v||_2 (zero at the origin).
inline VecX<double> l2norm_grad(const VecX<double>& v) {
  const double n = v.norm();
  if (n == 0.0) return VecX<double>::Zero(v.size());
  return v / n;
}

struct FrameData {
  Points<double> landmarks;  // 68 x 3
  Points<double> points;     // M x 3
  Points<double> normals;    // M x 3
};

struct FitWorkspace {
  // Per frame: index of the data point matched to each template vertex.
  std::vector<std::vector<Index>> matches;
};

inline void refresh_matches(const TemplateModel& model,
                            const VecX<double>& shape,
                            const std::vector<FrameParams>& frames,
                            const std::vector<FrameData>& data,
                            FitWorkspace& ws) {
  ws.matches.resize(frames.size());
  for (size_t i = 0; i < frames.size(); ++i) {
    const Points<double> verts = template_vertices(model, shape, frames[i]);
    auto& match = ws.matches[i];
    match.resize(model.vertex_count);
    for (Index v = 0; v < model.vertex_count; ++v) {
      Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Index p = 0; p < data[i].points.rows(); ++p) {
        const double d = (verts.row(v) - data[i].points.row(p)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = p;
        }
      }
      match[v] = best;
    }
  }
}

}  // namespace detail

// Joint optimization of the shared shape code and per-frame similarity +
// expression parameters with landmark, geometric (point and plane),
// regularization, and smoothness terms.
inline TemplateFitResult fit_template_sequence(
    const TemplateModel& model,
    const std::vector<Points<double>>& mv_landmarks,
    const std::vector<Points<double>>& mv_points,
    const std::vector<Points<double>>& mv_normals,
    const TemplateFitConfig& config) {
  const size_t n_frames = mv_landmarks.size();
  if (n_frames == 0) throw InsufficientInputError("no frames to fit");
  if (mv_points.size() != n_frames || mv_normals.size() != n_frames)
    throw DimensionError("landmarks, points, and normals must align");

  std::vector<detail::FrameData> data(n_frames);
  for (size_t i = 0; i < n_frames; ++i) {
    if (mv_landmarks[i].rows() != kLandmarkCount)
      throw DimensionError("each frame needs 68 landmarks");
    require_same_shape("points/normals", mv_points[i].rows(), 3,
                       mv_normals[i].rows(), 3);
    data[i] = {mv_landmarks[i], mv_points[i], mv_normals[i]};
  }

  // Initialization: rigid alignment of the neutral template landmarks,
  // outlier filtering at tau, then the similarity transform on the inliers.
  FrameParams neutral;
  neutral.expr = VecX<double>::Zero(model.expr_dims);
  const VecX<double> zero_shape = VecX<double>::Zero(model.shape_dims);
  const Points<double> base_lmk =
      template_landmarks(model, zero_shape, neutral);

  std::vector<FrameParams> frames(n_frames);
  for (size_t i = 0; i < n_frames; ++i) {
    auto [r0, t0] = estimate_rigid(base_lmk, data[i].landmarks);
    Points<double> moved = base_lmk;
    for (Index l = 0; l < kLandmarkCount; ++l)
      moved.row(l) = (r0 * base_lmk.row(l).transpose() + t0).transpose();
    const auto keep =
        filter_outliers(moved, data[i].landmarks, config.outlier_tau);
    FrameParams f;
    f.expr = VecX<double>::Zero(model.expr_dims);
    if (keep.size() >= 3) {
      const auto [s, r, t] = estimate_similarity(
          select_rows(base_lmk, keep), select_rows(data[i].landmarks, keep));
      f.scale = s;
      f.rotation = axis_angle_from_rotation(r);
      f.translation = t;
    } else {
      f.scale = 1.0;
      f.rotation = axis_angle_from_rotation(r0);
      f.translation = t0;
    }
    frames[i] = f;
  }

  // Flat parameter layout: [shape | per frame (s, w, t, expr)].
  const Index per_frame = 1 + 3 + 3 + model.expr_dims;
  const Index total = model.shape_dims + Index(n_frames) * per_frame;
  VecX<double> params(total);
  auto pack = [&](const VecX<double>& shape,
                  const std::vector<FrameParams>& fr) {
    params.head(model.shape_dims) = shape;
    for (size_t i = 0; i < n_frames; ++i) {
      Index at = model.shape_dims + Index(i) * per_frame;
      params[at] = fr[i].scale;
      params.segment(at + 1, 3) = fr[i].rotation;
      params.segment(at + 4, 3) = fr[i].translation;
      params.segment(at + 7, model.expr_dims) = fr[i].expr;
    }
  };
  auto unpack = [&](const VecX<double>& p, VecX<double>& shape,
                    std::vector<FrameParams>& fr) {
    shape = p.head(model.shape_dims);
    for (size_t i = 0; i < n_frames; ++i) {
      Index at = model.shape_dims + Index(i) * per_frame;
      fr[i].scale = p[at];
      fr[i].rotation = p.segment(at + 1, 3);
      fr[i].translation = p.segment(at + 4, 3);
      fr[i].expr = p.segment(at + 7, model.expr_dims);
    }
  };
  VecX<double> shape = zero_shape;
  pack(shape, frames);

  detail::FitWorkspace ws;

  // Loss and gradient at the current parameters using fixed correspondences.
  auto evaluate = [&](const VecX<double>& p, VecX<double>* grad,
                      TemplateFitLoss* out) {
    VecX<double> sh;
    std::vector<FrameParams> fr(n_frames);
    for (auto& f : fr) f.expr = VecX<double>::Zero(model.expr_dims);
    unpack(p, sh, fr);

    TemplateFitLoss loss;
    if (grad) grad->setZero();
    const double inv_n = 1.0 / double(n_frames);

    for (size_t i = 0; i < n_frames; ++i) {
      const Mat3<double> r = rodrigues(fr[i].rotation);
      const auto jac = rodrigues_jacobian(fr[i].rotation);

      VecX<double> u(3 * model.vertex_count);
      for (Index v = 0; v < model.vertex_count; ++v)
        for (Index a = 0; a < 3; ++a) u[3 * v + a] = model.base(v, a);
      u += model.shape_basis * sh + model.expr_basis * fr[i].expr;

      // Accumulators for the chain rule through V = s R u + t.
      VecX<double> du = VecX<double>::Zero(3 * model.vertex_count);
      Vec3<double> dt = Vec3<double>::Zero();
      double dscale = 0.0;
      Mat3<double> dR = Mat3<double>::Zero();

      auto accumulate = [&](Index v, const Vec3<double>& gvert) {
        const Vec3<double> uv{u[3 * v], u[3 * v + 1], u[3 * v + 2]};
        dt += gvert;
        dscale += gvert.dot(r * uv);
        dR += fr[i].scale * gvert * uv.transpose();
        const Vec3<double> gu = fr[i].scale * (r.transpose() * gvert);
        du.segment(3 * v, 3) += gu;
      };

      // Landmark term.
      for (Index l = 0; l < kLandmarkCount; ++l) {
        const Index v = model.landmark_vertices[l];
        const Vec3<double> uv{u[3 * v], u[3 * v + 1], u[3 * v + 2]};
        const Vec3<double> pred = fr[i].scale * (r * uv) + fr[i].translation;
        const Vec3<double> res =
            pred - data[i].landmarks.row(l).transpose();
        const double w = config.region.at(l);
        loss.lmk += inv_n * w * res.cwiseAbs().sum();
        if (grad) {
          const Vec3<double> g =
              config.lambda_lmk * inv_n * w *
              res.unaryExpr([](double x) {
                return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
              });
          accumulate(v, g);
        }
      }

      // Geometric terms with fixed nearest-neighbor correspondences.
      if (config.lambda_geo != 0.0 && data[i].points.rows() > 0) {
        const auto& match = ws.matches[i];
        for (Index v = 0; v < model.vertex_count; ++v) {
          const Vec3<double> uv{u[3 * v], u[3 * v + 1], u[3 * v + 2]};
          const Vec3<double> pred =
              fr[i].scale * (r * uv) + fr[i].translation;
          const Vec3<double> pm = data[i].points.row(match[v]).transpose();
          const Vec3<double> nm = data[i].normals.row(match[v]).transpose();
          const Vec3<double> res = pred - pm;
          loss.point += inv_n * res.cwiseAbs().sum();
          const double plane = res.dot(nm);
          loss.plane += inv_n * std::abs(plane);
          if (grad) {
            Vec3<double> g =
                config.lambda_geo * 0.1 * inv_n *
                res.unaryExpr([](double x) {
                  return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                });
            g += config.lambda_geo * 0.9 * inv_n *
                 (plane > 0.0 ? 1.0 : (plane < 0.0 ? -1.0 : 0.0)) * nm;
            accumulate(v, g);
          }
        }
      }

      // Write back the accumulated frame gradients.
      if (grad) {
        const Index at = model.shape_dims + Index(i) * per_frame;
        (*grad)[at] += dscale;
        for (int k = 0; k < 3; ++k)
          (*grad)[at + 1 + k] += (dR.array() * jac[k].array()).sum();
        grad->segment(at + 4, 3) += dt;
        grad->segment(at + 7, model.expr_dims) +=
            model.expr_basis.transpose() * du;
        grad->head(model.shape_dims) += model.shape_basis.transpose() * du;
      }
    }

    // Regularizers: shape once, expression and similarity per frame.
    loss.reg += sh.norm();
    if (grad)
      grad->head(model.shape_dims) +=
          config.lambda_reg * detail::l2norm_grad(sh);
    for (size_t i = 0; i < n_frames; ++i) {
      const Index at = model.shape_dims + Index(i) * per_frame;
      loss.reg += inv_n * (fr[i].rotation.norm() / (2.0 * M_PI) +
                           fr[i].translation.norm() + std::abs(fr[i].scale) +
                           fr[i].expr.norm());
      if (grad) {
        (*grad)[at] += config.lambda_reg * inv_n *
                       (fr[i].scale > 0 ? 1.0 : (fr[i].scale < 0 ? -1.0 : 0.0));
        grad->segment(at + 1, 3) +=
            config.lambda_reg * inv_n / (2.0 * M_PI) *
            detail::l2norm_grad(fr[i].rotation);
        grad->segment(at + 4, 3) +=
            config.lambda_reg * inv_n *
            detail::l2norm_grad(fr[i].translation);
        grad->segment(at + 7, model.expr_dims) +=
            config.lambda_reg * inv_n * detail::l2norm_grad(fr[i].expr);
      }
    }

    // Smoothness across consecutive frames.
    for (size_t i = 1; i < n_frames; ++i) {
      const Index at = model.shape_dims + Index(i) * per_frame;
      const Index prev = model.shape_dims + Index(i - 1) * per_frame;
      const VecX<double> de = fr[i].expr - fr[i - 1].expr;
      const Vec3<double> dw = fr[i].rotation - fr[i - 1].rotation;
      const Vec3<double> dtr = fr[i].translation - fr[i - 1].translation;
      loss.smooth +=
          inv_n * (de.norm() + dw.norm() / (2.0 * M_PI) + dtr.norm());
      if (grad) {
        const VecX<double> ge =
            config.lambda_smooth * inv_n * detail::l2norm_grad(de);
        grad->segment(at + 7, model.expr_dims) += ge;
        grad->segment(prev + 7, model.expr_dims) -= ge;
        const VecX<double> gw = config.lambda_smooth * inv_n /
                                (2.0 * M_PI) * detail::l2norm_grad(dw);
        grad->segment(at + 1, 3) += gw;
        grad->segment(prev + 1, 3) -= gw;
        const VecX<double> gt =
            config.lambda_smooth * inv_n * detail::l2norm_grad(dtr);
        grad->segment(at + 4, 3) += gt;
        grad->segment(prev + 4, 3) -= gt;
      }
    }

    loss.geo = 0.1 * loss.point + 0.9 * loss.plane;
    loss.total = config.lambda_lmk * loss.lmk + config.lambda_geo * loss.geo +
                 config.lambda_reg * loss.reg +
                 config.lambda_smooth * loss.smooth;
    if (out) *out = loss;
    return loss.total;
  };

  AdamVec adam(total);
  TemplateFitLoss loss;
  VecX<double> grad(total);
  for (int iter = 0; iter < config.iters; ++iter) {
    if (iter % config.refresh_every == 0) {
      VecX<double> sh;
      std::vector<FrameParams> fr(n_frames);
      for (auto& f : fr) f.expr = VecX<double>::Zero(model.expr_dims);
      unpack(params, sh, fr);
      detail::refresh_matches(model, sh, fr, data, ws);
    }
    const double value = evaluate(params, &grad, &loss);
    if (!std::isfinite(value))
      throw NumericalError("template fit diverged at iteration " +
                           std::to_string(iter));
    double lr = config.lr;
    if (iter >= config.iters * 17 / 20)
      lr = config.lr * 0.01;
    else if (iter >= config.iters / 2)
      lr = config.lr * 0.1;
    adam.step(params, grad, lr);
  }

  TemplateFitResult result;
  result.frames.resize(n_frames);
  for (auto& f : result.frames) f.expr = VecX<double>::Zero(model.expr_dims);
  unpack(params, result.shape, result.frames);
  evaluate(params, nullptr, &result.loss);

  double residual = 0.0;
  for (size_t i = 0; i < n_frames; ++i) {
    const Points<double> lmk =
        template_landmarks(model, result.shape, result.frames[i]);
    residual +=
        (lmk - data[i].landmarks).rowwise().norm().mean() / double(n_frames);
  }
  result.landmark_residual = residual;
  return result;
}

}  // namespace rigid
}  // namespace facetalk
