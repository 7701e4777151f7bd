#pragma once

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "facetalk/common.hpp"
#include "facetalk/rng.hpp"

namespace facetalk {
namespace field {

// Canonical space is [-1,1]^3, head roughly centered, mouth near
// (0, -0.35, 0.3). These anchors are shared by the base shape, the
// deformation basis, and the smoothing-kernel defaults.
inline const Vec3<double> kHeadCenter{0.0, 0.05, 0.0};
inline const Vec3<double> kMouthAnchor{0.0, -0.35, 0.3};
inline const Vec3<double> kNeckTop{0.0, -0.45, 0.0};
inline const Vec3<double> kDefaultRadii{0.55, 0.62, 0.58};

// Identity-code layout (1344 dims): entries 0..7 drive the analytic base
// shape, the remainder is inert ballast kept for interface compatibility.
//   [0..2] ellipsoid radii            (each in [0.2, 0.9])
//   [3]    neck capsule radius        (<= 0 disables the neck)
//   [4]    neck capsule length        (> 0 when neck enabled)
//   [5]    ellipsoid/neck blend width (>= 0; 0 = hard min)
//   [6..7] reserved
struct BaseShape {
  Vec3<double> radii;
  double neck_radius = 0.0;
  double neck_length = 0.0;
  double blend = 0.0;
  bool has_neck() const { return neck_radius > 0.0; }
};

inline BaseShape decode_base_shape(const VecX<double>& theta_id) {
  if (theta_id.size() != kIdentityDim)
    throw DimensionError("identity code must have 1344 entries");
  BaseShape b;
  b.radii = theta_id.head<3>();
  for (int a = 0; a < 3; ++a)
    if (!(b.radii[a] >= 0.2 && b.radii[a] <= 0.9))
      throw ConfigError("identity radii must lie in [0.2, 0.9]");
  b.neck_radius = theta_id[3];
  b.neck_length = theta_id[4];
  b.blend = std::max(0.0, theta_id[5]);
  if (b.has_neck() && !(b.neck_length > 0.0))
    throw ConfigError("neck length must be positive when the neck is enabled");
  return b;
}

inline VecX<double> default_identity() {
  VecX<double> id = VecX<double>::Zero(kIdentityDim);
  id[0] = kDefaultRadii[0];
  id[1] = kDefaultRadii[1];
  id[2] = kDefaultRadii[2];
  id[3] = 0.22;
  id[4] = 0.6;
  id[5] = 0.15;
  return id;
}

// Equal radii, no neck: the exact sphere |x - center| - r.
inline VecX<double> sphere_identity(double radius) {
  VecX<double> id = VecX<double>::Zero(kIdentityDim);
  id[0] = id[1] = id[2] = radius;
  id[3] = -1.0;
  return id;
}

namespace detail {

// Ellipsoid bound approximation s = k0 (k0 - 1) / k1; exact for equal radii.
inline double ellipsoid_sdf(const Vec3<double>& p, const Vec3<double>& radii) {
  const Vec3<double> q = p.cwiseQuotient(radii);
  const Vec3<double> u = p.cwiseQuotient(radii.cwiseProduct(radii));
  const double k0 = q.norm();
  const double k1 = u.norm();
  if (k1 < 1e-12) return -radii.minCoeff();  // at the center
  return k0 * (k0 - 1.0) / k1;
}

inline Vec3<double> ellipsoid_grad(const Vec3<double>& p,
                                   const Vec3<double>& radii) {
  const Vec3<double> q = p.cwiseQuotient(radii);
  const Vec3<double> u = p.cwiseQuotient(radii.cwiseProduct(radii));
  const double k0 = q.norm();
  const double k1 = u.norm();
  if (k0 < 1e-12 || k1 < 1e-12) return Vec3<double>::Zero();
  const Vec3<double> dk0 = q.cwiseQuotient(radii) / k0;
  const Vec3<double> dk1 =
      u.cwiseQuotient(radii.cwiseProduct(radii)) / k1;
  return ((2.0 * k0 - 1.0) / k1) * dk0 - (k0 * (k0 - 1.0) / (k1 * k1)) * dk1;
}

inline double capsule_sdf(const Vec3<double>& p, const Vec3<double>& a,
                          const Vec3<double>& b, double radius) {
  const Vec3<double> pa = p - a, ba = b - a;
  const double h =
      std::clamp(pa.dot(ba) / ba.squaredNorm(), 0.0, 1.0);
  return (pa - ba * h).norm() - radius;
}

inline Vec3<double> capsule_grad(const Vec3<double>& p, const Vec3<double>& a,
                                 const Vec3<double>& b) {
  const Vec3<double> pa = p - a, ba = b - a;
  const double h =
      std::clamp(pa.dot(ba) / ba.squaredNorm(), 0.0, 1.0);
  const Vec3<double> v = pa - ba * h;
  const double n = v.norm();
  if (n < 1e-12) return Vec3<double>::Zero();
  return v / n;  // v is orthogonal to ba when h is interior
}

// Polynomial smooth minimum; C^1 in both arguments for k > 0.
inline double smooth_min(double a, double b, double k) {
  if (k <= 0.0) return std::min(a, b);
  const double h = std::clamp(0.5 + 0.5 * (b - a) / k, 0.0, 1.0);
  return b + (a - b) * h - k * h * (1.0 - h);
}

// Partial derivatives (d/da, d/db) of smooth_min.
inline std::pair<double, double> smooth_min_partials(double a, double b,
                                                     double k) {
  if (k <= 0.0) return a <= b ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
  const double raw = 0.5 + 0.5 * (b - a) / k;
  if (raw <= 0.0) return {0.0, 1.0};
  if (raw >= 1.0) return {1.0, 0.0};
  const double h = raw;
  const double dh = 0.5 / k;  // dh/db = +dh, dh/da = -dh
  const double ds_dh = (a - b) - k * (1.0 - 2.0 * h);
  return {h - ds_dh * dh, (1.0 - h) + ds_dh * dh};
}

}  // namespace detail

inline double base_sdf(const BaseShape& shape, const Vec3<double>& p) {
  const double se = detail::ellipsoid_sdf(p - kHeadCenter, shape.radii);
  if (!shape.has_neck()) return se;
  const Vec3<double> bottom = kNeckTop - Vec3<double>{0, shape.neck_length, 0};
  const double sc = detail::capsule_sdf(p, kNeckTop, bottom, shape.neck_radius);
  return detail::smooth_min(se, sc, shape.blend);
}

inline Vec3<double> base_sdf_grad(const BaseShape& shape,
                                  const Vec3<double>& p) {
  const Vec3<double> ge = detail::ellipsoid_grad(p - kHeadCenter, shape.radii);
  if (!shape.has_neck()) return ge;
  const double se = detail::ellipsoid_sdf(p - kHeadCenter, shape.radii);
  const Vec3<double> bottom = kNeckTop - Vec3<double>{0, shape.neck_length, 0};
  const double sc = detail::capsule_sdf(p, kNeckTop, bottom, shape.neck_radius);
  const Vec3<double> gc = detail::capsule_grad(p, kNeckTop, bottom);
  const auto [da, db] = detail::smooth_min_partials(se, sc, shape.blend);
  return da * ge + db * gc;
}

// Deterministic stand-in for the expression deformation decoder: 16 Gaussian
// radial basis functions clustered near the mouth drive a fixed seeded linear
// map from 200-dim codes to per-point displacements. The map is scaled at
// construction so that |delta| <= 0.1 for any unit-norm code.
struct HeadField {
  uint64_t seed = 0;
  Points<double> centers;  // 16 x 3, canonical space
  double rbf_sigma = 0.09;
  MatX<double> weights;    // 48 x 200, row (k*3 + axis)

  static constexpr Index kCenters = 16;
};

inline HeadField make_head_field(uint64_t seed) {
  HeadField f;
  f.seed = seed;
  CounterRng rng(CounterRng::mix(seed, /*stream=*/0x4656u));
  f.centers.resize(HeadField::kCenters, 3);
  const Vec3<double> spread{0.38, 0.3, 0.22};
  const BaseShape base = decode_base_shape(default_identity());
  const double min_separation = 1.55 * f.rbf_sigma;
  for (Index k = 0; k < HeadField::kCenters; ++k) {
    Vec3<double> c;
    for (int attempt = 0; attempt < 200; ++attempt) {
      for (int a = 0; a < 3; ++a)
        c[a] = kMouthAnchor[a] + spread[a] * rng.uniform(-1.0, 1.0);
      // Newton-project onto the base surface so every center couples
      // strongly to the zero set it deforms.
      for (int it = 0; it < 12; ++it) {
        const double s = base_sdf(base, c);
        const Vec3<double> g = base_sdf_grad(base, c);
        const double g2 = g.squaredNorm();
        if (g2 < 1e-12) break;
        c -= (s / g2) * g;
      }
      // Keep the centers separated so each carries an independent
      // deformation direction.
      bool spaced = true;
      for (Index prev = 0; prev < k && spaced; ++prev)
        if ((c - f.centers.row(prev).transpose()).norm() < min_separation)
          spaced = false;
      if (spaced) break;
    }
    f.centers.row(k) = c.transpose();
  }

  // Each center displaces along the base-surface normal at its location
  // (skin moves mostly normal to itself): rows 3k..3k+2 of W are
  // n(c_k) * w_k^T, so deformations stay exactly linear in the code and
  // every code direction with a deformation response produces first-order
  // normal motion. The code rows w_k carry equal-magnitude random signs on
  // disjoint coordinate blocks; coordinate-wise optimizers then move exactly
  // within the subspace the field can express, which keeps fitted codes
  // recoverable from the zero set.
  {
    f.weights = MatX<double>::Zero(3 * HeadField::kCenters, kExpressionDim);
    const Index base_len = kExpressionDim / HeadField::kCenters;
    const Index remainder = kExpressionDim % HeadField::kCenters;
    Index at = 0;
    for (Index k = 0; k < HeadField::kCenters; ++k) {
      const Vec3<double> n =
          base_sdf_grad(base, Vec3<double>(f.centers.row(k).transpose()))
              .normalized();
      const Index len = base_len + (k < remainder ? 1 : 0);
      const double mag = 1.0 / std::sqrt(double(len));
      for (Index j = at; j < at + len; ++j) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        for (int a = 0; a < 3; ++a)
          f.weights(3 * k + a, j) = n[a] * sign * mag;
      }
      at += len;
    }
  }

  // The displacement at x for a unit code is bounded by the operator norm of
  // M(x) = sum_k B_k(x) W_k. Probe its largest singular value on a grid (via
  // the 3x3 Gram of M) and scale so sup ||delta|| stays below 0.1.
  std::vector<Mat3<double>> gram(HeadField::kCenters * HeadField::kCenters);
  for (Index k = 0; k < HeadField::kCenters; ++k)
    for (Index l = 0; l < HeadField::kCenters; ++l)
      gram[k * HeadField::kCenters + l] =
          f.weights.middleRows(3 * k, 3) *
          f.weights.middleRows(3 * l, 3).transpose();

  // B is negligible beyond ~4 sigma of every center, so probing the padded
  // center bounding box covers the global maximum.
  const Vec3<double> pad = Vec3<double>::Constant(4.0 * f.rbf_sigma);
  const Vec3<double> lo = f.centers.colwise().minCoeff().transpose() - pad;
  const Vec3<double> hi = f.centers.colwise().maxCoeff().transpose() + pad;
  double max_sigma2 = 0.0;
  const int res = 33;
  VecX<double> b(HeadField::kCenters);
  for (int ix = 0; ix < res; ++ix)
    for (int iy = 0; iy < res; ++iy)
      for (int iz = 0; iz < res; ++iz) {
        const Vec3<double> x{lo[0] + (hi[0] - lo[0]) * ix / (res - 1),
                             lo[1] + (hi[1] - lo[1]) * iy / (res - 1),
                             lo[2] + (hi[2] - lo[2]) * iz / (res - 1)};
        for (Index k = 0; k < HeadField::kCenters; ++k)
          b[k] = std::exp(-(x - f.centers.row(k).transpose()).squaredNorm() /
                          (2.0 * f.rbf_sigma * f.rbf_sigma));
        Mat3<double> g = Mat3<double>::Zero();
        for (Index k = 0; k < HeadField::kCenters; ++k)
          for (Index l = 0; l < HeadField::kCenters; ++l)
            g += b[k] * b[l] * gram[k * HeadField::kCenters + l];
        const Eigen::SelfAdjointEigenSolver<Mat3<double>> eig(g);
        max_sigma2 = std::max(max_sigma2, eig.eigenvalues().maxCoeff());
      }
  f.weights *= 0.1 * 0.95 / std::sqrt(max_sigma2);
  return f;
}

// RBF centers scale with the head radii so the deformation decoder consumes
// the identity code as well as the expression code.
inline Points<double> effective_centers(const HeadField& f,
                                        const VecX<double>& theta_id) {
  const BaseShape shape = decode_base_shape(theta_id);
  Points<double> c = f.centers;
  for (int a = 0; a < 3; ++a)
    c.col(a) *= shape.radii[a] / kDefaultRadii[a];
  return c;
}

// B(x): one row of 16 Gaussian activations per query point.
inline MatX<double> rbf_activations(const HeadField& f,
                                    const Points<double>& centers,
                                    const Points<double>& pts) {
  MatX<double> b(pts.rows(), HeadField::kCenters);
  const double inv = 1.0 / (2.0 * f.rbf_sigma * f.rbf_sigma);
  for (Index k = 0; k < HeadField::kCenters; ++k) {
    b.col(k) = (-(pts.rowwise() - centers.row(k)).rowwise().squaredNorm() *
                inv).array().exp();
  }
  return b;
}

// Z = reshape(W theta, 16 x 3); delta = B Z. Exactly linear in theta_exp.
inline MatX<double> deformation_coefficients(const HeadField& f,
                                             const VecX<double>& theta_exp) {
  if (theta_exp.size() != kExpressionDim)
    throw DimensionError("expression code must have 200 entries");
  const VecX<double> z = f.weights * theta_exp;  // 48
  MatX<double> zmat(HeadField::kCenters, 3);
  for (Index k = 0; k < HeadField::kCenters; ++k)
    for (int a = 0; a < 3; ++a) zmat(k, a) = z[3 * k + a];
  return zmat;
}

inline Points<double> expression_deformation_batch(
    const HeadField& f, const Points<double>& pts,
    const VecX<double>& theta_id, const VecX<double>& theta_exp) {
  const Points<double> centers = effective_centers(f, theta_id);
  const MatX<double> b = rbf_activations(f, centers, pts);
  return b * deformation_coefficients(f, theta_exp);
}

inline Vec3<double> expression_deformation(const HeadField& f,
                                           const Vec3<double>& x,
                                           const VecX<double>& theta_id,
                                           const VecX<double>& theta_exp) {
  Points<double> pts(1, 3);
  pts.row(0) = x.transpose();
  return expression_deformation_batch(f, pts, theta_id, theta_exp)
      .row(0)
      .transpose();
}

// Given the activations B (P x 16) and upstream gradients Q (P x 3) w.r.t.
// the per-point displacement, returns the gradient w.r.t. theta_exp.
inline VecX<double> deformation_backprop_codes(const HeadField& f,
                                               const MatX<double>& b,
                                               const MatX<double>& q) {
  const MatX<double> u = b.transpose() * q;  // 16 x 3
  VecX<double> uvec(3 * HeadField::kCenters);
  for (Index k = 0; k < HeadField::kCenters; ++k)
    for (int a = 0; a < 3; ++a) uvec[3 * k + a] = u(k, a);
  return f.weights.transpose() * uvec;
}

inline double identity_sdf(const HeadField& f, const Vec3<double>& x,
                           const VecX<double>& theta_id,
                           const VecX<double>& theta_exp) {
  const BaseShape shape = decode_base_shape(theta_id);
  const Vec3<double> delta =
      expression_deformation(f, x, theta_id, theta_exp);
  return base_sdf(shape, x + delta);
}

// Gaussian facial smoothing kernel: anisotropic distance to the control
// center, Gaussian-weighted, then min-max normalized over the point set.
struct SmoothingKernel {
  Vec3<double> center = kMouthAnchor;
  Vec3<double> sigma{0.35, 0.35, 0.35};
};

inline VecX<double> smoothing_weights(const SmoothingKernel& kernel,
                                      const Points<double>& pts) {
  for (int a = 0; a < 3; ++a)
    if (!(kernel.sigma[a] > 0.0))
      throw ConfigError("smoothing sigma must be positive");
  if (pts.rows() < 2)
    throw InsufficientInputError(
        "smoothing weights need at least two points");

  const double norm = 1.0 / (2.0 * M_PI * kernel.sigma[0] * kernel.sigma[1] *
                             kernel.sigma[2]);
  VecX<double> w(pts.rows());
  for (Index i = 0; i < pts.rows(); ++i) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double u = (pts(i, a) - kernel.center[a]) / kernel.sigma[a];
      d2 += u * u;
    }
    w[i] = norm * std::exp(-0.5 * d2);
  }
  const double lo = w.minCoeff();
  const double hi = w.maxCoeff();
  if (!(hi > lo))
    throw DegenerateInputError(
        "smoothing weights degenerate: all points equidistant from center");
  return (w.array() - lo) / (hi - lo);
}

inline Points<double> smooth_deformations(const Points<double>& delta,
                                          const VecX<double>& weights) {
  if (delta.rows() != weights.size())
    throw DimensionError("smooth_deformations: row count mismatch");
  return delta.array().colwise() * weights.array();
}

}  // namespace field
}  // namespace facetalk
