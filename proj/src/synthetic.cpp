#include "facetalk/synthetic.hpp"

#include <cmath>

#include "facetalk/rng.hpp"

namespace facetalk {
namespace synth {

Points<double> sample_surface_points(const field::HeadField& f,
                                     const VecX<double>& theta_id,
                                     const VecX<double>& theta_exp,
                                     Index count, uint64_t seed) {
  const field::BaseShape shape = field::decode_base_shape(theta_id);
  const Points<double> centers = field::effective_centers(f, theta_id);
  const MatX<double> coef = field::deformation_coefficients(f, theta_exp);

  CounterRng rng(CounterRng::mix(seed, /*stream=*/0x5u));
  Points<double> dirs(count, 3);
  for (Index i = 0; i < count; ++i) {
    Vec3<double> d{rng.normal(), rng.normal(), rng.normal()};
    dirs.row(i) = d.normalized().transpose();
  }

  auto composite = [&](const Points<double>& pts) {
    const MatX<double> b = field::rbf_activations(f, centers, pts);
    const Points<double> deformed = pts + b * coef;
    VecX<double> s(pts.rows());
    for (Index k = 0; k < pts.rows(); ++k)
      s[k] = field::base_sdf(shape, Vec3<double>(deformed.row(k).transpose()));
    return s;
  };

  VecX<double> lo = VecX<double>::Zero(count);
  VecX<double> hi = VecX<double>::Constant(count, 2.0);
  Points<double> probe(count, 3);
  for (int iter = 0; iter < 48; ++iter) {
    for (Index i = 0; i < count; ++i)
      probe.row(i) = field::kHeadCenter.transpose() +
                     0.5 * (lo[i] + hi[i]) * dirs.row(i);
    const VecX<double> s = composite(probe);
    for (Index i = 0; i < count; ++i) {
      if (s[i] < 0.0)
        lo[i] = 0.5 * (lo[i] + hi[i]);
      else
        hi[i] = 0.5 * (lo[i] + hi[i]);
    }
  }
  for (Index i = 0; i < count; ++i)
    probe.row(i) = field::kHeadCenter.transpose() +
                   0.5 * (lo[i] + hi[i]) * dirs.row(i);
  return probe;
}

VecX<double> observable_code(const field::HeadField& f, uint64_t seed,
                             double norm) {
  CounterRng rng(CounterRng::mix(seed, /*stream=*/0x0b5u));
  VecX<double> mix(f.weights.rows());
  for (Index i = 0; i < mix.size(); ++i) mix[i] = rng.normal();
  VecX<double> code = f.weights.transpose() * mix;
  code *= norm / code.norm();
  return code;
}

VecX<double> identifiable_code(const field::HeadField& f,
                               const VecX<double>& theta_id, uint64_t seed,
                               double norm) {
  const field::BaseShape shape = field::decode_base_shape(theta_id);
  const VecX<double> zero = VecX<double>::Zero(kExpressionDim);
  const Points<double> pts = sample_surface_points(
      f, theta_id, zero, 1200, CounterRng::mix(seed, 0x1dbu));

  // Rows of the linearized response: n(x)^T dDelta/dTheta at each sample.
  const Points<double> centers = field::effective_centers(f, theta_id);
  const MatX<double> b = field::rbf_activations(f, centers, pts);
  MatX<double> response(pts.rows(), kExpressionDim);
  for (Index i = 0; i < pts.rows(); ++i) {
    const Vec3<double> g =
        field::base_sdf_grad(shape, Vec3<double>(pts.row(i).transpose()));
    VecX<double> row = VecX<double>::Zero(kExpressionDim);
    for (Index k = 0; k < field::HeadField::kCenters; ++k)
      row += b(i, k) * (f.weights.middleRows(3 * k, 3).transpose() * g);
    response.row(i) = row.transpose();
  }

  Eigen::BDCSVD<MatX<double>> svd(response, Eigen::ComputeThinV);
  const VecX<double> sv = svd.singularValues();
  Index strong = 0;
  while (strong < sv.size() && sv[strong] >= 0.2 * sv[0]) ++strong;

  CounterRng rng(CounterRng::mix(seed, /*stream=*/0x1dcu));
  VecX<double> code = VecX<double>::Zero(kExpressionDim);
  for (Index k = 0; k < strong; ++k)
    code += rng.normal() * svd.matrixV().col(k);
  code *= norm / code.norm();
  return code;
}

MatX<double> scripted_trajectory(const field::HeadField& f, Index n_frames,
                                 uint64_t seed, double norm) {
  const VecX<double> a = observable_code(f, seed, norm);
  const VecX<double> b = observable_code(f, seed + 1, norm);
  MatX<double> codes(n_frames, kExpressionDim);
  for (Index i = 0; i < n_frames; ++i) {
    const double t = double(i) / kExpressionFps;
    const double u = 0.5 + 0.5 * std::sin(2.0 * M_PI * 1.3 * t);
    const double v = 0.5 + 0.5 * std::cos(2.0 * M_PI * 0.7 * t + 0.4);
    codes.row(i) = (u * a + v * b).transpose();
  }
  return codes;
}

std::vector<SyntheticRecord> make_paired_records(Index records, Index frames,
                                                 uint64_t seed) {
  if (records < 1 || frames < 1)
    throw ConfigError("synthetic dataset needs records and frames");

  // Shared envelope-to-code patterns across records.
  CounterRng rng(CounterRng::mix(seed, /*stream=*/0xc0deu));
  VecX<double> u1(kExpressionDim), u2(kExpressionDim);
  for (Index j = 0; j < kExpressionDim; ++j) {
    u1[j] = 0.8 * rng.normal();
    u2[j] = 0.5 * rng.normal();
  }

  std::vector<SyntheticRecord> out;
  for (Index r = 0; r < records; ++r) {
    SyntheticRecord rec;
    rec.id = "synthetic-" + std::to_string(r);

    const double env_hz = 1.2 + 0.45 * double(r);
    const double env2_hz = 0.5 + 0.2 * double(r);
    const double phase = 0.7 * double(r);
    // Both envelopes are audible: each modulates a carrier in its own mel
    // band, so the filterbank features determine the codes.
    const double carrier1 = 220.0 * (1.0 + 0.25 * double(r));
    const double carrier2 = 1400.0 * (1.0 + 0.2 * double(r));
    auto env1 = [&](double t) {
      return 0.5 + 0.5 * std::sin(2.0 * M_PI * env_hz * t + phase);
    };
    auto env2 = [&](double t) {
      return 0.5 + 0.5 * std::cos(2.0 * M_PI * env2_hz * t);
    };

    const Index samples =
        Index(std::lround(double(frames) / kExpressionFps * kAudioRate));
    rec.wav.samples.resize(samples);
    for (Index i = 0; i < samples; ++i) {
      const double t = double(i) / kAudioRate;
      rec.wav.samples[i] =
          0.3 * env1(t) * std::sin(2.0 * M_PI * carrier1 * t) +
          0.3 * env2(t) * std::sin(2.0 * M_PI * carrier2 * t);
    }

    rec.codes.resize(frames, kExpressionDim);
    for (Index i = 0; i < frames; ++i) {
      const double t = double(i) / kExpressionFps;
      rec.codes.row(i) =
          ((env1(t) - 0.5) * u1 + (env2(t) - 0.5) * u2).transpose();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace synth
}  // namespace facetalk
