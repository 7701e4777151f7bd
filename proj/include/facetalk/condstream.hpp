#pragma once

#include <cmath>
#include <vector>

#include "facetalk/common.hpp"

namespace facetalk {
namespace audio {

struct Waveform {
  VecX<double> samples;  // mono, [-1, 1]
  int rate = kAudioRate;
};

enum class StreamKind { kAudio, kLandmark, kNull };

template <typename S>
struct ConditioningStream {
  MatX<S> frames;  // N x d_c at 24 fps
  StreamKind kind = StreamKind::kAudio;

  Index size() const { return frames.rows(); }
  Index width() const { return frames.cols(); }
};

// Scales by 10^(db/20) and hard-clamps to [-1, 1].
inline Waveform apply_gain_db(const Waveform& wav, double db) {
  if (!std::isfinite(db)) throw ConfigError("gain must be finite");
  Waveform out;
  out.rate = wav.rate;
  const double g = std::pow(10.0, db / 20.0);
  out.samples = (wav.samples * g).cwiseMax(-1.0).cwiseMin(1.0);
  return out;
}

namespace detail {

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace detail

// Deterministic log-mel filterbank featurizer: Hann-windowed magnitude DFT
// per frame, triangular mel band energies, log with floor 1e-10.
// One row per frame, frame count floor((len - window)/hop) + 1.
inline MatX<double> extract_filterbank(const Waveform& wav,
                                       double window_sec = 0.025,
                                       double hop_sec = 0.020,
                                       int bands = 40) {
  if (wav.rate != kAudioRate)
    throw FormatError("waveform must be sampled at 16000 Hz");
  const Index window = static_cast<Index>(std::lround(window_sec * wav.rate));
  const Index hop = static_cast<Index>(std::lround(hop_sec * wav.rate));
  const Index len = wav.samples.size();
  if (len < window)
    throw InsufficientInputError("waveform shorter than one analysis window");

  const Index frames = (len - window) / hop + 1;
  const Index bins = window / 2 + 1;

  VecX<double> hann(window);
  for (Index n = 0; n < window; ++n)
    hann[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / (window - 1));

  // DFT basis, computed once.
  MatX<double> cos_t(bins, window), sin_t(bins, window);
  for (Index k = 0; k < bins; ++k)
    for (Index n = 0; n < window; ++n) {
      const double phase = 2.0 * M_PI * k * n / window;
      cos_t(k, n) = std::cos(phase);
      sin_t(k, n) = std::sin(phase);
    }

  // Triangular mel filters with unit peak; band m spans mel edges [m, m+2].
  const double mel_max = detail::hz_to_mel(wav.rate / 2.0);
  VecX<double> edges(bands + 2);
  for (int m = 0; m < bands + 2; ++m)
    edges[m] = detail::mel_to_hz(mel_max * m / (bands + 1));
  MatX<double> mel(bands, bins);
  mel.setZero();
  const double bin_hz = static_cast<double>(wav.rate) / window;
  for (int m = 0; m < bands; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    for (Index k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      if (f > f0 && f < f1)
        mel(m, k) = (f - f0) / (f1 - f0);
      else if (f >= f1 && f < f2)
        mel(m, k) = (f2 - f) / (f2 - f1);
    }
  }

  MatX<double> features(frames, bands);
  VecX<double> frame(window), mag(bins);
  for (Index i = 0; i < frames; ++i) {
    frame = wav.samples.segment(i * hop, window).cwiseProduct(hann);
    const VecX<double> re = cos_t * frame;
    const VecX<double> im = sin_t * frame;
    mag = (re.array().square() + im.array().square()).sqrt();
    const VecX<double> energy = mel * mag;
    for (int m = 0; m < bands; ++m)
      features(i, m) = std::log(std::max(energy[m], 1e-10));
  }
  return features;
}

// Frequency interpolation onto the expression frame rate: row i of the input
// sits at time i / f_src, outputs are queried at j / f_e for
// N = round(duration * f_e) with duration = rows / f_src. Endpoints clamp.
template <typename S>
MatX<S> resample_to_fps(const MatX<S>& features, double f_src,
                        double f_e = kExpressionFps) {
  if (features.rows() < 2)
    throw InsufficientInputError("resampling needs at least two frames");
  if (!(f_src > 0.0) || !(f_e > 0.0))
    throw ConfigError("frame rates must be positive");
  const double duration = features.rows() / f_src;
  const Index n = std::max<Index>(1, std::lround(duration * f_e));
  MatX<S> out(n, features.cols());
  const Index last = features.rows() - 1;
  for (Index j = 0; j < n; ++j) {
    double p = (j / f_e) * f_src;
    p = std::min(std::max(p, 0.0), static_cast<double>(last));
    const Index lo = static_cast<Index>(p);
    if (lo == last) {
      out.row(j) = features.row(last);
    } else {
      const S frac = static_cast<S>(p - lo);
      out.row(j) =
          (S(1) - frac) * features.row(lo) + frac * features.row(lo + 1);
    }
  }
  return out;
}

// Every row is the (learnable) null token phi.
template <typename S>
ConditioningStream<S> null_stream(Index n, const VecX<S>& phi) {
  if (n < 1) throw ConfigError("null stream needs at least one frame");
  ConditioningStream<S> s;
  s.kind = StreamKind::kNull;
  s.frames = phi.transpose().replicate(n, 1);
  return s;
}

// Flattens per-frame 68x3 landmarks row-major into 204-wide rows.
template <typename S>
ConditioningStream<S> landmark_stream(
    const std::vector<Points<S>>& landmarks) {
  ConditioningStream<S> s;
  s.kind = StreamKind::kLandmark;
  s.frames.resize(static_cast<Index>(landmarks.size()), 3 * kLandmarkCount);
  for (size_t i = 0; i < landmarks.size(); ++i) {
    if (landmarks[i].rows() != kLandmarkCount)
      throw DimensionError("landmark frame must have 68 rows");
    for (Index l = 0; l < kLandmarkCount; ++l)
      for (Index a = 0; a < 3; ++a)
        s.frames(static_cast<Index>(i), l * 3 + a) = landmarks[i](l, a);
  }
  return s;
}

// Full audio conditioning path: filterbank then frequency interpolation.
template <typename S>
ConditioningStream<S> audio_stream(const Waveform& wav) {
  const MatX<double> fb = extract_filterbank(wav);
  const double f_src = 50.0;  // 1 / hop_sec
  const MatX<double> frames = resample_to_fps(fb, f_src);
  ConditioningStream<S> s;
  s.kind = StreamKind::kAudio;
  s.frames = frames.template cast<S>();
  return s;
}

}  // namespace audio
}  // namespace facetalk
