#pragma once

#include <cmath>
#include <vector>

#include "facetalk/adam.hpp"
#include "facetalk/common.hpp"
#include "facetalk/headfield.hpp"
#include "facetalk/rng.hpp"

namespace facetalk {
namespace fitting {

using PointCloudFrame = Points<double>;

struct FitConfig {
  int iters = 500;
  int window = 10;
  int overlap = 2;
  double lr_initial = 0.001;  // iterations < lr_drop_iter
  double lr_late = 0.0001;
  int lr_drop_iter = 300;
  double lambda_sdf = 10.0;
  double lambda_temp = 0.1;
  double lambda_reg = 0.0025;
  double huber_delta = 1.0;
  Index sample_count = 5000;
  uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (iters < 1 || window < 1) throw ConfigError("iters and window >= 1");
    if (overlap < 0 || overlap >= window)
      throw ConfigError("overlap must be smaller than the window");
    if (lambda_sdf < 0 || lambda_temp < 0 || lambda_reg < 0)
      throw ConfigError("loss weights must be nonnegative");
    if (huber_delta <= 0) throw ConfigError("huber delta must be positive");
    if (sample_count < 1) throw ConfigError("sample count must be positive");
  }
};

// Uniform without-replacement subset, deterministic given the stream state.
inline Points<double> sample_points(const PointCloudFrame& frame, Index count,
                                    CounterRng& rng) {
  if (frame.rows() < count)
    throw InsufficientInputError(
        "point cloud has fewer points than the requested sample");
  std::vector<Index> order(frame.rows());
  for (Index i = 0; i < frame.rows(); ++i) order[i] = i;
  for (Index i = 0; i < count; ++i) {
    const Index j =
        i + Index(rng.uniform_index(uint64_t(frame.rows() - i)));
    std::swap(order[i], order[j]);
  }
  Points<double> out(count, 3);
  for (Index i = 0; i < count; ++i) out.row(i) = frame.row(order[i]);
  return out;
}

namespace detail {

inline double huber(double x, double delta) {
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}
inline double huber_grad(double x, double delta) {
  if (x > delta) return delta;
  if (x < -delta) return -delta;
  return x;
}

}  // namespace detail

struct WindowLoss {
  double sdf = 0.0;
  double temp = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

// lambda_sdf * sum_i mean_k |SDF(S_ik + delta(S_ik, theta_i))|
// + lambda_temp * sum_i huber(theta_{i+1} - theta_i)   (elementwise, summed)
// + lambda_reg * sum_i ||theta_i||_2
// The gradient is written per frame into grad (same shape as codes).
inline WindowLoss window_loss(const field::HeadField& f,
                              const VecX<double>& theta_id,
                              const MatX<double>& codes,
                              const std::vector<Points<double>>& samples,
                              const FitConfig& config,
                              MatX<double>* grad = nullptr) {
  const Index n = codes.rows();
  if (codes.cols() != kExpressionDim)
    throw DimensionError("expression codes must be 200-wide");
  if (Index(samples.size()) != n)
    throw DimensionError("one sample set per frame required");
  if (grad) grad->setZero();

  const field::BaseShape shape = field::decode_base_shape(theta_id);
  const Points<double> centers = field::effective_centers(f, theta_id);

  WindowLoss loss;
  std::vector<double> frame_sdf(n, 0.0);
  std::vector<VecX<double>> frame_grad(
      n, VecX<double>::Zero(grad ? kExpressionDim : 0));

  parallel_for(n, config.threads, [&](Index i) {
    const Points<double>& pts = samples[i];
    if (pts.rows() == 0) return;
    const MatX<double> b = field::rbf_activations(f, centers, pts);
    const MatX<double> coef =
        field::deformation_coefficients(f, VecX<double>(codes.row(i)));
    const Points<double> deformed = pts + b * coef;
    double acc = 0.0;
    MatX<double> q(grad ? pts.rows() : 0, 3);
    for (Index k = 0; k < pts.rows(); ++k) {
      const Vec3<double> p = deformed.row(k).transpose();
      const double s = field::base_sdf(shape, p);
      acc += std::abs(s);
      if (grad) {
        const double sgn = s > 0 ? 1.0 : (s < 0 ? -1.0 : 0.0);
        q.row(k) = (sgn / double(pts.rows())) *
                   field::base_sdf_grad(shape, p).transpose();
      }
    }
    frame_sdf[i] = acc / double(pts.rows());
    if (grad)
      frame_grad[i] = field::deformation_backprop_codes(f, b, q);
  });

  for (Index i = 0; i < n; ++i) {
    loss.sdf += frame_sdf[i];
    if (grad)
      grad->row(i) += config.lambda_sdf * frame_grad[i].transpose();
  }

  for (Index i = 0; i + 1 < n; ++i) {
    for (Index j = 0; j < kExpressionDim; ++j) {
      const double d = codes(i + 1, j) - codes(i, j);
      loss.temp += detail::huber(d, config.huber_delta);
      if (grad) {
        const double g =
            config.lambda_temp * detail::huber_grad(d, config.huber_delta);
        (*grad)(i + 1, j) += g;
        (*grad)(i, j) -= g;
      }
    }
  }

  for (Index i = 0; i < n; ++i) {
    const double nrm = codes.row(i).norm();
    loss.reg += nrm;
    if (grad && nrm > 0.0)
      grad->row(i) += config.lambda_reg / nrm * codes.row(i);
  }

  loss.total = config.lambda_sdf * loss.sdf + config.lambda_temp * loss.temp +
               config.lambda_reg * loss.reg;
  return loss;
}

struct WindowFitResult {
  MatX<double> codes;
  WindowLoss final_loss;
};

// Adam on the window codes with the per-iteration point resampling and the
// late step-size drop. Sampling streams are keyed by (seed, window, iter).
inline WindowFitResult fit_window(const field::HeadField& f,
                                  const VecX<double>& theta_id,
                                  const std::vector<PointCloudFrame>& frames,
                                  const MatX<double>& init_codes,
                                  const FitConfig& config,
                                  uint64_t window_index = 0) {
  config.validate();
  const Index n = Index(frames.size());
  require_same_shape("fit_window init", init_codes.rows(), init_codes.cols(),
                     n, kExpressionDim);

  MatX<double> codes = init_codes;
  MatX<double> grad(n, kExpressionDim);
  Adam<double> adam;
  adam.init({&codes});

  WindowLoss loss;
  for (int iter = 0; iter < config.iters; ++iter) {
    std::vector<Points<double>> samples(n);
    for (Index i = 0; i < n; ++i) {
      CounterRng rng(CounterRng::hash(
          CounterRng::mix(config.seed, window_index),
          uint64_t(iter) * 1000003ull + uint64_t(i)));
      samples[i] = frames[i].rows() <= config.sample_count
                       ? frames[i]
                       : sample_points(frames[i], config.sample_count, rng);
    }
    loss = window_loss(f, theta_id, codes, samples, config, &grad);
    if (!std::isfinite(loss.total))
      throw NumericalError("window fit diverged at iteration " +
                           std::to_string(iter));
    const double lr =
        iter < config.lr_drop_iter ? config.lr_initial : config.lr_late;
    const MatX<double>* gptr = &grad;
    adam.step({&codes}, {gptr}, lr);
  }
  return {codes, loss};
}

// Window start offsets: advance by (window - overlap), clamping the last
// window so coverage ends exactly at N.
inline std::vector<Index> window_starts(Index n_frames, int window,
                                        int overlap) {
  std::vector<Index> starts;
  if (n_frames <= window) return {0};
  const Index step = window - overlap;
  Index s = 0;
  while (true) {
    starts.push_back(s);
    if (s + window >= n_frames) break;
    s = std::min(s + step, n_frames - window);
  }
  return starts;
}

// Sliding-window optimization over the whole sequence. Frames entering a new
// window are initialized from the previous frame's result (the first window
// from zeros); overlapped frames take the later window's optimized values.
inline MatX<double> fit_sequence(const field::HeadField& f,
                                 const VecX<double>& theta_id,
                                 const std::vector<PointCloudFrame>& frames,
                                 const FitConfig& config) {
  config.validate();
  const Index n = Index(frames.size());
  if (n < 1) throw InsufficientInputError("no frames to fit");

  MatX<double> codes = MatX<double>::Zero(n, kExpressionDim);
  const auto starts = window_starts(n, config.window, config.overlap);

  Index initialized = 1;  // row 0 starts from zeros
  for (size_t w = 0; w < starts.size(); ++w) {
    const Index s = starts[w];
    const Index e = std::min<Index>(s + config.window, n);
    for (Index i = std::max(initialized, s + 1); i < e; ++i)
      codes.row(i) = codes.row(i - 1);
    initialized = std::max(initialized, e);

    std::vector<PointCloudFrame> window_frames(frames.begin() + s,
                                               frames.begin() + e);
    const auto result =
        fit_window(f, theta_id, window_frames,
                   MatX<double>(codes.middleRows(s, e - s)), config, w);
    codes.middleRows(s, e - s) = result.codes;
  }
  return codes;
}

}  // namespace fitting
}  // namespace facetalk
