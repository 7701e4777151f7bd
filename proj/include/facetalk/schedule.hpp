#pragma once

#include <cmath>
#include <vector>

#include "facetalk/common.hpp"

namespace facetalk {
namespace diffusion {

// Cumulative signal coefficients of the forward process plus the per-step
// quantities derived from their ratios (deriving alpha_t from the ratios
// keeps the arrays consistent by construction).
struct NoiseSchedule {
  int steps = 0;                      // T
  std::vector<double> alpha_bar;      // size T+1, alpha_bar[0] == 1

  double alpha(int t) const { return alpha_bar[t] / alpha_bar[t - 1]; }
  double beta(int t) const { return 1.0 - alpha(t); }

  // Variance of the reverse-step posterior q(x_{t-1} | x_t, x_0); exactly 0
  // at t = 1 because alpha_bar[0] == 1.
  double posterior_variance(int t) const {
    return beta(t) * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
  }

  void check_step(int t) const {
    if (t < 0 || t > steps)
      throw ConfigError("timestep " + std::to_string(t) +
                        " outside schedule range [0, " +
                        std::to_string(steps) + "]");
  }
};

// alpha_bar[t] = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1+s)) * pi/2).
inline NoiseSchedule build_cosine_schedule(int steps, double offset = 0.008) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(offset > 0.0)) throw ConfigError("cosine schedule offset must be > 0");

  auto f = [&](double t) {
    const double arg =
        (t / steps + offset) / (1.0 + offset) * (M_PI / 2.0);
    const double c = std::cos(arg);
    return c * c;
  };

  NoiseSchedule sched;
  sched.steps = steps;
  sched.alpha_bar.resize(steps + 1);
  const double f0 = f(0.0);
  for (int t = 0; t <= steps; ++t) sched.alpha_bar[t] = f(double(t)) / f0;

  for (int t = 1; t <= steps; ++t) {
    if (!(sched.alpha_bar[t] < sched.alpha_bar[t - 1]))
      throw NumericalError("alpha_bar not strictly decreasing at t=" +
                           std::to_string(t));
    const double a = sched.alpha(t);
    if (!(a > 0.0 && a < 1.0))
      throw NumericalError("alpha_t outside (0,1) at t=" + std::to_string(t));
  }
  if (sched.alpha_bar[0] != 1.0)
    throw NumericalError("alpha_bar[0] must be exactly 1");
  if (!(sched.alpha_bar[steps] <= 1e-3))
    throw NumericalError("alpha_bar[T] must not exceed 1e-3");
  return sched;
}

template <typename S>
struct NoisySequence {
  MatX<S> values;
  int t = 0;
};

// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps
template <typename S>
NoisySequence<S> forward_noise(const MatX<S>& x0, int t, const MatX<S>& eps,
                               const NoiseSchedule& sched) {
  sched.check_step(t);
  require_same_shape("forward_noise", x0.rows(), x0.cols(), eps.rows(),
                     eps.cols());
  const S a = static_cast<S>(std::sqrt(sched.alpha_bar[t]));
  const S b = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar[t]));
  NoisySequence<S> out;
  out.values = a * x0 + b * eps;
  out.t = t;
  return out;
}

// Mean squared error over all entries.
template <typename S>
S diffusion_loss(const MatX<S>& x0, const MatX<S>& x0_hat) {
  require_same_shape("diffusion_loss", x0.rows(), x0.cols(), x0_hat.rows(),
                     x0_hat.cols());
  return (x0 - x0_hat).squaredNorm() / static_cast<S>(x0.size());
}

// Ancestral reverse step parameterized by the predicted clean sample:
//   mean = sqrt(ab_{t-1}) beta_t / (1-ab_t) * x0_hat
//        + sqrt(alpha_t) (1-ab_{t-1}) / (1-ab_t) * x_t
// with variance beta_t (1-ab_{t-1}) / (1-ab_t), zero at t = 1.
template <typename S>
NoisySequence<S> posterior_step(const NoisySequence<S>& xt,
                                const MatX<S>& x0_hat, const MatX<S>& noise,
                                const NoiseSchedule& sched) {
  const int t = xt.t;
  if (t < 1) throw ConfigError("posterior_step requires t >= 1");
  sched.check_step(t);
  require_same_shape("posterior_step", xt.values.rows(), xt.values.cols(),
                     x0_hat.rows(), x0_hat.cols());
  require_same_shape("posterior_step noise", xt.values.rows(),
                     xt.values.cols(), noise.rows(), noise.cols());

  NoisySequence<S> out;
  out.t = t - 1;
  if (t == 1) {
    // alpha_bar[0] = 1 collapses the mean onto x0_hat and the variance to 0.
    out.values = x0_hat;
    return out;
  }
  const double ab_t = sched.alpha_bar[t];
  const double ab_prev = sched.alpha_bar[t - 1];
  const double beta_t = sched.beta(t);
  const S coef_x0 =
      static_cast<S>(std::sqrt(ab_prev) * beta_t / (1.0 - ab_t));
  const S coef_xt = static_cast<S>(std::sqrt(sched.alpha(t)) *
                                   (1.0 - ab_prev) / (1.0 - ab_t));
  const S sigma = static_cast<S>(std::sqrt(sched.posterior_variance(t)));
  out.values = coef_x0 * x0_hat + coef_xt * xt.values + sigma * noise;
  return out;
}

}  // namespace diffusion
}  // namespace facetalk
