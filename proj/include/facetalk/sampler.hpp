#pragma once

#include <vector>

#include "facetalk/common.hpp"
#include "facetalk/condstream.hpp"
#include "facetalk/denoiser.hpp"
#include "facetalk/headfield.hpp"
#include "facetalk/mesher.hpp"
#include "facetalk/rng.hpp"
#include "facetalk/schedule.hpp"

namespace facetalk {
namespace sampling {

struct SampleConfig {
  double guidance = 1.0;  // w
  uint64_t seed = 0;
};

// w * x_c + (1 - w) * x_u, with the w = 1 and w = 0 identities exact.
template <typename S>
MatX<S> cfg_combine(const MatX<S>& x_c, const MatX<S>& x_u, double w) {
  require_same_shape("cfg_combine", x_c.rows(), x_c.cols(), x_u.rows(),
                     x_u.cols());
  if (w == 1.0) return x_c;
  if (w == 0.0) return x_u;
  return static_cast<S>(w) * x_c + static_cast<S>(1.0 - w) * x_u;
}

// Ancestral reverse diffusion with classifier-free guidance. The starting
// noise and every per-step noise come from counter streams keyed by
// (seed, T+1) and (seed, t), so identical seeds give identical trajectories.
// With w exactly 1 (or 0) the unused branch is skipped; force_both_branches
// evaluates both regardless, which must not change the result.
template <typename S>
MatX<S> sample(const model::DenoiserParams<S>& params,
               const audio::ConditioningStream<S>& cond,
               const SampleConfig& config,
               const diffusion::NoiseSchedule& sched,
               bool force_both_branches = false) {
  const Index n = cond.size();
  if (n < 1) throw DimensionError("conditioning must have frames");
  const double w = config.guidance;

  const auto null_cond =
      audio::null_stream<S>(n, VecX<S>(params.null_token_vec()));

  diffusion::NoisySequence<S> x;
  {
    CounterRng rng(CounterRng::mix(config.seed, uint64_t(sched.steps) + 1));
    x.values = rng.normal_matrix<S>(n, params.config.in_dim);
    x.t = sched.steps;
  }

  for (int t = sched.steps; t >= 1; --t) {
    MatX<S> x0_hat;
    const bool need_cond = force_both_branches || w != 0.0;
    const bool need_uncond = force_both_branches || w != 1.0;
    MatX<S> x0_c, x0_u;
    if (need_cond) x0_c = model::forward(params, x.values, cond, t);
    if (need_uncond) x0_u = model::forward(params, x.values, null_cond, t);
    if (!need_uncond)
      x0_hat = x0_c;
    else if (!need_cond)
      x0_hat = x0_u;
    else
      x0_hat = cfg_combine(x0_c, x0_u, w);

    CounterRng rng(CounterRng::mix(config.seed, uint64_t(t)));
    const MatX<S> noise = rng.normal_matrix<S>(n, params.config.in_dim);
    x = diffusion::posterior_step(x, x0_hat, noise, sched);
  }
  return x.values;
}

struct HeadGeneration {
  MatX<double> codes;  // N x 200
  std::vector<meshing::MeshBuffer> meshes;
};

// Full sequence generation: sample expression codes, then per frame evaluate
// the smoothed deformation field on the grid and extract the isosurface.
template <typename S>
HeadGeneration generate_heads(const model::DenoiserParams<S>& params,
                              const audio::ConditioningStream<S>& cond,
                              const SampleConfig& config,
                              const diffusion::NoiseSchedule& sched,
                              const field::HeadField& f,
                              const VecX<double>& theta_id,
                              const meshing::GridSpec& grid,
                              const field::SmoothingKernel* kernel = nullptr,
                              int threads = 1) {
  grid.validate();
  HeadGeneration out;
  out.codes = sample(params, cond, config, sched).template cast<double>();

  VecX<double> weights;
  if (kernel) weights = meshing::grid_smoothing_weights(*kernel, grid);

  out.meshes.resize(out.codes.rows());
  for (Index i = 0; i < out.codes.rows(); ++i) {
    const auto scalar =
        meshing::evaluate_grid(f, theta_id, VecX<double>(out.codes.row(i)),
                               grid, kernel ? &weights : nullptr, threads);
    out.meshes[size_t(i)] = meshing::marching_cubes(scalar);
  }
  return out;
}

}  // namespace sampling
}  // namespace facetalk
