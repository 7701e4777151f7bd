#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "facetalk/adam.hpp"
#include "facetalk/common.hpp"
#include "facetalk/condstream.hpp"
#include "facetalk/denoiser.hpp"
#include "facetalk/rng.hpp"
#include "facetalk/schedule.hpp"

namespace facetalk {
namespace training {

struct TrainConfig {
  Index clip_frames = 48;  // 2 s at 24 fps
  double cfg_drop_prob = 0.25;
  double aug_lo = 0.7;
  double aug_hi = 1.3;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int steps = 1000;
  int batch_size = 16;
  uint64_t seed = 0;
  bool sorted_loss_reduction = false;

  void validate() const {
    if (clip_frames < 1) throw ConfigError("clip_frames must be positive");
    if (cfg_drop_prob < 0.0 || cfg_drop_prob > 1.0)
      throw ConfigError("cfg_drop_prob must lie in [0,1]");
    if (!(aug_lo > 0.0) || aug_lo > aug_hi)
      throw ConfigError("augmentation bounds need 0 < a <= b");
    if (steps < 1 || batch_size < 1)
      throw ConfigError("steps and batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  }
};

template <typename S>
struct PairedRecord {
  std::string id;
  MatX<S> codes;                      // N x 200 at 24 fps
  audio::ConditioningStream<S> cond;  // N x d_c, cached featurization
};

template <typename S>
struct PairedDataset {
  std::vector<PairedRecord<S>> records;
  std::vector<size_t> eligible;   // records long enough for a clip
  int short_record_warnings = 0;  // skipped-with-warning count

  void prepare(Index clip_frames) {
    eligible.clear();
    short_record_warnings = 0;
    for (size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.cond.size() != r.codes.rows())
        throw DataError("record " + r.id +
                        ": conditioning length does not match sequence");
      if (r.codes.rows() < clip_frames) {
        ++short_record_warnings;
        continue;
      }
      eligible.push_back(i);
    }
    if (eligible.empty())
      throw DataError("no record is long enough for a training clip");
  }
};

// Uniform magnitude augmentation: every code scaled by r.
template <typename S>
MatX<S> augment_expressions(const MatX<S>& seq, double r) {
  if (!(r > 0.0)) throw ConfigError("augmentation factor must be positive");
  return seq * static_cast<S>(r);
}

template <typename S>
struct BatchItem {
  MatX<S> x0;     // augmented clip
  MatX<S> noisy;  // forward-noised clip
  audio::ConditioningStream<S> cond;
  int t = 0;
  size_t record = 0;
};

// Per item: random clip window, uniform magnitude augmentation, uniform
// timestep, forward noising, and null-conditioning dropout. All randomness
// comes from the supplied counter stream, in a fixed draw order.
template <typename S>
std::vector<BatchItem<S>> make_training_batch(
    const PairedDataset<S>& dataset, CounterRng& rng,
    const TrainConfig& config, const diffusion::NoiseSchedule& sched,
    const VecX<S>& null_token) {
  config.validate();
  if (dataset.eligible.empty())
    throw DataError("dataset not prepared or has no eligible records");

  std::vector<BatchItem<S>> batch;
  batch.reserve(config.batch_size);
  for (int b = 0; b < config.batch_size; ++b) {
    BatchItem<S> item;
    item.record =
        dataset.eligible[rng.uniform_index(dataset.eligible.size())];
    const auto& rec = dataset.records[item.record];
    const Index start = Index(
        rng.uniform_index(uint64_t(rec.codes.rows() - config.clip_frames + 1)));
    const double r = rng.uniform(config.aug_lo, config.aug_hi);
    item.t = int(rng.uniform_index(uint64_t(sched.steps) + 1));
    const bool drop = rng.uniform() < config.cfg_drop_prob;

    item.x0 = augment_expressions(
        MatX<S>(rec.codes.middleRows(start, config.clip_frames)), r);
    MatX<S> eps(config.clip_frames, item.x0.cols());
    rng.fill_normal(eps);
    item.noisy = diffusion::forward_noise(item.x0, item.t, eps, sched).values;
    if (drop) {
      item.cond = audio::null_stream<S>(config.clip_frames, null_token);
    } else {
      item.cond.kind = rec.cond.kind;
      item.cond.frames = rec.cond.frames.middleRows(start, config.clip_frames);
    }
    batch.push_back(std::move(item));
  }
  return batch;
}

template <typename S>
struct TrainResult {
  model::DenoiserParams<S> params;
  std::vector<double> loss_curve;
  int short_record_warnings = 0;
};

// Deterministic diffusion training loop: batches are keyed by (seed, step),
// gradients accumulate in item order, Adam updates the parameter tensors in
// their registration order.
template <typename S>
TrainResult<S> train(PairedDataset<S> dataset, const TrainConfig& config,
                     const model::DenoiserConfig& model_config,
                     const diffusion::NoiseSchedule& sched) {
  config.validate();
  model_config.validate();
  dataset.prepare(config.clip_frames);

  TrainResult<S> result;
  result.short_record_warnings = dataset.short_record_warnings;
  result.params = model::init_params<S>(model_config, config.seed);

  std::vector<MatX<S>*> tensors;
  for (auto& [name, ptr] : result.params.tensors()) tensors.push_back(ptr);
  Adam<S> adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
  adam.init(tensors);

  result.loss_curve.reserve(config.steps);
  for (int step = 0; step < config.steps; ++step) {
    CounterRng rng(CounterRng::mix(config.seed, uint64_t(step)));
    const auto batch = make_training_batch(
        dataset, rng, config, sched, VecX<S>(result.params.null_token_vec()));

    auto grads = result.params.zeros_like();
    std::vector<MatX<S>*> grad_ptrs;
    for (auto& [name, ptr] : grads.tensors()) grad_ptrs.push_back(ptr);

    std::vector<double> losses(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      const auto& item = batch[i];
      auto lg = model::loss_gradients(result.params, item.x0, item.noisy,
                                      item.cond, item.t);
      losses[i] = double(lg.loss);
      if (!std::isfinite(losses[i]))
        throw NumericalError(
            "non-finite loss at step " + std::to_string(step) + ", t=" +
            std::to_string(item.t) + ", record " +
            dataset.records[item.record].id);
      auto item_tensors = lg.grads.tensors();
      for (size_t k = 0; k < grad_ptrs.size(); ++k)
        *grad_ptrs[k] += *item_tensors[k].second;
    }
    for (MatX<S>* g : grad_ptrs) *g /= S(batch.size());

    std::vector<double> reduced = losses;
    if (config.sorted_loss_reduction)
      std::sort(reduced.begin(), reduced.end());
    double loss = 0.0;
    for (double v : reduced) loss += v;
    loss /= double(reduced.size());
    result.loss_curve.push_back(loss);

    std::vector<const MatX<S>*> grad_view(grad_ptrs.begin(), grad_ptrs.end());
    adam.step(tensors, grad_view, config.learning_rate);
  }
  return result;
}

}  // namespace training
}  // namespace facetalk
