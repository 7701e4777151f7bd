#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "facetalk/common.hpp"

namespace facetalk {
namespace metrics {

// K generated sequences for one conditioning input.
using SampleSet = std::vector<MatX<double>>;

// D = 1/(|N| |K|) * sum_i sum_j sum_{l != j} || e_{i,j} - e_{i,l} ||_2
// over flattened full sequences, ordered pairs.
inline double diversity(const std::vector<SampleSet>& sets) {
  if (sets.empty()) throw InsufficientInputError("diversity needs sets");
  const size_t k = sets[0].size();
  for (const auto& set : sets) {
    if (set.size() < 2)
      throw InsufficientInputError(
          "diversity needs at least two samples per set");
    if (set.size() != k)
      throw DimensionError("diversity sets must share the sample count");
    for (const auto& seq : set)
      require_same_shape("diversity set", set[0].rows(), set[0].cols(),
                         seq.rows(), seq.cols());
  }
  double total = 0.0;
  for (const auto& set : sets)
    for (size_t j = 0; j < k; ++j)
      for (size_t l = 0; l < k; ++l) {
        if (l == j) continue;
        total += (set[j] - set[l]).norm();
      }
  return total / (double(sets.size()) * double(k));
}

// Statistics of adjacent-frame differences over all coordinates.
inline std::pair<double, double> adjacent_mae_rmse(const MatX<double>& seq) {
  if (seq.rows() < 2)
    throw InsufficientInputError("adjacent statistics need two frames");
  const Index n = seq.rows() - 1;
  const MatX<double> diff =
      seq.bottomRows(n) - seq.topRows(n);
  const double mae = diff.cwiseAbs().mean();
  const double rmse = std::sqrt(diff.array().square().mean());
  return {mae, rmse};
}

// Pearson correlation between the sequence and its lag-shifted copy, pooled
// over all coordinates.
inline double autocorrelation(const MatX<double>& seq, Index lag) {
  if (lag < 0) throw ConfigError("lag must be nonnegative");
  if (seq.rows() <= lag)
    throw InsufficientInputError("sequence shorter than the requested lag");
  const Index n = seq.rows() - lag;
  const MatX<double> x = seq.topRows(n);
  const MatX<double> y = seq.bottomRows(n);
  const double mx = x.mean(), my = y.mean();
  const auto cx = (x.array() - mx).matrix();
  const auto cy = (y.array() - my).matrix();
  const double vx = cx.squaredNorm();
  const double vy = cy.squaredNorm();
  if (vx == 0.0 || vy == 0.0)
    throw DegenerateInputError("autocorrelation of a zero-variance sequence");
  return cx.cwiseProduct(cy).sum() / (std::sqrt(vx) * std::sqrt(vy));
}

}  // namespace metrics
}  // namespace facetalk
