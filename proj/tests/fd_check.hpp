#pragma once

// Central finite-difference gradient checking shared by the unit tests and
// the acceptance suite. The oracle only ever calls the loss, never the
// analytic backward path.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "facetalk/common.hpp"
#include "facetalk/rng.hpp"

namespace fd {

struct CheckResult {
  int checked = 0;
  double max_rel_err = 0.0;
  std::string worst;
};

// tensors/grads: parallel lists of (name, tensor*) pairs. loss() re-evaluates
// the objective at the current tensor values.
inline CheckResult check_gradients(
    std::vector<std::pair<std::string, facetalk::MatX<double>*>> tensors,
    const std::vector<std::pair<std::string, const facetalk::MatX<double>*>>&
        grads,
    const std::function<double()>& loss, int samples, uint64_t seed,
    double h = 1e-5) {
  facetalk::CounterRng rng(seed);
  CheckResult res;
  for (int s = 0; s < samples; ++s) {
    const size_t ti = rng.uniform_index(tensors.size());
    facetalk::MatX<double>& ten = *tensors[ti].second;
    if (ten.size() == 0) continue;
    const facetalk::Index i = rng.uniform_index(ten.rows());
    const facetalk::Index j = rng.uniform_index(ten.cols());

    const double saved = ten(i, j);
    ten(i, j) = saved + h;
    const double lp = loss();
    ten(i, j) = saved - h;
    const double lm = loss();
    ten(i, j) = saved;

    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = (*grads[ti].second)(i, j);
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    ++res.checked;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst = tensors[ti].first + "(" + std::to_string(i) + "," +
                  std::to_string(j) + "): analytic " +
                  std::to_string(analytic) + " vs numeric " +
                  std::to_string(numeric);
    }
  }
  return res;
}

}  // namespace fd
