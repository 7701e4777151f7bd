#pragma once

#include <cmath>
#include <vector>

#include "facetalk/common.hpp"

namespace facetalk {

// Adam with bias correction over a list of tensors. Moments are stored per
// tensor in registration order; the update order is fixed, so training is
// bitwise reproducible.
template <typename S>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void init(const std::vector<MatX<S>*>& params) {
    m_.clear();
    v_.clear();
    for (const MatX<S>* p : params) {
      m_.push_back(MatX<S>::Zero(p->rows(), p->cols()));
      v_.push_back(MatX<S>::Zero(p->rows(), p->cols()));
    }
    step_count_ = 0;
  }

  void step(const std::vector<MatX<S>*>& params,
            const std::vector<const MatX<S>*>& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw DimensionError("optimizer state does not match parameter list");
    ++step_count_;
    const S c1 = S(1.0 - std::pow(beta1_, double(step_count_)));
    const S c2 = S(1.0 - std::pow(beta2_, double(step_count_)));
    for (size_t i = 0; i < params.size(); ++i) {
      MatX<S>& p = *params[i];
      const MatX<S>& g = *grads[i];
      m_[i] = S(beta1_) * m_[i] + S(1.0 - beta1_) * g;
      v_[i] = S(beta2_) * v_[i] +
              S(1.0 - beta2_) * g.cwiseProduct(g);
      p.array() -= S(lr) * (m_[i].array() / c1) /
                   ((v_[i].array() / c2).sqrt() + S(eps_));
    }
  }

  long steps() const { return step_count_; }

 private:
  double beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::vector<MatX<S>> m_, v_;
};

// Single-vector flavor used by the code fitters.
class AdamVec {
 public:
  explicit AdamVec(Index n, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8)
      : beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        m_(VecX<double>::Zero(n)),
        v_(VecX<double>::Zero(n)) {}

  void step(VecX<double>& p, const VecX<double>& g, double lr) {
    if (p.size() != m_.size() || g.size() != m_.size())
      throw DimensionError("optimizer state does not match parameter size");
    ++step_count_;
    const double c1 = 1.0 - std::pow(beta1_, double(step_count_));
    const double c2 = 1.0 - std::pow(beta2_, double(step_count_));
    m_ = beta1_ * m_ + (1.0 - beta1_) * g;
    v_ = beta2_ * v_ + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -=
        lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  double beta1_, beta2_, eps_;
  long step_count_ = 0;
  VecX<double> m_, v_;
};

}  // namespace facetalk
