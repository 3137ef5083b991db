#pragma once

#include <cmath>
#include <vector>

#include "flare/tensor.hpp"

namespace flare {

// Decoupled weight decay Adam. Parameter groups carry their own learning
// rate; moments are kept per parameter and bias-corrected by the shared
// step counter.
template <typename T>
class AdamW {
 public:
  struct Group {
    std::vector<Tensor<T>> params;
    T lr;
  };

  explicit AdamW(std::vector<Group> groups, T beta1 = T(0.9),
                 T beta2 = T(0.999), T eps = T(1e-8),
                 T weight_decay = T(0.01))
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps),
        weight_decay_(weight_decay) {
    slots_.resize(groups_.size());
    for (size_t g = 0; g < groups_.size(); ++g) {
      slots_[g].resize(groups_[g].params.size());
      for (size_t i = 0; i < groups_[g].params.size(); ++i) {
        size_t n = groups_[g].params[i].data().size();
        slots_[g][i].m.assign(n, T(0));
        slots_[g][i].v.assign(n, T(0));
      }
    }
  }

  void step() {
    ++t_;
    T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t g = 0; g < groups_.size(); ++g) {
      T lr = groups_[g].lr;
      for (size_t i = 0; i < groups_[g].params.size(); ++i) {
        Tensor<T>& p = groups_[g].params[i];
        const auto& grad = p.grad();
        auto& value = p.data_mut();
        auto& slot = slots_[g][i];
        for (size_t k = 0; k < value.size(); ++k) {
          slot.m[k] = beta1_ * slot.m[k] + (T(1) - beta1_) * grad[k];
          slot.v[k] = beta2_ * slot.v[k] + (T(1) - beta2_) * grad[k] * grad[k];
          T mhat = slot.m[k] / bc1;
          T vhat = slot.v[k] / bc2;
          value[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) +
                            weight_decay_ * value[k]);
        }
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  long step_count() const { return t_; }

  std::vector<Tensor<T>> all_params() const {
    std::vector<Tensor<T>> out;
    for (const auto& g : groups_)
      for (const auto& p : g.params) out.push_back(p);
    return out;
  }

 private:
  struct Slot {
    std::vector<T> m, v;
  };

  std::vector<Group> groups_;
  std::vector<std::vector<Slot>> slots_;
  T beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <typename T>
T clip_grad_norm(const std::vector<Tensor<T>>& params, T max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  T norm = static_cast<T>(std::sqrt(sq));
  if (norm > max_norm && norm > T(0)) {
    T s = max_norm / norm;
    for (auto p : params)
      for (auto& g : p.grad_mut()) g *= s;
  }
  return norm;
}

}  // namespace flare
