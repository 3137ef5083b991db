#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "flare/tensor.hpp"

namespace flare {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int checked = 0;
  std::string worst;  // "param <k> index <i>": the largest offender
};

// Central-difference gradient verification. `make_loss` must rebuild the
// scalar loss from the given leaf tensors on every call; the analytic
// gradients from one backward() sweep are compared against
// (f(x+eps) - f(x-eps)) / (2 eps) per element. Relative error uses
// |fd| + |an| with a small floor as denominator so zero gradients compare
// cleanly. Intended for T = double.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& make_loss,
                           const std::vector<Tensor<T>>& params,
                           T eps = T(1e-5)) {
  for (auto p : params) {
    if (!p.requires_grad())
      throw ContractError("grad_check: all checked tensors must require grad");
    p.zero_grad();
  }
  Tensor<T> loss = make_loss();
  backward(loss);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckReport report;
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor<T> p = params[k];
    auto& v = p.data_mut();
    for (size_t i = 0; i < v.size(); ++i) {
      T saved = v[i];
      v[i] = saved + eps;
      T up = make_loss().item();
      v[i] = saved - eps;
      T down = make_loss().item();
      v[i] = saved;
      double fd = (static_cast<double>(up) - static_cast<double>(down)) /
                  (2.0 * static_cast<double>(eps));
      double an = static_cast<double>(analytic[k][i]);
      double abs_err = std::abs(fd - an);
      double denom = std::max(std::abs(fd) + std::abs(an), 1e-6);
      double rel = abs_err / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = "param " + std::to_string(k) + " index " +
                       std::to_string(i);
      }
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
    }
  }
  return report;
}

}  // namespace flare
