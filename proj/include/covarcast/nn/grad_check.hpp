#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "covarcast/nn/layers.hpp"

namespace covarcast::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of `loss` against central differences
/// (f(t+eps) - f(t-eps)) / 2eps, coordinate by coordinate. The relative error
/// uses max(|analytic|, |numeric|, floor * max(1, |loss|)) as denominator; the
/// floor keeps exactly-zero gradients from amplifying finite-difference
/// roundoff, which grows with |loss|.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss, const ParameterSet& params,
                                  double epsilon = 1e-5, double floor = 1e-8) {
  params.zero_grad();
  const Tensor base = loss();
  if (base.numel() != 1) throw ValidationError("grad_check: loss must be scalar");
  base.backward();

  auto probe = [&] {
    NoGradGuard guard;
    return loss().item();
  };
  if (probe() != base.item() || probe() != base.item()) {
    throw ValidationError("grad_check: loss is not deterministic (disable dropout)");
  }

  const double denominator_floor = floor * std::max(1.0, std::abs(base.item()));
  GradCheckResult result;
  for (const auto& [name, t] : params) {
    const Matrix analytic = t.has_grad() ? t.grad() : Matrix::Zero(t.rows(), t.cols());
    Matrix& value = t.mutable_value();
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double original = value.data()[i];
      value.data()[i] = original + epsilon;
      const double up = probe();
      value.data()[i] = original - epsilon;
      const double down = probe();
      value.data()[i] = original;

      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), denominator_floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace covarcast::nn
