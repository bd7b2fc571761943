#pragma once

#include <cmath>
#include <vector>

#include "covarcast/nn/layers.hpp"

namespace covarcast::nn {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter moment accumulators, in ParameterSet order.
struct OptimizerState {
  AdamOptions options;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  long step = 0;

  static OptimizerState for_parameters(const ParameterSet& params, AdamOptions options = {}) {
    OptimizerState s;
    s.options = options;
    for (const auto& [name, t] : params) {
      s.first_moment.push_back(Matrix::Zero(t.rows(), t.cols()));
      s.second_moment.push_back(Matrix::Zero(t.rows(), t.cols()));
    }
    return s;
  }
};

/// One bias-corrected Adam update using the gradients currently stored on `params`.
inline void adam_step(const ParameterSet& params, OptimizerState& state) {
  if (state.first_moment.size() != params.size()) throw ValidationError("optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].second.has_grad()) throw ValidationError("adam_step: parameter '" + params[i].first + "' has no gradient");
  }
  const auto& o = state.options;
  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i].second;
    const Matrix& g = p.grad();
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g.cwiseAbs2();
    p.mutable_value().array() -=
        o.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + o.epsilon);
  }
}

}  // namespace covarcast::nn
