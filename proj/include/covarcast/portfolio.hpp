/**
 * @file portfolio.hpp
 * @brief Minimum-variance weights and downside-risk performance metrics.
 *
 * Closed-form global minimum variance:
 *
 *     w = S^{-1} 1 / (1^T S^{-1} 1)
 *
 * computed with a symmetric LDL^T solve rather than an explicit inverse.
 * The long-only variant minimizes w^T S w over the probability simplex.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "covarcast/errors.hpp"
#include "covarcast/risk_matrix.hpp"

namespace covarcast {

struct WeightVector {
  Eigen::VectorXd weights;
  bool long_only = false;

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(weights.size()); }
};

inline constexpr double kSingularRcond = 1e-12;

/// Portfolio variance w^T S w.
inline double portfolio_variance(const Eigen::MatrixXd& m, const Eigen::VectorXd& w) { return w.dot(m * w); }

namespace detail {

/// Solves m w = 1 and normalizes; nullopt when m is singular at working precision.
inline std::optional<Eigen::VectorXd> normalized_solve(const Eigen::MatrixXd& m) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() >= kSingularRcond)) return std::nullopt;
  Eigen::VectorXd x = ldlt.solve(Eigen::VectorXd::Ones(m.rows()));
  const double total = x.sum();
  if (!x.allFinite() || !(std::abs(total) > 0.0)) return std::nullopt;
  return Eigen::VectorXd(x / total);
}

}  // namespace detail

/// Closed-form minimum-variance weights (shorting allowed). A singular matrix
/// is retried once with `ridge * I` added; `ridge < 0` selects the default
/// 1e-8 * trace(m) / n.
inline WeightVector min_variance_weights(const RiskMatrix& m, double ridge = -1.0) {
  const auto n = m.values().rows();
  if (n < 1) throw ValidationError("min_variance_weights: empty matrix");
  if (n == 1) return {Eigen::VectorXd::Ones(1), false};
  if (auto w = detail::normalized_solve(m.values())) return {std::move(*w), false};

  const double mean_diag = m.values().trace() / static_cast<double>(n);
  const double r = ridge >= 0.0 ? ridge : 1e-8 * mean_diag;
  if (!(mean_diag > std::numeric_limits<double>::min()) || !(r > 0.0)) {
    throw ComputationError("degenerate risk matrix");
  }
  const Eigen::MatrixXd regularized = m.values() + r * Eigen::MatrixXd::Identity(n, n);
  if (auto w = detail::normalized_solve(regularized)) return {std::move(*w), false};
  throw ComputationError("degenerate risk matrix");
}

/// Euclidean projection onto {w : w >= 0, sum w = 1}.
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0);
}

namespace detail {

/// Exact minimizer restricted to `support`, if it is feasible and satisfies
/// the KKT conditions of the full simplex problem.
inline std::optional<Eigen::VectorXd> polish_on_support(const Eigen::MatrixXd& m, const Eigen::VectorXd& w) {
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) > 1e-12) support.push_back(i);
  }
  if (support.empty()) return std::nullopt;
  const auto k = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd sub(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) sub(a, b) = m(support[a], support[b]);
  }
  const auto restricted = normalized_solve(sub);
  if (!restricted || (restricted->array() < 0.0).any()) return std::nullopt;
  Eigen::VectorXd full = Eigen::VectorXd::Zero(w.size());
  for (Eigen::Index a = 0; a < k; ++a) full(support[a]) = (*restricted)(a);
  const Eigen::VectorXd grad = m * full;
  const double level = full.dot(grad);  // equals (m w)_i on the support
  const double tol = 1e-10 * std::max(std::abs(level), m.cwiseAbs().maxCoeff());
  if ((grad.array() < level - tol).any()) return std::nullopt;
  return full;
}

}  // namespace detail

/// min w^T m w subject to sum w = 1, w >= 0.
inline WeightVector long_only_min_variance(const RiskMatrix& m, std::size_t max_iterations = 200000) {
  const auto n = m.values().rows();
  if (n < 1) throw ValidationError("long_only_min_variance: empty matrix");
  if (n == 1) return {Eigen::VectorXd::Ones(1), true};

  try {
    auto closed = min_variance_weights(m);
    if ((closed.weights.array() >= 0.0).all()) return {std::move(closed.weights), true};
  } catch (const ComputationError&) {
    // singular even with ridge: fall through to the iterative solver
  }

  const Eigen::MatrixXd& s = m.values();
  const double lipschitz = 2.0 * std::max(s.cwiseAbs().rowwise().sum().maxCoeff(), 1e-300);
  const double step = 1.0 / lipschitz;
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  Eigen::VectorXd y = w;
  double t = 1.0;
  double residual = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    const Eigen::VectorXd next = project_to_simplex(y - step * 2.0 * (s * y));
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - w);
    w = next;
    t = t_next;
    if (it % 50 == 0) {
      residual = (w - project_to_simplex(w - step * 2.0 * (s * w))).cwiseAbs().maxCoeff();
      if (auto exact = detail::polish_on_support(s, w)) return {std::move(*exact), true};
      if (residual <= 1e-10) return {w, true};
      // restart momentum when it stops helping
      if (portfolio_variance(s, y) > portfolio_variance(s, w)) {
        y = w;
        t = 1.0;
      }
    }
  }
  throw ComputationError("long_only_min_variance did not converge; stationarity residual " + std::to_string(residual));
}

inline WeightVector optimize_weights(const RiskMatrix& m, bool long_only, double ridge = -1.0) {
  return long_only ? long_only_min_variance(m) : min_variance_weights(m, ridge);
}

/// r_p,t = sum_i w_i r_i,t with weights held fixed over the slice.
inline Eigen::VectorXd portfolio_returns(const WeightVector& w, const Eigen::Ref<const Eigen::MatrixXd>& realized) {
  if (realized.cols() != w.weights.size()) {
    throw ValidationError("portfolio_returns: " + std::to_string(w.weights.size()) + " weights for " +
                          std::to_string(realized.cols()) + " assets");
  }
  return realized * w.weights;
}

/// (mean(r) - target) / sqrt(mean(min(r - target, 0)^2)) * sqrt(annualization).
/// +infinity when there is no downside and the excess is positive; 0 when both vanish.
inline double sortino_ratio(const Eigen::Ref<const Eigen::VectorXd>& returns, double target = 0.0,
                            double annualization = 252.0) {
  if (returns.size() == 0) throw ValidationError("sortino_ratio: empty return series");
  const double excess = returns.mean() - target;
  const double downside = std::sqrt((returns.array() - target).cwiseMin(0.0).square().mean());
  if (downside == 0.0) {
    if (excess > 0.0) return std::numeric_limits<double>::infinity();
    return 0.0;
  }
  return excess / downside * std::sqrt(annualization);
}

struct PerformanceStats {
  Eigen::VectorXd period_returns;
  std::vector<double> net_value;  // starts at 1.0, length = returns + 1
  double cumulative_return = 0.0;
  double mean_return = 0.0;
  double downside_deviation = 0.0;
  double sortino = 0.0;
  double annualization = 252.0;
};

inline PerformanceStats performance_stats(const Eigen::Ref<const Eigen::VectorXd>& returns, double target = 0.0,
                                          double annualization = 252.0) {
  if (returns.size() == 0) throw ValidationError("performance_stats: empty return series");
  if ((returns.array() <= -1.0).any()) throw ValidationError("performance_stats: return <= -1 (bankruptcy)");
  PerformanceStats stats;
  stats.period_returns = returns;
  stats.net_value.reserve(static_cast<std::size_t>(returns.size()) + 1);
  stats.net_value.push_back(1.0);
  for (Eigen::Index t = 0; t < returns.size(); ++t) stats.net_value.push_back(stats.net_value.back() * (1.0 + returns(t)));
  stats.cumulative_return = stats.net_value.back() - 1.0;
  stats.mean_return = returns.mean();
  stats.downside_deviation = std::sqrt((returns.array() - target).cwiseMin(0.0).square().mean());
  stats.sortino = sortino_ratio(returns, target, annualization);
  stats.annualization = annualization;
  return stats;
}

}  // namespace covarcast
