/**
 * @file scenarios.hpp
 * @brief Preset synthetic market scenarios.
 */
#pragma once

#include <Eigen/Dense>

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "covarcast/errors.hpp"
#include "covarcast/market_data.hpp"

namespace covarcast {

/// Constant-correlation covariance with the given daily volatilities.
inline Eigen::MatrixXd constant_correlation_covariance(const Eigen::VectorXd& vol, double rho) {
  const auto n = vol.size();
  Eigen::MatrixXd corr = Eigen::MatrixXd::Constant(n, n, rho);
  corr.diagonal().setOnes();
  return vol.asDiagonal() * corr * vol.asDiagonal();
}

struct ScenarioOptions {
  std::size_t n_assets = 5;
  std::size_t n_days = 1500;
  std::uint64_t seed = 1;
  std::size_t min_regime_days = 40;
  std::size_t max_regime_days = 100;
  std::size_t skew_regime_days = 2000;
  double shock_probability = 0.05;
  double shock_size = 0.04;
};

/// One regime throughout: 1% daily volatility, correlation 0.3.
inline SyntheticSpec single_regime_scenario(const ScenarioOptions& o) {
  const auto n = static_cast<Eigen::Index>(o.n_assets);
  SyntheticSpec spec;
  spec.n_assets = o.n_assets;
  spec.n_days = o.n_days;
  spec.seed = o.seed;
  Regime r;
  r.covariance = constant_correlation_covariance(Eigen::VectorXd::Constant(n, 0.01), 0.3);
  r.mean = Eigen::VectorXd::Constant(n, 3e-4);
  r.duration = o.n_days;
  spec.regimes.push_back(std::move(r));
  return spec;
}

/// Alternating calm and turbulent regimes with seed-drawn durations.
/// Calm: volatilities 0.6%..1.2%, correlation 0.1. Turbulent: 2.5x the
/// volatility, correlation 0.7, negative drift.
inline SyntheticSpec regime_switching_scenario(const ScenarioOptions& o) {
  if (o.min_regime_days < 1 || o.min_regime_days > o.max_regime_days) {
    throw ValidationError("regime_switching: need 1 <= min_regime_days <= max_regime_days");
  }
  const auto n = static_cast<Eigen::Index>(o.n_assets);
  Eigen::VectorXd vol(n);
  for (Eigen::Index i = 0; i < n; ++i) vol(i) = 0.006 + 0.006 * static_cast<double>(i) / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  const Eigen::MatrixXd calm = constant_correlation_covariance(vol, 0.1);
  const Eigen::MatrixXd turbulent = constant_correlation_covariance(2.5 * vol, 0.7);

  SyntheticSpec spec;
  spec.n_assets = o.n_assets;
  spec.n_days = o.n_days;
  spec.seed = o.seed;
  std::mt19937_64 rng(o.seed ^ 0xA5A5A5A5ULL);
  std::uniform_int_distribution<std::size_t> length(o.min_regime_days, o.max_regime_days);
  std::size_t used = 0;
  bool turbulent_next = false;
  while (used < o.n_days) {
    Regime r;
    r.duration = std::min(length(rng), o.n_days - used);
    r.covariance = turbulent_next ? turbulent : calm;
    r.mean = Eigen::VectorXd::Constant(n, turbulent_next ? -2e-4 : 4e-4);
    used += r.duration;
    turbulent_next = !turbulent_next;
    spec.regimes.push_back(std::move(r));
  }
  return spec;
}

/// Equal total variance (1% daily), equal mean and zero correlation for every
/// asset. Within a regime the first half of the assets (rounded up) suffer
/// downward jumps and the rest upward jumps of the same size; consecutive
/// regimes of `skew_regime_days` swap the two groups.
inline SyntheticSpec downside_skew_scenario(const ScenarioOptions& o) {
  if (o.skew_regime_days < 1) throw ValidationError("downside_skew: skew_regime_days must be >= 1");
  const auto n = static_cast<Eigen::Index>(o.n_assets);
  SyntheticSpec spec;
  spec.n_assets = o.n_assets;
  spec.n_days = o.n_days;
  spec.seed = o.seed;
  std::size_t used = 0;
  bool swapped = false;
  while (used < o.n_days) {
    Regime r;
    r.covariance = constant_correlation_covariance(Eigen::VectorXd::Constant(n, 0.01), 0.0);
    r.mean = Eigen::VectorXd::Constant(n, 4e-4);
    r.duration = std::min(o.skew_regime_days, o.n_days - used);
    r.shock_probability = Eigen::VectorXd::Constant(n, o.shock_probability);
    r.shock_size.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool crash_prone = (i < (n + 1) / 2) != swapped;
      r.shock_size(i) = crash_prone ? o.shock_size : -o.shock_size;
    }
    used += r.duration;
    swapped = !swapped;
    spec.regimes.push_back(std::move(r));
  }
  return spec;
}

inline std::vector<std::string> scenario_names() { return {"single", "regime_switching", "downside_skew"}; }

inline SyntheticSpec make_scenario(std::string_view name, const ScenarioOptions& o) {
  if (name == "single") return single_regime_scenario(o);
  if (name == "regime_switching") return regime_switching_scenario(o);
  if (name == "downside_skew") return downside_skew_scenario(o);
  throw ValidationError("unknown synthetic scenario '" + std::string(name) +
                        "' (expected single|regime_switching|downside_skew)");
}

}  // namespace covarcast
