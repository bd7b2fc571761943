/**
 * @file risk_matrix.hpp
 * @brief Covariance / semi-covariance estimators, half-vectorization and PSD repair.
 *
 * Half-vectorization order is row-major over the lower triangle including the
 * diagonal: (0,0), (1,0), (1,1), (2,0), (2,1), (2,2), ... so element (i, j)
 * with i >= j lives at index i(i+1)/2 + j. The order is part of the file
 * formats and must not change.
 */
#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "covarcast/errors.hpp"
#include "covarcast/market_data.hpp"

namespace covarcast {

enum class MatrixKind { covariance, semi_covariance };

inline std::string to_string(MatrixKind kind) {
  return kind == MatrixKind::covariance ? "covariance" : "semi_covariance";
}

inline MatrixKind parse_matrix_kind(std::string_view name) {
  if (name == "covariance" || name == "cov") return MatrixKind::covariance;
  if (name == "semi_covariance" || name == "semi-covariance" || name == "semicov") {
    return MatrixKind::semi_covariance;
  }
  throw ValidationError("unknown matrix kind '" + std::string(name) + "'");
}

inline constexpr double kSymmetryTolerance = 1e-10;

inline bool is_symmetric(const Eigen::MatrixXd& m, double tol = kSymmetryTolerance) {
  if (m.rows() != m.cols()) return false;
  if (m.size() == 0) return true;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

/// Square symmetric n x n matrix tagged as covariance or semi-covariance.
class RiskMatrix {
 public:
  RiskMatrix() = default;

  RiskMatrix(Eigen::MatrixXd values, MatrixKind kind) : values_(std::move(values)), kind_(kind) {
    if (values_.rows() != values_.cols()) {
      throw ValidationError("risk matrix must be square, got " + std::to_string(values_.rows()) + "x" +
                            std::to_string(values_.cols()));
    }
    if (!values_.allFinite()) throw ValidationError("risk matrix has non-finite entries");
    if (!is_symmetric(values_)) throw ValidationError("risk matrix is not symmetric within 1e-10");
  }

  [[nodiscard]] const Eigen::MatrixXd& values() const { return values_; }
  [[nodiscard]] MatrixKind kind() const { return kind_; }
  [[nodiscard]] std::size_t n() const { return static_cast<std::size_t>(values_.rows()); }
  [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

 private:
  Eigen::MatrixXd values_;
  MatrixKind kind_ = MatrixKind::covariance;
};

inline std::size_t vech_length(std::size_t n) { return n * (n + 1) / 2; }

/// n with n(n+1)/2 == length, if any.
inline std::optional<std::size_t> triangular_root(std::size_t length) {
  const auto guess = static_cast<std::size_t>((std::sqrt(8.0 * static_cast<double>(length) + 1.0) - 1.0) / 2.0);
  for (std::size_t n = guess > 0 ? guess - 1 : 0; n <= guess + 1; ++n) {
    if (vech_length(n) == length) return n;
  }
  return std::nullopt;
}

inline Eigen::Index vech_index(Eigen::Index i, Eigen::Index j) {
  if (i < j) std::swap(i, j);
  return i * (i + 1) / 2 + j;
}

/// Lower-triangle half-vector of a symmetric matrix.
class VechVector {
 public:
  VechVector() = default;

  explicit VechVector(Eigen::VectorXd values) : values_(std::move(values)) {
    const auto n = triangular_root(static_cast<std::size_t>(values_.size()));
    if (!n) {
      throw ValidationError("vech length " + std::to_string(values_.size()) + " is not a triangular number");
    }
    n_ = *n;
  }

  [[nodiscard]] const Eigen::VectorXd& values() const { return values_; }
  [[nodiscard]] std::size_t n() const { return n_; }
  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  [[nodiscard]] double operator[](Eigen::Index k) const { return values_(k); }

 private:
  Eigen::VectorXd values_;
  std::size_t n_ = 0;
};

/// How semi-covariance picks the per-asset threshold theta_i.
struct Threshold {
  enum class Mode { per_asset_mean, zero, target };
  Mode mode = Mode::per_asset_mean;
  double target = 0.0;

  static Threshold per_asset_mean() { return {Mode::per_asset_mean, 0.0}; }
  static Threshold zero() { return {Mode::zero, 0.0}; }
  static Threshold fixed(double value) { return {Mode::target, value}; }
};

inline Threshold parse_threshold(std::string_view text) {
  if (text == "mean") return Threshold::per_asset_mean();
  if (text == "zero") return Threshold::zero();
  double value = 0.0;
  if (detail::parse_double(text, value)) return Threshold::fixed(value);
  throw ValidationError("threshold must be 'mean', 'zero' or a number, got '" + std::string(text) + "'");
}

inline std::string to_string(const Threshold& t) {
  switch (t.mode) {
    case Threshold::Mode::per_asset_mean:
      return "mean";
    case Threshold::Mode::zero:
      return "zero";
    default: {
      std::ostringstream os;
      os << std::setprecision(17) << t.target;
      return os.str();
    }
  }
}

using ReturnWindow = Eigen::Ref<const Eigen::MatrixXd>;

/// S = (X - mean)^T (X - mean) / (T - 1).
inline RiskMatrix sample_covariance(const ReturnWindow& window) {
  if (window.rows() < 2) throw ValidationError("sample_covariance needs at least 2 observations");
  const Eigen::MatrixXd centered = window.rowwise() - window.colwise().mean();
  const auto n = window.cols();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  s.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / static_cast<double>(window.rows() - 1));
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return {std::move(s), MatrixKind::covariance};
}

/// Entry (i,j) = (1/T) sum_t min(r_ti - theta_i, 0) min(r_tj - theta_j, 0).
/// A Gram matrix, so symmetric PSD by construction.
inline RiskMatrix semi_covariance(const ReturnWindow& window, Threshold threshold = {}) {
  if (window.rows() < 2) throw ValidationError("semi_covariance needs at least 2 observations");
  Eigen::RowVectorXd theta;
  switch (threshold.mode) {
    case Threshold::Mode::per_asset_mean:
      theta = window.colwise().mean();
      break;
    case Threshold::Mode::zero:
      theta = Eigen::RowVectorXd::Zero(window.cols());
      break;
    case Threshold::Mode::target:
      theta = Eigen::RowVectorXd::Constant(window.cols(), threshold.target);
      break;
  }
  const Eigen::MatrixXd downside = (window.rowwise() - theta).cwiseMin(0.0);
  const auto n = window.cols();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  s.selfadjointView<Eigen::Lower>().rankUpdate(downside.transpose(), 1.0 / static_cast<double>(window.rows()));
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return {std::move(s), MatrixKind::semi_covariance};
}

inline RiskMatrix estimate_risk(const ReturnWindow& window, MatrixKind kind, Threshold threshold = {}) {
  return kind == MatrixKind::covariance ? sample_covariance(window) : semi_covariance(window, threshold);
}

inline VechVector vech(const Eigen::MatrixXd& m) {
  if (!is_symmetric(m)) throw ValidationError("vech requires a symmetric matrix");
  const auto n = m.rows();
  Eigen::VectorXd v(n * (n + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) v(k++) = m(i, j);
  }
  return VechVector(std::move(v));
}

inline VechVector vech(const RiskMatrix& m) { return vech(m.values()); }

inline RiskMatrix unvech(const VechVector& v, MatrixKind kind = MatrixKind::covariance) {
  const auto n = static_cast<Eigen::Index>(v.n());
  Eigen::MatrixXd m(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      m(i, j) = v[k];
      m(j, i) = v[k];
      ++k;
    }
  }
  return {std::move(m), kind};
}

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw ValidationError("symmetrize requires a square matrix");
  return 0.5 * (m + m.transpose());
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw ValidationError("min_eigenvalue requires a square matrix");
  if (!m.allFinite()) throw ValidationError("min_eigenvalue: non-finite entries");
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(m), Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw ComputationError("eigen-decomposition failed");
  return eig.eigenvalues()(0);
}

inline bool is_psd(const Eigen::MatrixXd& m, double tol) { return min_eigenvalue(m) >= -tol; }

/// Symmetrize, take |diagonal|, clip negative eigenvalues to zero and rebuild V diag(l+) V^T.
/// PSD inputs with a non-negative diagonal come back unchanged.
inline RiskMatrix nearest_psd(const Eigen::MatrixXd& m, MatrixKind kind = MatrixKind::covariance) {
  if (m.rows() != m.cols()) throw ValidationError("nearest_psd requires a square matrix");
  if (!m.allFinite()) throw ComputationError("nearest_psd: eigen-decomposition failure (non-finite entries)");
  Eigen::MatrixXd sym = symmetrize(m);
  sym.diagonal() = sym.diagonal().cwiseAbs();
  if (sym.size() == 0) return {std::move(sym), kind};

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw ComputationError("nearest_psd: eigen-decomposition failed");
  if (eig.eigenvalues()(0) >= 0.0) return {std::move(sym), kind};

  const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd& v = eig.eigenvectors();
  Eigen::MatrixXd rebuilt = v * clipped.asDiagonal() * v.transpose();
  return {symmetrize(rebuilt), kind};
}

// ---------------------------------------------------------------------------
// Serialization

/// n header-less rows of n comma-separated decimals.
inline void write_matrix_csv(std::ostream& out, const RiskMatrix& m) {
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.values().rows(); ++i) {
    for (Eigen::Index j = 0; j < m.values().cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

inline RiskMatrix read_matrix_csv(std::istream& in, MatrixKind kind) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::vector<double> row;
    for (auto cell : detail::split(line, ',')) {
      double v = 0.0;
      if (!detail::parse_double(cell, v)) throw ValidationError("matrix CSV: non-numeric cell '" + std::string(cell) + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != n) {
      throw ValidationError("matrix CSV: row " + std::to_string(i) + " does not have " + std::to_string(n) + " cells");
    }
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return {std::move(m), kind};
}

/// {"kind": ..., "n": ..., "vech": [...]}
inline nlohmann::json to_json(const RiskMatrix& m) {
  const auto v = vech(m);
  return {{"kind", to_string(m.kind())},
          {"n", m.n()},
          {"vech", std::vector<double>(v.values().begin(), v.values().end())}};
}

inline RiskMatrix risk_matrix_from_json(const nlohmann::json& j) {
  try {
    const auto kind = parse_matrix_kind(j.at("kind").get<std::string>());
    const auto n = j.at("n").get<std::size_t>();
    const auto values = j.at("vech").get<std::vector<double>>();
    if (values.size() != vech_length(n)) throw ValidationError("risk matrix JSON: vech length does not match n");
    return unvech(VechVector(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()))),
                  kind);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("risk matrix JSON: ") + e.what());
  }
}

}  // namespace covarcast
