/**
 * @file market_data.hpp
 * @brief Price ingestion, return computation, rolling windows and synthetic markets.
 *
 * Everything downstream consumes a ReturnSeries: a dates x assets matrix of
 * per-period returns. Prices come either from a CSV file
 *
 *     date,<asset_id_1>,...,<asset_id_n>
 *     2024-01-02,100.0,...
 *
 * or from the regime-switching Gaussian generator, which is how tests and the
 * acceptance suite get data with a known covariance structure.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "covarcast/errors.hpp"

namespace covarcast {

using Date = std::chrono::year_month_day;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

inline bool parse_int(std::string_view text, int& out) {
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

}  // namespace detail

/// Parses an ISO-8601 calendar date (YYYY-MM-DD).
inline Date parse_date(std::string_view text) {
  text = detail::trim(text);
  int y = 0, m = 0, d = 0;
  if (text.size() != 10 || text[4] != '-' || text[7] != '-' ||
      !detail::parse_int(text.substr(0, 4), y) || !detail::parse_int(text.substr(5, 2), m) ||
      !detail::parse_int(text.substr(8, 2), d)) {
    throw ValidationError("unparseable date '" + std::string(text) + "'");
  }
  const Date date{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                  std::chrono::day{static_cast<unsigned>(d)}};
  if (!date.ok()) throw ValidationError("invalid calendar date '" + std::string(text) + "'");
  return date;
}

inline std::string format_date(const Date& date) {
  std::ostringstream os;
  os << std::setfill('0') << std::setw(4) << static_cast<int>(date.year()) << '-' << std::setw(2)
     << static_cast<unsigned>(date.month()) << '-' << std::setw(2)
     << static_cast<unsigned>(date.day());
  return os.str();
}

/// Close prices, one row per date. Cells are positive and complete once loaded.
struct PriceTable {
  std::vector<Date> dates;
  std::vector<std::string> asset_ids;
  Eigen::MatrixXd prices;  // dates x assets

  [[nodiscard]] std::size_t rows() const { return dates.size(); }
  [[nodiscard]] std::size_t n_assets() const { return asset_ids.size(); }
};

/// Per-period returns; row t is the return realized on dates[t].
struct ReturnSeries {
  std::vector<Date> dates;
  std::vector<std::string> asset_ids;
  Eigen::MatrixXd returns;  // dates x assets

  [[nodiscard]] std::size_t size() const { return dates.size(); }
  [[nodiscard]] std::size_t n_assets() const { return asset_ids.size(); }
};

/// Half-open index range [begin, end) into a ReturnSeries.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  [[nodiscard]] std::size_t length() const { return end - begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Rows [range.begin, range.end) of a return matrix.
inline auto slice_rows(const Eigen::MatrixXd& returns, IndexRange range) {
  return returns.middleRows(static_cast<Eigen::Index>(range.begin),
                            static_cast<Eigen::Index>(range.length()));
}

struct Window {
  IndexRange history;
  IndexRange target;
  friend bool operator==(const Window&, const Window&) = default;
};

struct WindowSet {
  std::vector<Window> windows;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t stride = 0;

  [[nodiscard]] std::size_t size() const { return windows.size(); }

  /// Same windows moved `offset` rows later.
  [[nodiscard]] WindowSet shifted(std::size_t offset) const {
    WindowSet out = *this;
    for (auto& w : out.windows) {
      w.history.begin += offset;
      w.history.end += offset;
      w.target.begin += offset;
      w.target.end += offset;
    }
    return out;
  }
};

enum class MissingDataPolicy { strict, ffill };
enum class ReturnMethod { simple, log };

inline MissingDataPolicy parse_missing_data_policy(std::string_view name) {
  if (name == "strict") return MissingDataPolicy::strict;
  if (name == "ffill") return MissingDataPolicy::ffill;
  throw ValidationError("unknown missing-data policy '" + std::string(name) +
                        "' (expected strict|ffill)");
}

inline ReturnMethod parse_return_method(std::string_view name) {
  if (name == "simple") return ReturnMethod::simple;
  if (name == "log") return ReturnMethod::log;
  throw ValidationError("unknown return method '" + std::string(name) + "' (expected simple|log)");
}

/// Parses price CSV text. Empty cells, short rows, "NA" and "nan" count as missing.
/// Rows are sorted by date; leading rows with any missing asset are dropped.
inline PriceTable parse_price_table(std::istream& in, MissingDataPolicy policy) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("unparseable price file: missing header row");
  const auto header = detail::split(line, ',');
  if (header.size() < 2) throw ValidationError("unparseable price file: header needs date and >= 1 asset");

  PriceTable table;
  for (std::size_t j = 1; j < header.size(); ++j) {
    const auto id = detail::trim(header[j]);
    if (id.empty()) throw ValidationError("unparseable price file: empty asset id in header");
    table.asset_ids.emplace_back(id);
  }
  const std::size_t n = table.asset_ids.size();
  const double missing = std::numeric_limits<double>::quiet_NaN();

  struct Row {
    Date date;
    std::vector<double> cells;
    std::size_t line_no;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, ',');
    if (fields.size() > n + 1) {
      throw ValidationError("unparseable price file: line " + std::to_string(line_no) +
                            " has more cells than the header");
    }
    Row row{parse_date(fields[0]), std::vector<double>(n, missing), line_no};
    for (std::size_t j = 1; j < fields.size(); ++j) {
      const auto cell = detail::trim(fields[j]);
      if (cell.empty() || cell == "NA" || cell == "nan" || cell == "NaN") continue;
      double value = 0.0;
      if (!detail::parse_double(cell, value)) {
        throw ValidationError("unparseable price file: line " + std::to_string(line_no) +
                              " cell '" + std::string(cell) + "' is not numeric");
      }
      if (!(value > 0.0) || !std::isfinite(value)) {
        throw ValidationError("non-positive price " + std::string(cell) + " on line " +
                              std::to_string(line_no));
      }
      row.cells[j - 1] = value;
    }
    rows.push_back(std::move(row));
  }

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].date == rows[i - 1].date) {
      throw ValidationError("duplicate date " + format_date(rows[i].date) + " in price file");
    }
  }

  auto complete = [](const Row& r) {
    return std::none_of(r.cells.begin(), r.cells.end(), [](double v) { return std::isnan(v); });
  };
  const auto first = std::find_if(rows.begin(), rows.end(), complete);
  rows.erase(rows.begin(), first);
  if (rows.empty()) throw ValidationError("empty table: no complete price rows");

  for (std::size_t i = 1; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isnan(rows[i].cells[j])) continue;
      if (policy == MissingDataPolicy::strict) {
        throw ValidationError("missing cell: " + table.asset_ids[j] + " on " +
                              format_date(rows[i].date) + " (line " +
                              std::to_string(rows[i].line_no) + ")");
      }
      rows[i].cells[j] = rows[i - 1].cells[j];
    }
  }

  table.prices.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
  table.dates.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    table.dates.push_back(rows[i].date);
    for (std::size_t j = 0; j < n; ++j) {
      table.prices(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].cells[j];
    }
  }
  return table;
}

inline PriceTable load_price_table(const std::filesystem::path& path,
                                   MissingDataPolicy policy = MissingDataPolicy::strict) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open price file '" + path.string() + "'");
  return parse_price_table(in, policy);
}

/// Writes prices with full round-trip precision.
inline void write_price_table(std::ostream& out, const PriceTable& table) {
  out << "date";
  for (const auto& id : table.asset_ids) out << ',' << id;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < table.rows(); ++i) {
    out << format_date(table.dates[i]);
    for (Eigen::Index j = 0; j < table.prices.cols(); ++j) {
      out << ',' << table.prices(static_cast<Eigen::Index>(i), j);
    }
    out << '\n';
  }
}

/// Rows with first <= date <= last; an absent bound is open.
inline PriceTable restrict_dates(const PriceTable& table, std::optional<Date> first, std::optional<Date> last) {
  if (first && last && *last < *first) throw ValidationError("date range ends before it starts");
  const auto lo = first ? std::lower_bound(table.dates.begin(), table.dates.end(), *first) : table.dates.begin();
  const auto hi = last ? std::upper_bound(table.dates.begin(), table.dates.end(), *last) : table.dates.end();
  PriceTable out;
  out.asset_ids = table.asset_ids;
  if (lo >= hi) return out;
  out.dates.assign(lo, hi);
  out.prices = table.prices.middleRows(lo - table.dates.begin(), hi - lo);
  return out;
}

inline ReturnSeries compute_returns(const PriceTable& table, ReturnMethod method = ReturnMethod::simple) {
  if (table.rows() < 2) throw ValidationError("compute_returns needs at least 2 price rows");
  const auto t = table.prices.rows();
  ReturnSeries series;
  series.asset_ids = table.asset_ids;
  series.dates.assign(table.dates.begin() + 1, table.dates.end());
  const auto ratio = table.prices.bottomRows(t - 1).array() / table.prices.topRows(t - 1).array();
  if (method == ReturnMethod::simple) {
    series.returns = ratio - 1.0;
  } else {
    series.returns = ratio.log();
  }
  if (!series.returns.allFinite()) throw ValidationError("non-finite return computed from prices");
  return series;
}

/// Windows start at row 0 and advance by `stride`:
/// history = [s, s+lookback), target = [s+lookback, s+lookback+horizon).
inline WindowSet rolling_windows(std::size_t series_length, std::size_t lookback, std::size_t horizon,
                                 std::size_t stride) {
  if (lookback < 2) throw ValidationError("lookback must be >= 2");
  if (horizon < 1) throw ValidationError("horizon must be >= 1");
  if (stride < 1) throw ValidationError("stride must be >= 1");
  if (lookback + horizon > series_length) {
    throw ValidationError("insufficient data: lookback + horizon = " + std::to_string(lookback + horizon) +
                          " exceeds series length " + std::to_string(series_length));
  }
  WindowSet set{{}, lookback, horizon, stride};
  for (std::size_t s = 0; s + lookback + horizon <= series_length; s += stride) {
    set.windows.push_back({{s, s + lookback}, {s + lookback, s + lookback + horizon}});
  }
  return set;
}

inline WindowSet rolling_windows(const ReturnSeries& series, std::size_t lookback, std::size_t horizon,
                                 std::size_t stride) {
  return rolling_windows(series.size(), lookback, horizon, stride);
}

/// One stationary stretch of the synthetic market.
///
/// `covariance` and `mean` are the moments of the daily return including the
/// optional shock component: on each day asset i independently receives a
/// return of -shock_size[i] with probability shock_probability[i] (a negative
/// size is an upward jump).
/// The Gaussian part is adjusted so the totals match the targets, which
/// requires covariance - diag(p(1-p)J^2) to stay PSD.
struct Regime {
  Eigen::MatrixXd covariance;
  Eigen::VectorXd mean;
  std::size_t duration = 0;
  Eigen::VectorXd shock_probability;  // empty = no shocks
  Eigen::VectorXd shock_size;
};

struct SyntheticSpec {
  std::size_t n_assets = 0;
  std::size_t n_days = 0;
  std::vector<Regime> regimes;
  std::uint64_t seed = 0;
  Date start_date{std::chrono::year{2020}, std::chrono::January, std::chrono::day{1}};
};

namespace detail {

inline Date next_business_day(Date d) {
  std::chrono::sys_days day{d};
  do {
    day += std::chrono::days{1};
  } while (std::chrono::weekday{day} == std::chrono::Saturday ||
           std::chrono::weekday{day} == std::chrono::Sunday);
  return Date{day};
}

inline std::string asset_label(std::size_t i) {
  std::ostringstream os;
  os << 'A' << std::setfill('0') << std::setw(2) << (i + 1);
  return os.str();
}

}  // namespace detail

inline void validate_synthetic_spec(const SyntheticSpec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.n_assets);
  if (spec.n_assets == 0) throw ValidationError("synthetic spec needs n_assets >= 1");
  if (spec.regimes.empty()) throw ValidationError("synthetic spec needs at least one regime");
  std::size_t total = 0;
  for (std::size_t r = 0; r < spec.regimes.size(); ++r) {
    const auto& regime = spec.regimes[r];
    const std::string where = "regime " + std::to_string(r) + ": ";
    if (regime.covariance.rows() != n || regime.covariance.cols() != n || regime.mean.size() != n) {
      throw ValidationError(where + "covariance/mean dimensions do not match n_assets");
    }
    if (!regime.covariance.allFinite() || !regime.mean.allFinite()) {
      throw ValidationError(where + "non-finite target");
    }
    if ((regime.covariance - regime.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw ValidationError(where + "non-PSD regime target (asymmetric)");
    }
    const bool shocks = regime.shock_probability.size() > 0;
    if (shocks && (regime.shock_probability.size() != n || regime.shock_size.size() != n)) {
      throw ValidationError(where + "shock vectors must have n_assets entries");
    }
    if (shocks && ((regime.shock_probability.array() < 0.0).any() ||
                   (regime.shock_probability.array() >= 1.0).any() || !regime.shock_size.allFinite())) {
      throw ValidationError(where + "shock probabilities must lie in [0,1) and sizes be finite");
    }
    total += regime.duration;
  }
  if (total != spec.n_days) {
    throw ValidationError("regime durations sum to " + std::to_string(total) + " but n_days is " +
                          std::to_string(spec.n_days));
  }
}

/// Draws daily returns regime by regime. Deterministic for a given seed.
inline ReturnSeries generate_synthetic_returns(const SyntheticSpec& spec) {
  validate_synthetic_spec(spec);
  const auto n = static_cast<Eigen::Index>(spec.n_assets);

  ReturnSeries series;
  for (std::size_t i = 0; i < spec.n_assets; ++i) series.asset_ids.push_back(detail::asset_label(i));
  series.returns.resize(static_cast<Eigen::Index>(spec.n_days), n);
  series.dates.reserve(spec.n_days);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Date date = spec.start_date;
  std::chrono::weekday wd{std::chrono::sys_days{date}};
  if (wd == std::chrono::Saturday || wd == std::chrono::Sunday) date = detail::next_business_day(date);

  Eigen::Index row = 0;
  for (std::size_t r = 0; r < spec.regimes.size(); ++r) {
    const auto& regime = spec.regimes[r];
    const bool shocks = regime.shock_probability.size() > 0;

    Eigen::MatrixXd gaussian_cov = regime.covariance;
    Eigen::VectorXd gaussian_mean = regime.mean;
    if (shocks) {
      const Eigen::ArrayXd p = regime.shock_probability.array();
      const Eigen::ArrayXd j = regime.shock_size.array();
      gaussian_cov.diagonal().array() -= p * (1.0 - p) * j.square();
      gaussian_mean.array() += p * j;
    }
    const double scale = std::max(1.0, gaussian_cov.diagonal().cwiseAbs().maxCoeff());
    if (n > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gaussian_cov, Eigen::EigenvaluesOnly);
      if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -1e-12 * scale) {
        throw ValidationError("regime " + std::to_string(r) + ": non-PSD regime target");
      }
    }

    // Pivoted LDL^T handles singular (e.g. zero) targets: cov = P^T L D L^T P.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gaussian_cov);
    const Eigen::MatrixXd lower = ldlt.matrixL();
    const Eigen::VectorXd sqrt_d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd factor = ldlt.transpositionsP().transpose() * (lower * sqrt_d.asDiagonal());

    Eigen::VectorXd z(n);
    for (std::size_t d = 0; d < regime.duration; ++d, ++row) {
      for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
      Eigen::VectorXd x = gaussian_mean + factor * z;
      if (shocks) {
        for (Eigen::Index i = 0; i < n; ++i) {
          if (uniform(rng) < regime.shock_probability(i)) x(i) -= regime.shock_size(i);
        }
      }
      series.returns.row(row) = x.transpose();
      series.dates.push_back(date);
      date = detail::next_business_day(date);
    }
  }
  return series;
}

/// Compounds simple returns into a price path starting at `start_price`,
/// with one extra leading row dated one business day before the first return.
inline PriceTable prices_from_returns(const ReturnSeries& series, double start_price = 100.0) {
  if ((series.returns.array() <= -1.0).any()) {
    throw ValidationError("returns <= -1 cannot be compounded into positive prices");
  }
  PriceTable table;
  table.asset_ids = series.asset_ids;
  const auto t = static_cast<Eigen::Index>(series.size());
  table.prices.resize(t + 1, static_cast<Eigen::Index>(series.n_assets()));
  table.prices.row(0).setConstant(start_price);
  for (Eigen::Index i = 0; i < t; ++i) {
    table.prices.row(i + 1) = table.prices.row(i).array() * (1.0 + series.returns.row(i).array());
  }
  std::chrono::sys_days first = series.dates.empty() ? std::chrono::sys_days{} : std::chrono::sys_days{series.dates.front()};
  do {
    first -= std::chrono::days{1};
  } while (std::chrono::weekday{first} == std::chrono::Saturday ||
           std::chrono::weekday{first} == std::chrono::Sunday);
  table.dates.push_back(Date{first});
  table.dates.insert(table.dates.end(), series.dates.begin(), series.dates.end());
  return table;
}

}  // namespace covarcast
