/**
 * @file backtest.hpp
 * @brief Rolling-window evaluation of risk-matrix forecasters against the
 *        sample-method baseline, and report emission.
 *
 * For every evaluation window and every (model, matrix kind, seed):
 *
 *   predict matrix from data strictly before the holding period
 *     -> (forecaster only) nearest_psd
 *     -> minimum-variance weights
 *     -> hold over the target range, append daily portfolio returns
 *     -> matrix MSE against the same estimator evaluated on the target range
 *
 * The baseline ("sample method") predicts the trailing-lookback estimator
 * unchanged. Forecasters are trained on windows whose targets end before the
 * first evaluation holding period begins.
 */
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "covarcast/forecaster.hpp"
#include "covarcast/market_data.hpp"
#include "covarcast/portfolio.hpp"
#include "covarcast/risk_matrix.hpp"

namespace covarcast {

struct ModelSpec {
  std::string name;
  std::optional<ForecastModelConfig> forecaster;  // empty: sample-method baseline

  [[nodiscard]] bool is_baseline() const { return !forecaster.has_value(); }
  static ModelSpec sample_method(std::string name = "sample") { return {std::move(name), std::nullopt}; }
};

struct PortfolioOptions {
  bool long_only = false;
  double ridge = -1.0;  // < 0: 1e-8 * trace / n on singular matrices
  double sortino_target = 0.0;
  double annualization = 252.0;
};

struct BacktestPlan {
  ReturnSeries data;
  WindowSet windows;                   // evaluation windows; stride == horizon
  WindowSet training_windows;          // forecaster training samples
  std::vector<MatrixKind> kinds{MatrixKind::covariance, MatrixKind::semi_covariance};
  std::vector<ModelSpec> models;
  PortfolioOptions portfolio;
  DatasetOptions tokens;
  TrainConfig training;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path output_dir;
  std::size_t threads = 0;             // 0: COVARCAST_THREADS or hardware concurrency
  nlohmann::json metadata = nlohmann::json::object();

  /// Pre-trained forecasters keyed by pretrained_key(); missing keys are trained.
  std::map<std::string, std::shared_ptr<const TrainedModel>> pretrained;
};

inline std::string pretrained_key(const std::string& model, MatrixKind kind, std::uint64_t seed) {
  return model + "|" + to_string(kind) + "|" + std::to_string(seed);
}

struct RunResult {
  std::uint64_t seed = 0;
  std::string error;
  std::vector<double> period_returns;
  std::vector<double> net_value;
  double cumulative_return = 0.0;
  double sortino = 0.0;
  std::vector<double> window_mse;
  double mean_mse = 0.0;
  std::vector<std::vector<double>> weights;  // one weight vector per window

  friend bool operator==(const RunResult&, const RunResult&) = default;
};

struct ModelKindResult {
  std::string model;
  MatrixKind kind = MatrixKind::covariance;
  bool baseline = false;
  std::vector<RunResult> runs;
  std::vector<double> mean_net_value;  // across successful runs
  double mean_cumulative_return = 0.0;
  double mean_sortino = 0.0;
  double mean_mse = 0.0;
  std::string error;  // set when no run succeeded

  friend bool operator==(const ModelKindResult&, const ModelKindResult&) = default;
};

struct BacktestReport {
  std::vector<std::string> asset_ids;
  std::vector<Date> dates;            // net-value axis: last pre-holding date, then every held day
  std::vector<Date> rebalance_dates;  // first held day of each window
  std::vector<ModelKindResult> results;
  nlohmann::json metadata = nlohmann::json::object();

  [[nodiscard]] const ModelKindResult* find(const std::string& model, MatrixKind kind) const {
    for (const auto& r : results) {
      if (r.model == model && r.kind == kind) return &r;
    }
    return nullptr;
  }

  friend bool operator==(const BacktestReport&, const BacktestReport&) = default;
};

// ---------------------------------------------------------------------------
// Window layout

struct WindowLayout {
  std::size_t lookback = 21;
  std::size_t horizon = 5;
  std::size_t stride = 5;
  std::size_t train_stride = 1;
  double train_fraction = 0.6;  // share of evaluation-grid windows given to training
};

struct WindowSplit {
  WindowSet training;
  WindowSet evaluation;
};

/// Lays windows out so every window has `tokens.input_len` tokens of history;
/// the first `train_fraction` of the stride grid becomes the training region.
inline WindowSplit split_windows(std::size_t series_length, const WindowLayout& layout, const DatasetOptions& tokens) {
  if (!(layout.train_fraction > 0.0 && layout.train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie in (0, 1)");
  }
  if (layout.stride != layout.horizon) {
    throw ValidationError("backtest stride must equal horizon so holding periods tile");
  }
  const std::size_t offset = (tokens.input_len - 1) * tokens.token_spacing;
  if (offset >= series_length) throw ValidationError("insufficient data for the token history");
  const auto grid = rolling_windows(series_length - offset, layout.lookback, layout.horizon, layout.stride).shifted(offset);
  const auto n_train = static_cast<std::size_t>(std::floor(layout.train_fraction * static_cast<double>(grid.size())));
  if (n_train < 1 || n_train >= grid.size()) {
    throw ValidationError("insufficient data: need at least one training and one evaluation window (have " +
                          std::to_string(grid.size()) + " windows)");
  }
  WindowSplit split;
  split.evaluation = grid;
  split.evaluation.windows.erase(split.evaluation.windows.begin(),
                                 split.evaluation.windows.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::size_t train_end = split.evaluation.windows.front().target.begin;
  split.training = rolling_windows(train_end - offset, layout.lookback, layout.horizon, layout.train_stride).shifted(offset);
  return split;
}

/// Structural no-look-ahead check: every prediction input ends at or before its
/// holding period starts, and no training target reaches into evaluation.
inline void check_no_lookahead(const BacktestPlan& plan) {
  if (plan.windows.windows.empty()) throw ValidationError("backtest plan has no evaluation windows");
  const std::size_t first_hold = plan.windows.windows.front().target.begin;
  for (std::size_t k = 0; k < plan.windows.size(); ++k) {
    const auto& w = plan.windows.windows[k];
    const auto begin = token_history_begin(w.history.end, plan.windows.lookback, plan.tokens);
    if (w.history.end > w.target.begin || begin < 0 || w.target.end > plan.data.size()) {
      throw ComputationError("look-ahead or out-of-range in evaluation window " + std::to_string(k));
    }
    if (k > 0 && w.target.begin < plan.windows.windows[k - 1].target.end) {
      throw ComputationError("evaluation holding periods overlap at window " + std::to_string(k));
    }
  }
  for (std::size_t k = 0; k < plan.training_windows.size(); ++k) {
    const auto& w = plan.training_windows.windows[k];
    if (w.target.end > first_hold || w.history.end > w.target.begin) {
      throw ComputationError("training window " + std::to_string(k) + " overlaps the evaluation period");
    }
  }
}

inline void validate_plan(const BacktestPlan& plan) {
  if (plan.models.empty()) throw ValidationError("backtest plan needs at least one model");
  if (plan.kinds.empty()) throw ValidationError("backtest plan needs at least one matrix kind");
  if (plan.windows.stride != plan.windows.horizon) {
    throw ValidationError("backtest stride must equal horizon so holding periods tile");
  }
  if (plan.seeds.empty()) throw ValidationError("backtest plan needs at least one seed");
  for (const auto& m : plan.models) {
    if (m.name.empty()) throw ValidationError("model names must be non-empty");
    if (m.forecaster) {
      auto cfg = *m.forecaster;
      cfg.n_assets = plan.data.n_assets();
      if (cfg.input_len != plan.tokens.input_len) throw ValidationError("model '" + m.name + "': input_len mismatch");
      cfg.validate();
    }
  }
  plan.training.validate();
  check_no_lookahead(plan);
}

// ---------------------------------------------------------------------------

/// Mean of squared entrywise differences over all n^2 entries.
inline double matrix_mse(const RiskMatrix& prediction, const RiskMatrix& realized) {
  if (prediction.n() != realized.n()) throw ValidationError("matrix_mse: dimension mismatch");
  if (prediction.kind() != realized.kind()) throw ValidationError("matrix_mse: kind mismatch");
  if (prediction.n() == 0) return 0.0;
  return (prediction.values() - realized.values()).array().square().mean();
}

/// The baseline: trailing-lookback estimator used as the next-period forecast.
inline RiskMatrix sample_method_predict(const ReturnSeries& series, const Window& window, MatrixKind kind,
                                        Threshold threshold = {}) {
  if (window.history.end > series.size() || window.history.length() < 2) {
    throw ValidationError("sample_method_predict: insufficient history");
  }
  return estimate_risk(slice_rows(series.returns, window.history), kind, threshold);
}

inline std::size_t worker_count(std::size_t requested) {
  if (requested) return requested;
  if (const char* env = std::getenv("COVARCAST_THREADS")) {
    int v = 0;
    if (detail::parse_int(env, v) && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

namespace detail {

inline RunResult evaluate_run(const BacktestPlan& plan, MatrixKind kind, const TrainedModel* model, std::uint64_t seed) {
  RunResult run;
  run.seed = seed;
  std::vector<double> returns;
  for (std::size_t k = 0; k < plan.windows.size(); ++k) {
    const auto& w = plan.windows.windows[k];
    try {
      if (w.history.end > w.target.begin) throw ComputationError("prediction input overlaps the holding period");
      RiskMatrix predicted =
          model ? predict_matrix(*model, input_tokens(plan.data, w.history.end, plan.windows.lookback, kind, plan.tokens))
                : sample_method_predict(plan.data, w, kind, plan.tokens.threshold);
      const auto weights = optimize_weights(predicted, plan.portfolio.long_only, plan.portfolio.ridge);
      const Eigen::VectorXd held = portfolio_returns(weights, slice_rows(plan.data.returns, w.target));
      returns.insert(returns.end(), held.data(), held.data() + held.size());
      run.weights.emplace_back(weights.weights.data(), weights.weights.data() + weights.weights.size());
      const auto realized = estimate_risk(slice_rows(plan.data.returns, w.target), kind, plan.tokens.threshold);
      run.window_mse.push_back(matrix_mse(predicted, realized));
    } catch (const std::exception& e) {
      run.error = "window " + std::to_string(k) + ": " + e.what();
      return run;
    }
  }
  try {
    const auto stats = performance_stats(Eigen::Map<const Eigen::VectorXd>(returns.data(), static_cast<Eigen::Index>(returns.size())),
                                         plan.portfolio.sortino_target, plan.portfolio.annualization);
    run.period_returns = std::move(returns);
    run.net_value = stats.net_value;
    run.cumulative_return = stats.cumulative_return;
    run.sortino = stats.sortino;
    run.mean_mse = std::accumulate(run.window_mse.begin(), run.window_mse.end(), 0.0) /
                   static_cast<double>(run.window_mse.size());
  } catch (const std::exception& e) {
    run.error = std::string("performance: ") + e.what();
  }
  return run;
}

inline void summarize(ModelKindResult& r) {
  std::vector<const RunResult*> ok;
  for (const auto& run : r.runs) {
    if (run.error.empty()) ok.push_back(&run);
  }
  if (ok.empty()) {
    r.error = r.runs.empty() ? "no runs" : r.runs.front().error;
    return;
  }
  const double w = 1.0 / static_cast<double>(ok.size());
  r.mean_net_value.assign(ok.front()->net_value.size(), 0.0);
  for (const auto* run : ok) {
    for (std::size_t t = 0; t < r.mean_net_value.size(); ++t) r.mean_net_value[t] += w * run->net_value[t];
    r.mean_cumulative_return += w * run->cumulative_return;
    r.mean_sortino += w * run->sortino;
    r.mean_mse += w * run->mean_mse;
  }
}

}  // namespace detail

/// Trains a forecaster for one (model, kind, seed) on the plan's training windows.
inline TrainedModel train_for_plan(const BacktestPlan& plan, const ModelSpec& spec, MatrixKind kind, std::uint64_t seed,
                                   const TrainObserver& observer = {}) {
  auto cfg = *spec.forecaster;
  cfg.n_assets = plan.data.n_assets();
  auto tc = plan.training;
  tc.seed = seed;
  const auto ds = build_dataset(plan.data, plan.training_windows, kind, plan.tokens);
  return train(cfg, tc, ds, observer);
}

inline BacktestReport run_backtest(const BacktestPlan& plan) {
  validate_plan(plan);

  BacktestReport report;
  report.asset_ids = plan.data.asset_ids;
  report.metadata = plan.metadata;
  const auto& first = plan.windows.windows.front();
  report.dates.push_back(plan.data.dates[first.target.begin - 1]);
  for (const auto& w : plan.windows.windows) {
    report.rebalance_dates.push_back(plan.data.dates[w.target.begin]);
    for (std::size_t t = w.target.begin; t < w.target.end; ++t) report.dates.push_back(plan.data.dates[t]);
  }

  struct Job {
    std::size_t result;
    std::size_t run;
    const ModelSpec* spec;
    MatrixKind kind;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& spec : plan.models) {
    for (const auto kind : plan.kinds) {
      ModelKindResult r{spec.name, kind, spec.is_baseline(), {}, {}, 0.0, 0.0, 0.0, {}};
      const std::size_t index = report.results.size();
      if (spec.is_baseline()) {
        r.runs.resize(1);
        jobs.push_back({index, 0, &spec, kind, 0});
      } else {
        r.runs.resize(plan.seeds.size());
        for (std::size_t s = 0; s < plan.seeds.size(); ++s) jobs.push_back({index, s, &spec, kind, plan.seeds[s]});
      }
      report.results.push_back(std::move(r));
    }
  }

  parallel_for(jobs.size(), worker_count(plan.threads), [&](std::size_t i) {
    const Job& job = jobs[i];
    RunResult& slot = report.results[job.result].runs[job.run];
    if (job.spec->is_baseline()) {
      slot = detail::evaluate_run(plan, job.kind, nullptr, job.seed);
      return;
    }
    try {
      std::shared_ptr<const TrainedModel> model;
      if (const auto it = plan.pretrained.find(pretrained_key(job.spec->name, job.kind, job.seed));
          it != plan.pretrained.end()) {
        model = it->second;
      } else {
        model = std::make_shared<const TrainedModel>(train_for_plan(plan, *job.spec, job.kind, job.seed));
      }
      slot = detail::evaluate_run(plan, job.kind, model.get(), job.seed);
    } catch (const std::exception& e) {
      slot = RunResult{};
      slot.seed = job.seed;
      slot.error = std::string("training: ") + e.what();
    }
  });

  for (auto& r : report.results) detail::summarize(r);
  return report;
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {

inline nlohmann::json number_json(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
  return v;
}

inline double number_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    throw ValidationError("report: bad number '" + s + "'");
  }
  return j.get<double>();
}

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

inline std::string file_safe(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ComputationError("cannot write " + path.string());
  out << contents;
  if (!out) throw ComputationError("failed writing " + path.string());
}

}  // namespace detail

inline nlohmann::json to_json(const BacktestReport& report) {
  using detail::number_json;
  nlohmann::json j;
  j["metadata"] = report.metadata;
  j["asset_ids"] = report.asset_ids;
  j["dates"] = nlohmann::json::array();
  for (const auto& d : report.dates) j["dates"].push_back(format_date(d));
  j["rebalance_dates"] = nlohmann::json::array();
  for (const auto& d : report.rebalance_dates) j["rebalance_dates"].push_back(format_date(d));
  j["results"] = nlohmann::json::array();
  for (const auto& r : report.results) {
    nlohmann::json e = {{"model", r.model},
                        {"kind", to_string(r.kind)},
                        {"baseline", r.baseline},
                        {"error", r.error},
                        {"mean_cumulative_return", number_json(r.mean_cumulative_return)},
                        {"mean_sortino", number_json(r.mean_sortino)},
                        {"mean_mse", number_json(r.mean_mse)},
                        {"mean_net_value", r.mean_net_value},
                        {"runs", nlohmann::json::array()}};
    for (const auto& run : r.runs) {
      e["runs"].push_back({{"seed", run.seed},
                           {"error", run.error},
                           {"cumulative_return", number_json(run.cumulative_return)},
                           {"sortino", number_json(run.sortino)},
                           {"mean_mse", number_json(run.mean_mse)},
                           {"window_mse", run.window_mse},
                           {"period_returns", run.period_returns},
                           {"net_value", run.net_value},
                           {"weights", run.weights}});
    }
    j["results"].push_back(std::move(e));
  }
  return j;
}

inline BacktestReport report_from_json(const nlohmann::json& j) {
  using detail::number_from_json;
  try {
    BacktestReport report;
    report.metadata = j.at("metadata");
    report.asset_ids = j.at("asset_ids").get<std::vector<std::string>>();
    for (const auto& d : j.at("dates")) report.dates.push_back(parse_date(d.get<std::string>()));
    for (const auto& d : j.at("rebalance_dates")) report.rebalance_dates.push_back(parse_date(d.get<std::string>()));
    for (const auto& e : j.at("results")) {
      ModelKindResult r;
      r.model = e.at("model").get<std::string>();
      r.kind = parse_matrix_kind(e.at("kind").get<std::string>());
      r.baseline = e.at("baseline").get<bool>();
      r.error = e.at("error").get<std::string>();
      r.mean_cumulative_return = number_from_json(e.at("mean_cumulative_return"));
      r.mean_sortino = number_from_json(e.at("mean_sortino"));
      r.mean_mse = number_from_json(e.at("mean_mse"));
      r.mean_net_value = e.at("mean_net_value").get<std::vector<double>>();
      for (const auto& x : e.at("runs")) {
        RunResult run;
        run.seed = x.at("seed").get<std::uint64_t>();
        run.error = x.at("error").get<std::string>();
        run.cumulative_return = number_from_json(x.at("cumulative_return"));
        run.sortino = number_from_json(x.at("sortino"));
        run.mean_mse = number_from_json(x.at("mean_mse"));
        run.window_mse = x.at("window_mse").get<std::vector<double>>();
        run.period_returns = x.at("period_returns").get<std::vector<double>>();
        run.net_value = x.at("net_value").get<std::vector<double>>();
        run.weights = x.at("weights").get<std::vector<std::vector<double>>>();
        r.runs.push_back(std::move(run));
      }
      report.results.push_back(std::move(r));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report JSON: ") + e.what());
  }
}

inline BacktestReport read_report(const std::filesystem::path& summary_json) {
  std::ifstream in(summary_json);
  if (!in) throw ValidationError("cannot open report " + summary_json.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report is not valid JSON: ") + e.what());
  }
  return report_from_json(j);
}

/// Writes summary.json, netvalue_<kind>.csv, mse_table.csv,
/// performance_table.csv and weights/<model>_<kind>_seed<k>.csv under `dir`.
inline std::vector<std::filesystem::path> emit_report(const BacktestReport& report, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "weights", ec);
  if (ec) throw ComputationError("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  auto emit = [&](const fs::path& p, const std::string& text) {
    detail::write_file(p, text);
    written.push_back(p);
  };

  emit(dir / "summary.json", to_json(report).dump(2) + "\n");

  std::vector<std::string> models;
  std::vector<MatrixKind> kinds;
  for (const auto& r : report.results) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    if (std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) kinds.push_back(r.kind);
  }

  for (const auto kind : kinds) {
    std::ostringstream csv;
    csv << "date";
    for (const auto& m : models) csv << ',' << m;
    csv << '\n';
    for (std::size_t t = 0; t < report.dates.size(); ++t) {
      csv << format_date(report.dates[t]);
      for (const auto& m : models) {
        const auto* r = report.find(m, kind);
        csv << ',';
        if (r && t < r->mean_net_value.size()) csv << detail::format_number(r->mean_net_value[t]);
      }
      csv << '\n';
    }
    emit(dir / ("netvalue_" + to_string(kind) + ".csv"), csv.str());
  }

  {
    std::ostringstream csv;
    csv << "model";
    for (const auto kind : kinds) csv << ',' << to_string(kind) << "_mse";
    csv << '\n';
    for (const auto& m : models) {
      csv << m;
      for (const auto kind : kinds) {
        const auto* r = report.find(m, kind);
        csv << ',';
        if (r && r->error.empty()) csv << detail::format_number(r->mean_mse);
      }
      csv << '\n';
    }
    emit(dir / "mse_table.csv", csv.str());
  }

  {
    std::ostringstream csv;
    csv << "model,kind,return,sortino\n";
    for (const auto& r : report.results) {
      csv << r.model << ',' << to_string(r.kind) << ',';
      if (r.error.empty()) csv << detail::format_number(r.mean_cumulative_return) << ',' << detail::format_number(r.mean_sortino);
      else csv << ',';
      csv << '\n';
    }
    emit(dir / "performance_table.csv", csv.str());
  }

  for (const auto& r : report.results) {
    for (const auto& run : r.runs) {
      if (!run.error.empty()) continue;
      std::ostringstream csv;
      csv << "date,asset_id,weight\n";
      for (std::size_t k = 0; k < run.weights.size() && k < report.rebalance_dates.size(); ++k) {
        for (std::size_t i = 0; i < report.asset_ids.size(); ++i) {
          csv << format_date(report.rebalance_dates[k]) << ',' << report.asset_ids[i] << ','
              << detail::format_number(run.weights[k][i]) << '\n';
        }
      }
      emit(dir / "weights" /
               (detail::file_safe(r.model) + "_" + to_string(r.kind) + "_seed" + std::to_string(run.seed) + ".csv"),
           csv.str());
    }
  }
  return written;
}

}  // namespace covarcast
