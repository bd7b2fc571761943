/**
 * @file cli.hpp
 * @brief `covarcast` subcommands.
 *
 *   covarcast synth      [--config F] [--out D] [--set k=v ...]   write <out>/prices.csv
 *   covarcast ingest     [--config F] [--data P] [--set k=v ...]  validate data, print summary
 *   covarcast train      [--config F] [--data P] [--out D] ...    write <out>/checkpoints/
 *   covarcast backtest   [--config F] [--data P] [--out D] ...    write the report under <out>
 *   covarcast grad-check [--epsilon E]                            finite-difference suite
 *
 * Exit codes: 0 success, 1 validation error (bad flags, config or data),
 * 2 runtime failure. Every subcommand except grad-check writes
 * <out>/run_manifest.json.
 */
#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "covarcast/config.hpp"
#include "covarcast/verification.hpp"

namespace covarcast {

namespace cli_detail {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> overrides;
};

/// defaults < config file < --data/--out < --set (in order).
inline RunConfig resolve_config(const CommonOptions& o, bool synthetic_only = false) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config_file(o.config);
  if (!o.data.empty()) c.data.path = o.data;
  if (!o.out.empty()) c.output.dir = o.out;
  for (const auto& s : o.overrides) apply_override(c, s);
  if (synthetic_only) c.data.path.clear();
  validate_config(c);
  return c;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw ComputationError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  detail::write_file(path, text);
}

inline void write_manifest(const std::string& command, const RunConfig& c, const LoadedData& d) {
  write_text(fs::path(c.output.dir) / "run_manifest.json", run_manifest(command, c, d.sha256, d.source).dump(2) + "\n");
}

inline fs::path checkpoint_dir(const RunConfig& c) { return fs::path(c.output.dir) / "checkpoints"; }

inline fs::path checkpoint_stem(const RunConfig& c, const std::string& variant, MatrixKind kind, std::uint64_t seed) {
  return checkpoint_dir(c) / (detail::file_safe(variant) + "_" + to_string(kind) + "_seed" + std::to_string(seed));
}

/// Everything a trained checkpoint depends on.
inline nlohmann::json training_fingerprint(const RunConfig& c, const LoadedData& d) {
  const auto j = to_json(c);
  return {{"data_sha256", d.sha256}, {"data", j.at("data")},          {"window", j.at("window")},
          {"model", j.at("model")},  {"training", j.at("training")}, {"threshold", j.at("portfolio").at("threshold")}};
}

struct TrainJob {
  std::string variant;
  MatrixKind kind;
  std::uint64_t seed;
};

inline std::vector<TrainJob> train_jobs(const RunConfig& c) {
  std::vector<TrainJob> jobs;
  for (const auto& v : c.model.variants) {
    for (const auto k : c.portfolio.kinds) {
      for (const auto s : c.training.seeds) jobs.push_back({v, k, s});
    }
  }
  return jobs;
}

/// Loads checkpoints written by `train` for this exact configuration and data.
/// Returns nullopt when no checkpoint index exists.
inline std::optional<std::map<std::string, std::shared_ptr<const TrainedModel>>> load_checkpoints(const RunConfig& c,
                                                                                                  const LoadedData& d) {
  const auto index_path = checkpoint_dir(c) / "index.json";
  if (!fs::exists(index_path)) return std::nullopt;
  std::ifstream in(index_path);
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint index " + index_path.string() + " is not valid JSON: " + e.what());
  }
  if (index.value("fingerprint", nlohmann::json()) != training_fingerprint(c, d)) {
    throw ValidationError("checkpoints in " + checkpoint_dir(c).string() +
                          " were trained with a different configuration or data; rerun `train` or remove them");
  }
  std::map<std::string, std::shared_ptr<const TrainedModel>> models;
  for (const auto& job : train_jobs(c)) {
    const auto stem = checkpoint_stem(c, job.variant, job.kind, job.seed);
    auto trained = std::make_shared<const TrainedModel>(load_trained_model(stem));
    if (trained->kind != job.kind || trained->model.config().n_assets != d.series.n_assets()) {
      throw ValidationError("checkpoint " + stem.string() + " does not match the configured model");
    }
    models[pretrained_key(job.variant, job.kind, job.seed)] = std::move(trained);
  }
  return models;
}

inline void print_usage(std::ostream& out, const CLI::App& app) { out << app.help(); }

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_synth(const CommonOptions& o, std::ostream& out) {
  const auto c = resolve_config(o, true);
  const auto data = load_data(c);
  const auto path = fs::path(c.output.dir) / "prices.csv";
  write_text(path, data.price_csv);
  write_manifest("synth", c, data);
  out << "wrote " << path.string() << " (" << data.series.size() + 1 << " dates x " << data.series.n_assets()
      << " assets, scenario " << c.synthetic.scenario << ", seed " << c.synthetic.options.seed << ")\n"
      << "sha256 " << data.sha256 << "\n";
  return 0;
}

inline int cmd_ingest(const CommonOptions& o, std::ostream& out) {
  const auto c = resolve_config(o);
  const auto data = load_data(c);
  const auto& s = data.series;
  const auto split = split_windows(s.size(), c.window.layout, dataset_options(c));
  write_manifest("ingest", c, data);
  out << "source   " << data.source << "\n"
      << "sha256   " << data.sha256 << "\n"
      << "returns  " << s.size() << " x " << s.n_assets() << " (" << (c.data.returns == ReturnMethod::simple ? "simple" : "log")
      << ")\n";
  if (s.size() > 0) out << "range    " << format_date(s.dates.front()) << " .. " << format_date(s.dates.back()) << "\n";
  out << "asset    mean         volatility\n";
  for (std::size_t i = 0; i < s.n_assets(); ++i) {
    const auto col = s.returns.col(static_cast<Eigen::Index>(i));
    const double mean = col.mean();
    const double sd = s.size() > 1 ? std::sqrt((col.array() - mean).square().sum() / static_cast<double>(s.size() - 1)) : 0.0;
    out << std::left << std::setw(9) << s.asset_ids[i] << std::setw(13) << std::setprecision(6) << mean << sd << "\n";
  }
  out << "windows  " << split.training.size() << " training, " << split.evaluation.size() << " evaluation\n";
  return 0;
}

inline int cmd_train(const CommonOptions& o, std::ostream& out) {
  const auto c = resolve_config(o);
  const auto data = load_data(c);
  const auto plan = build_plan(c, data);
  const auto jobs = train_jobs(c);
  if (jobs.empty()) throw ValidationError("nothing to train: model.variants is empty");

  std::vector<std::optional<TrainedModel>> trained(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), worker_count(c.output.threads), [&](std::size_t i) {
    const auto& job = jobs[i];
    const ModelSpec spec{job.variant, model_config(c, job.variant, data.series.n_assets())};
    try {
      trained[i].emplace(train_for_plan(plan, spec, job.kind, job.seed));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!errors[i].empty()) {
      throw ComputationError("training " + jobs[i].variant + "/" + to_string(jobs[i].kind) + "/seed " +
                             std::to_string(jobs[i].seed) + " failed: " + errors[i]);
    }
  }

  std::error_code ec;
  fs::create_directories(checkpoint_dir(c), ec);
  if (ec) throw ComputationError("cannot create " + checkpoint_dir(c).string() + ": " + ec.message());
  nlohmann::json index = {{"fingerprint", training_fingerprint(c, data)}, {"checkpoints", nlohmann::json::array()}};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto stem = checkpoint_stem(c, jobs[i].variant, jobs[i].kind, jobs[i].seed);
    save_trained_model(stem, *trained[i]);
    index["checkpoints"].push_back(stem.filename().string());
    const auto& h = trained[i]->history;
    out << jobs[i].variant << " " << to_string(jobs[i].kind) << " seed " << jobs[i].seed << ": best epoch "
        << trained[i]->best_epoch << "/" << h.size();
    if (!h.empty()) {
      out << ", final train loss " << h.back().train.total;
      if (h.back().validation) out << ", validation loss " << h.back().validation->total;
    }
    out << "\n";
  }
  write_text(checkpoint_dir(c) / "index.json", index.dump(2) + "\n");
  write_manifest("train", c, data);
  out << "wrote " << jobs.size() << " checkpoints to " << checkpoint_dir(c).string() << "\n";
  return 0;
}

inline int cmd_backtest(const CommonOptions& o, std::ostream& out) {
  const auto c = resolve_config(o);
  const auto data = load_data(c);
  auto plan = build_plan(c, data);
  if (auto loaded = load_checkpoints(c, data)) {
    plan.pretrained = std::move(*loaded);
    out << "using " << plan.pretrained.size() << " checkpoints from " << checkpoint_dir(c).string() << "\n";
  }
  const auto report = run_backtest(plan);
  emit_report(report, c.output.dir);
  write_manifest("backtest", c, data);

  bool all_failed = true;
  out << std::left << std::setw(14) << "model" << std::setw(17) << "kind" << std::setw(14) << "mean_mse" << std::setw(12)
      << "return"
      << "sortino\n";
  for (const auto& r : report.results) {
    out << std::setw(14) << r.model << std::setw(17) << to_string(r.kind);
    if (r.error.empty()) {
      all_failed = false;
      std::ostringstream row;
      row << std::left << std::scientific << std::setprecision(4) << std::setw(14) << r.mean_mse << std::fixed
          << std::setw(12) << r.mean_cumulative_return << r.mean_sortino;
      out << row.str() << "\n";
    } else {
      out << "failed: " << r.error << "\n";
    }
  }
  out << "report written to " << c.output.dir << "\n";
  return all_failed ? 2 : 0;
}

inline int cmd_grad_check(double epsilon, std::ostream& out) {
  const auto cases = run_grad_check_suite(epsilon);
  bool ok = true;
  out << std::left << std::setw(26) << "case" << std::setw(16) << "max_rel_error"
      << "worst coordinate\n";
  for (const auto& c : cases) {
    const bool pass = c.result.max_relative_error <= kGradCheckTolerance;
    ok = ok && pass;
    out << std::setw(26) << c.name << std::setw(16) << std::setprecision(3) << std::scientific
        << c.result.max_relative_error << std::defaultfloat << c.result.worst_parameter << (pass ? "" : "  FAIL") << "\n";
  }
  out << (ok ? "all gradients within " : "gradient check failed; tolerance ") << kGradCheckTolerance << "\n";
  return ok ? 0 : 2;
}

}  // namespace cli_detail

/// Runs one CLI invocation; `args` excludes the program name.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"covarcast: attention forecasts of covariance and semi-covariance matrices for minimum-variance portfolios",
               "covarcast"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CommonOptions opts;
  double epsilon = 1e-5;
  auto add_common = [&](CLI::App* sub, bool data, bool output) {
    sub->add_option("--config", opts.config, "Config file (INI/TOML subset)");
    if (data) sub->add_option("--data", opts.data, "Price CSV (overrides data.path)");
    if (output) sub->add_option("--out", opts.out, "Output directory (overrides output.dir)");
    sub->add_option("--set", opts.overrides, "Override a config value: section.key=value (repeatable)");
  };
  auto* synth = app.add_subcommand("synth", "Generate a synthetic price CSV");
  add_common(synth, false, true);
  auto* ingest = app.add_subcommand("ingest", "Validate a price file and print a summary");
  add_common(ingest, true, true);
  auto* train_cmd = app.add_subcommand("train", "Train forecasters and write checkpoints");
  add_common(train_cmd, true, true);
  auto* backtest = app.add_subcommand("backtest", "Run the rolling backtest and write the report");
  add_common(backtest, true, true);
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient verification");
  grad->add_option("--epsilon", epsilon, "Central-difference step")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    print_usage(err, app);
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(opts, out);
    if (ingest->parsed()) return cmd_ingest(opts, out);
    if (train_cmd->parsed()) return cmd_train(opts, out);
    if (backtest->parsed()) return cmd_backtest(opts, out);
    if (grad->parsed()) return cmd_grad_check(epsilon, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  print_usage(err, app);
  return 1;
}

inline int run_command(int argc, const char* const* argv) {
  return run_command(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace covarcast
