// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "covarcast/backtest.hpp"
#include "covarcast/scenarios.hpp"
#include "covarcast/verification.hpp"
#include "oracles.hpp"

using namespace covarcast;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// --------------------------------------------------------------------------

Outcome ac1_roundtrip() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> size(1, 50);
  int failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const Eigen::MatrixXd m = oracle::random_symmetric(size(rng), rng);
    if (unvech(vech(m)).values() != m) ++failures;
  }
  const double secs = seconds_since(t0);
  o.require(failures == 0, std::to_string(failures) + " inexact roundtrips");
  o.require(secs < 5.0, "runtime " + fmt(secs) + " s >= 5 s");
  o.detail = o.pass ? "1000/1000 exact, " + fmt(secs) + " s" : o.detail;
  return o;
}

Outcome ac2_psd_repair() {
  Outcome o;
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> size(1, 20);
  double worst_eig = 0.0, worst_sym = 0.0, worst_idem = 0.0, worst_fix = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int n = size(rng);
    const Eigen::MatrixXd m = oracle::random_matrix(n, n, rng);
    const Eigen::MatrixXd r = nearest_psd(m).values();
    worst_eig = std::min(worst_eig, min_eigenvalue(r));
    worst_sym = std::max(worst_sym, (r - r.transpose()).cwiseAbs().maxCoeff());
    worst_idem = std::max(worst_idem, (nearest_psd(r).values() - r).cwiseAbs().maxCoeff());
    const Eigen::MatrixXd p = oracle::random_psd(n, rng);
    worst_fix = std::max(worst_fix, (nearest_psd(p).values() - p).cwiseAbs().maxCoeff());
  }
  Eigen::MatrixXd ex(2, 2);
  ex << 1, 2, 2, 1;
  const double example = (nearest_psd(ex).values() - Eigen::MatrixXd::Constant(2, 2, 1.5)).cwiseAbs().maxCoeff();
  o.require(worst_eig >= -1e-8, "min eigenvalue " + fmt(worst_eig));
  o.require(worst_sym <= 1e-12, "asymmetry " + fmt(worst_sym));
  o.require(worst_idem <= 1e-9, "idempotence error " + fmt(worst_idem));
  o.require(worst_fix <= 1e-10, "PSD input moved by " + fmt(worst_fix));
  o.require(example <= 1e-12, "worked example error " + fmt(example));
  if (o.pass) {
    o.detail = "min eig " + fmt(worst_eig) + ", asym " + fmt(worst_sym) + ", idem " + fmt(worst_idem) + ", fix " +
               fmt(worst_fix) + ", example " + fmt(example);
  }
  return o;
}

Outcome ac3_estimators() {
  Outcome o;
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> rows(2, 80), cols(1, 10);
  double worst_cov = 0.0, worst_semi = 0.0;
  int not_psd = 0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::MatrixXd x = oracle::random_matrix(rows(rng), cols(rng), rng, 0.02);
    worst_cov = std::max(worst_cov, (sample_covariance(x).values() - oracle::covariance(x)).cwiseAbs().maxCoeff());
    const auto semi = semi_covariance(x);
    worst_semi = std::max(worst_semi, (semi.values() - oracle::semi_covariance(x)).cwiseAbs().maxCoeff());
    if (!is_psd(semi.values(), 1e-10)) ++not_psd;
  }
  o.require(worst_cov <= 1e-12, "covariance error " + fmt(worst_cov));
  o.require(worst_semi <= 1e-12, "semi-covariance error " + fmt(worst_semi));
  o.require(not_psd == 0, std::to_string(not_psd) + " semi-covariances not PSD");
  if (o.pass) o.detail = "cov err " + fmt(worst_cov) + ", semi err " + fmt(worst_semi) + ", 200/200 PSD";
  return o;
}

Outcome ac4_loss_identity() {
  Outcome o;
  // Every training batch, both heads, alpha swept.
  ScenarioOptions so;
  so.n_assets = 3;
  so.n_days = 400;
  const auto data = generate_synthetic_returns(regime_switching_scenario(so));
  DatasetOptions tokens;
  tokens.input_len = 3;
  const auto windows = rolling_windows(data.size() - 10, 21, 5, 2).shifted(10);
  std::size_t batches = 0;
  double worst = 0.0;
  bool vech_sym_zero = true;
  for (const auto kind : {MatrixKind::covariance, MatrixKind::semi_covariance}) {
    const auto ds = build_dataset(data, windows, kind, tokens);
    for (const double alpha : {0.01, 0.1, 1.0}) {
      for (const auto head : {HeadMode::vech, HeadMode::raw}) {
        ForecastModelConfig cfg;
        cfg.input_len = 3;
        cfg.d_model = 8;
        cfg.heads = 2;
        cfg.encoder_layers = 1;
        cfg.d_ff = 16;
        cfg.head = head;
        cfg.zero_head = false;
        TrainConfig tc;
        tc.epochs = 2;
        tc.penalty_alpha = alpha;
        tc.learning_rate = 1e-3;
        tc.batch_size = 16;
        TrainObserver obs;
        obs.on_batch = [&](const LossBreakdown& l) {
          ++batches;
          worst = std::max(worst, std::abs(l.total - (l.mse + alpha * (l.sym + l.psd))));
          if (head == HeadMode::vech && l.sym != 0.0) vech_sym_zero = false;
        };
        train(cfg, tc, ds, obs);
      }
    }
  }
  o.require(worst <= 1e-12, "identity violated by " + fmt(worst));
  o.require(vech_sym_zero, "vech-head batch with non-zero symmetry term");

  std::mt19937_64 rng(404);
  bool psd_zero = true;
  for (int i = 0; i < 100; ++i) {
    const auto p = vech(oracle::random_psd(1 + i % 8, rng));
    if (loss_total(p, p, 1.0).psd != 0.0) psd_zero = false;
  }
  o.require(psd_zero, "PSD reconstruction with non-zero eigenvalue term");
  Eigen::MatrixXd raw(2, 2);
  raw << 0, 1, 0, 0;
  const double sym = loss_total(raw, VechVector(Eigen::Vector3d::Zero()), 1.0).sym;
  const double psd = loss_total(VechVector(Eigen::Vector3d(1, 2, 1)), VechVector(Eigen::Vector3d::Zero()), 1.0).psd;
  o.require(std::abs(sym - 0.5) <= 1e-12, "sym example " + fmt(sym));
  o.require(std::abs(psd - 0.5) <= 1e-12, "psd example " + fmt(psd));
  if (o.pass) o.detail = std::to_string(batches) + " batches, max |total - (mse + a(sym + psd))| " + fmt(worst) + ", examples exact";
  return o;
}

Outcome ac5_gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto cases = run_grad_check_suite(1e-5);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : cases) {
    if (c.result.max_relative_error > worst) {
      worst = c.result.max_relative_error;
      worst_name = c.name;
    }
  }
  o.require(worst <= 1e-4, "max relative error " + fmt(worst) + " in " + worst_name);
  o.require(secs < 60.0, "runtime " + fmt(secs) + " s");
  if (o.pass) o.detail = std::to_string(cases.size()) + " cases, max rel err " + fmt(worst) + " (" + worst_name + "), " + fmt(secs) + " s";
  return o;
}

// Generic c on sample covariances; power-of-two c, which scales exactly, on both families.
Outcome ac6_min_variance() {
  Outcome o;
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<int> size(1, 10);
  std::normal_distribution<double> normal(0.0, 1.0);
  int beaten = 0, inexact = 0;
  double worst_sum = 0.0, worst_scale = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int n = size(rng);
    const Eigen::MatrixXd covariance = oracle::covariance(oracle::random_matrix(n + 5, n, rng, 0.01));
    const Eigen::MatrixXd triangular = oracle::random_psd(n, rng);
    for (const Eigen::MatrixXd* s : {&covariance, &triangular}) {
      const Eigen::VectorXd w = min_variance_weights(RiskMatrix(*s, MatrixKind::covariance)).weights;
      worst_sum = std::max(worst_sum, std::abs(w.sum() - 1.0));
      const double objective = portfolio_variance(*s, w);
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 10000; ++k) {
        Eigen::VectorXd v(n);
        for (int j = 0; j < n; ++j) v(j) = w(j) + 0.5 * normal(rng);
        v.array() += (1.0 - v.sum()) / n;
        best = std::min(best, portfolio_variance(*s, v));
      }
      if (objective > best * (1.0 + 1e-12)) ++beaten;
      for (const double c : {0x1p-20, 0.25, 8.0, 0x1p14}) {
        if (min_variance_weights(RiskMatrix(c * *s, MatrixKind::covariance)).weights != w) ++inexact;
      }
      if (s != &covariance) continue;
      for (const double c : {1e-6, 0.01, 7.0, 1e4}) {
        worst_scale = std::max(worst_scale, (min_variance_weights(RiskMatrix(c * *s, MatrixKind::covariance)).weights - w)
                                                .cwiseAbs()
                                                .maxCoeff());
      }
    }
  }
  Eigen::Matrix2d ex;
  ex << 0.04, 0.01, 0.01, 0.09;
  const Eigen::VectorXd w2 = min_variance_weights(RiskMatrix(ex, MatrixKind::covariance)).weights;
  const double ex_err = std::max(std::abs(w2(0) - 0.7273), std::abs(w2(1) - 0.2727));
  o.require(beaten == 0, std::to_string(beaten) + " matrices where a random portfolio beat the closed form");
  o.require(worst_sum <= 1e-10, "weight sum error " + fmt(worst_sum));
  o.require(ex_err <= 1e-4, "2x2 example error " + fmt(ex_err));
  o.require(worst_scale <= 1e-12, "scale invariance error " + fmt(worst_scale));
  o.require(inexact == 0, std::to_string(inexact) + " power-of-two scalings changed the weights");
  if (o.pass) {
    o.detail = "200 matrices unbeaten, sum err " + fmt(worst_sum) + ", example [" + fmt(w2(0)) + ", " + fmt(w2(1)) +
               "], scale err " + fmt(worst_scale) + ", power-of-two scaling exact";
  }
  return o;
}

Outcome ac7_sortino() {
  Outcome o;
  const double a = sortino_ratio(Eigen::Vector2d(0.01, -0.01), 0.0);
  const double b = sortino_ratio(Eigen::Vector2d(0.03, -0.01), 0.0, 1.0);
  const double c = sortino_ratio(Eigen::Vector2d(0.01, 0.02), 0.0);
  o.require(std::abs(a) <= 1e-9, "zero-mean example " + fmt(a));
  o.require(std::abs(b - 0.01 / std::sqrt(5e-5)) <= 1e-9, "asymmetric example " + fmt(b));
  o.require(std::isinf(c) && c > 0, "no-downside example " + fmt(c));
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> shift(-0.01, 0.01), target(-0.002, 0.002);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Eigen::VectorXd r = oracle::random_matrix(20 + i % 50, 1, rng, 0.01);
    const double s = shift(rng), t = target(rng);
    const double base = sortino_ratio(r, t);
    const double moved = sortino_ratio((r.array() + s).matrix(), t + s);
    worst = std::max(worst, std::abs(base - moved) / std::max(1.0, std::abs(base)));
  }
  o.require(worst <= 1e-9, "translation inconsistency " + fmt(worst));
  if (o.pass) o.detail = "examples exact, 1000 series translation err " + fmt(worst);
  return o;
}

Outcome ac8_no_lookahead() {
  Outcome o;
  std::mt19937_64 rng(808);
  std::uniform_int_distribution<std::size_t> lookback(2, 80), horizon(1, 25), tokens(1, 8), spacing(1, 12), stride(1, 9);
  std::uniform_real_distribution<double> fraction(0.05, 0.95);
  ScenarioOptions so;
  so.n_assets = 2;
  so.n_days = 1200;
  const auto data = generate_synthetic_returns(single_regime_scenario(so));
  int plans = 0, violations = 0;
  for (int trial = 0; trial < 500; ++trial) {
    WindowLayout layout;
    layout.lookback = lookback(rng);
    layout.horizon = layout.stride = horizon(rng);
    layout.train_stride = stride(rng);
    layout.train_fraction = fraction(rng);
    DatasetOptions opts;
    opts.input_len = tokens(rng);
    opts.token_spacing = spacing(rng);
    WindowSplit split;
    try {
      split = split_windows(data.size(), layout, opts);
    } catch (const ValidationError&) {
      continue;
    }
    BacktestPlan plan;
    plan.data = data;
    plan.windows = split.evaluation;
    plan.training_windows = split.training;
    plan.tokens = opts;
    ++plans;
    try {
      check_no_lookahead(plan);
    } catch (const std::exception&) {
      ++violations;
      continue;
    }
    // Independent per-window assertion on the rows the predictor actually reads.
    const std::size_t first_hold = plan.windows.windows.front().target.begin;
    for (const auto& w : plan.windows.windows) {
      const auto begin = token_history_begin(w.history.end, layout.lookback, opts);
      if (begin < 0 || w.history.end - 1 >= w.target.begin) ++violations;
    }
    for (const auto& w : plan.training_windows.windows) {
      if (w.target.end > first_hold || w.history.end - 1 >= w.target.begin) ++violations;
    }
  }
  o.require(plans >= 100, "only " + std::to_string(plans) + " valid plans generated");
  o.require(violations == 0, std::to_string(violations) + " violations");
  if (o.pass) o.detail = std::to_string(plans) + " fuzzed plans, 0 violations";
  return o;
}

double vech_mse(const RiskMatrix& a, const RiskMatrix& b) {
  return (vech(a).values() - vech(b).values()).squaredNorm() / static_cast<double>(vech(a).values().size());
}

// Scored both on vech coordinates and on all n^2 entries (the report metric).
Outcome ac9_forecast_beats_baseline() {
  Outcome o;
  const auto t0 = Clock::now();
  int vech_wins[2] = {0, 0}, full_wins[2] = {0, 0};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ScenarioOptions so;
    so.n_assets = 5;
    so.n_days = 1500;
    so.seed = seed;
    const auto data = generate_synthetic_returns(regime_switching_scenario(so));
    DatasetOptions tokens;
    tokens.input_len = 4;
    tokens.token_spacing = 5;
    const auto split = split_windows(data.size(), {}, tokens);
    BacktestPlan plan;
    plan.data = data;
    plan.windows = split.evaluation;
    plan.training_windows = split.training;
    plan.tokens = tokens;
    plan.seeds = {seed};
    plan.threads = 1;
    ForecastModelConfig cfg;
    cfg.input_len = 4;
    cfg.d_model = 16;
    cfg.heads = 4;
    cfg.encoder_layers = 1;
    cfg.d_ff = 32;
    plan.models = {ModelSpec::sample_method(), ModelSpec{"transformer", cfg}};
    plan.training.learning_rate = 3e-4;
    plan.training.epochs = 15;
    plan.training.batch_size = 32;
    for (const auto kind : plan.kinds) {
      plan.pretrained[pretrained_key("transformer", kind, seed)] =
          std::make_shared<const TrainedModel>(train_for_plan(plan, plan.models[1], kind, seed));
    }
    const auto report = run_backtest(plan);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto kind = plan.kinds[k];
      const auto& trained = *plan.pretrained.at(pretrained_key("transformer", kind, seed));
      double model_vech = 0.0, base_vech = 0.0;
      for (const auto& w : plan.windows.windows) {
        const auto realized = estimate_risk(slice_rows(data.returns, w.target), kind, tokens.threshold);
        const auto input = input_tokens(data, w.history.end, plan.windows.lookback, kind, tokens);
        model_vech += vech_mse(predict_matrix(trained, input), realized);
        base_vech += vech_mse(sample_method_predict(data, w, kind, tokens.threshold), realized);
      }
      vech_wins[k] += model_vech <= base_vech;
      const auto* base = report.find("sample", kind);
      const auto* model = report.find("transformer", kind);
      full_wins[k] += model->error.empty() && model->mean_mse <= base->mean_mse;
    }
  }
  const double secs = seconds_since(t0);
  const char* names[2] = {"covariance", "semi-covariance"};
  for (int k = 0; k < 2; ++k) {
    o.require(vech_wins[k] >= 4, std::string(names[k]) + " vech wins " + std::to_string(vech_wins[k]) + "/5");
    o.require(full_wins[k] >= 4, std::string(names[k]) + " n^2-entry wins " + std::to_string(full_wins[k]) + "/5");
  }
  o.require(secs < 600.0, "runtime " + fmt(secs) + " s");
  o.detail = (o.pass ? "" : o.detail + "; ") + "transformer MSE <= sample MSE, vech / n^2 entries: covariance " +
             std::to_string(vech_wins[0]) + "/5 / " + std::to_string(full_wins[0]) + "/5, semi-covariance " +
             std::to_string(vech_wins[1]) + "/5 / " + std::to_string(full_wins[1]) + "/5, " + fmt(secs) + " s";
  return o;
}

// --------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t fields(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

int shell(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" COVARCAST_CLI_PATH "' " + args + " > log.txt 2>&1";
  return std::system(cmd.c_str());
}

Outcome ac10_end_to_end() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "covarcast_acceptance_e2e";
  fs::remove_all(root);
  const std::string config =
      "[synthetic]\nscenario = regime_switching\nn_days = 500\nn_assets = 3\nseed = 9\n"
      "[window]\ninput_len = 3\n"
      "[model]\nvariants = [transformer, autoformer]\nd_model = 8\nheads = 2\nlayers = 1\nmoving_average = 3\n"
      "[training]\nepochs = 2\nseeds = [1, 2]\n"
      "[output]\ndir = out\n";
  for (const auto* run : {"a", "b"}) {
    fs::create_directories(root / run);
    std::ofstream(root / run / "c.toml") << config;
    for (const auto* step : {"synth --config c.toml", "train --config c.toml --data out/prices.csv",
                             "backtest --config c.toml --data out/prices.csv"}) {
      if (shell(root / run, step) != 0) {
        o.require(false, std::string("`") + step + "` failed in run " + run + ": " + slurp(root / run / "log.txt"));
        return o;
      }
    }
  }
  const fs::path out = root / "a" / "out";

  // Schemas.
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  for (const auto* key : {"metadata", "asset_ids", "dates", "rebalance_dates", "results"}) {
    o.require(summary.contains(key), std::string("summary.json lacks ") + key);
  }
  o.require(summary.value("results", nlohmann::json::array()).size() == 6, "summary.json should hold 3 models x 2 kinds");
  for (const auto& r : summary.value("results", nlohmann::json::array())) {
    for (const auto* key : {"model", "kind", "mean_mse", "mean_cumulative_return", "mean_sortino", "mean_net_value", "runs"}) {
      o.require(r.contains(key), std::string("result lacks ") + key);
    }
  }
  const std::size_t n_dates = summary.value("dates", nlohmann::json::array()).size();
  for (const auto* kind : {"covariance", "semi_covariance"}) {
    const auto net = lines(slurp(out / (std::string("netvalue_") + kind + ".csv")));
    o.require(!net.empty() && net[0] == "date,sample,transformer,autoformer", std::string("netvalue_") + kind + " header");
    o.require(net.size() == n_dates + 1, std::string("netvalue_") + kind + " row count");
    for (const auto& l : net) o.require(fields(l) == 4, std::string("netvalue_") + kind + " ragged row");
  }
  const auto mse = lines(slurp(out / "mse_table.csv"));
  o.require(mse.size() == 4 && mse[0] == "model,covariance_mse,semi_covariance_mse", "mse_table.csv schema");
  const auto perf = lines(slurp(out / "performance_table.csv"));
  o.require(perf.size() == 7 && perf[0] == "model,kind,return,sortino", "performance_table.csv schema");
  for (const auto& l : perf) o.require(fields(l) == 4, "performance_table.csv ragged row");

  // Reproducibility: identical manifests, byte-identical outputs.
  o.require(slurp(out / "run_manifest.json") == slurp(root / "b" / "out" / "run_manifest.json"), "manifests differ");
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(out)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), out);
    const auto other = root / "b" / "out" / rel;
    o.require(fs::exists(other) && slurp(entry.path()) == slurp(other), rel.string() + " differs between runs");
    ++compared;
  }
  if (o.pass) {
    o.detail = "synth -> train -> backtest twice: schemas valid, " + std::to_string(compared) + " files byte-identical";
    fs::remove_all(root);
  }
  return o;
}

Outcome ac11_downside_direction() {
  Outcome o;
  int wins = 0;
  std::string values;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ScenarioOptions so;
    so.n_assets = 5;
    so.n_days = 8000;
    so.seed = seed;
    so.shock_probability = 0.05;
    so.shock_size = 0.04;
    so.skew_regime_days = 2000;
    const auto data = generate_synthetic_returns(downside_skew_scenario(so));
    DatasetOptions tokens;
    tokens.input_len = 1;
    WindowLayout layout;
    layout.lookback = 126;
    layout.train_fraction = 0.05;
    const auto split = split_windows(data.size(), layout, tokens);
    BacktestPlan plan;
    plan.data = data;
    plan.windows = split.evaluation;
    plan.training_windows = split.training;
    plan.tokens = tokens;
    plan.models = {ModelSpec::sample_method()};
    const auto report = run_backtest(plan);
    const double cov = report.find("sample", MatrixKind::covariance)->mean_sortino;
    const double semi = report.find("sample", MatrixKind::semi_covariance)->mean_sortino;
    wins += semi >= cov;
    values += (values.empty() ? "" : " ") + fmt(semi - cov);
  }
  o.require(wins >= 4, "semi-covariance Sortino >= covariance Sortino in " + std::to_string(wins) + "/5 seeds");
  o.detail = (o.pass ? "" : o.detail + "; ") + std::to_string(wins) + "/5 seeds, Sortino differences [" + values + "]";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 vech roundtrip", ac1_roundtrip},
      {"AC2 PSD repair", ac2_psd_repair},
      {"AC3 estimator oracles", ac3_estimators},
      {"AC4 loss identity", ac4_loss_identity},
      {"AC5 gradient correctness", ac5_gradients},
      {"AC6 minimum-variance optimality", ac6_min_variance},
      {"AC7 Sortino metric", ac7_sortino},
      {"AC8 no look-ahead", ac8_no_lookahead},
      {"AC9 forecast beats baseline", ac9_forecast_beats_baseline},
      {"AC10 end-to-end CLI", ac10_end_to_end},
      {"AC11 downside-risk direction", ac11_downside_direction},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const auto space = name.find(' ');
    std::cout << name.substr(0, space) << (o.pass ? " PASS " : " FAIL ") << name.substr(space + 1) << ": " << o.detail
              << std::endl;
    failed += !o.pass;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
