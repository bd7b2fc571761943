/**
 * @file forecaster.hpp
 * @brief Attention forecaster for next-horizon risk matrices.
 *
 * Pipeline for one prediction:
 *
 *   L past risk matrices --vech--> L x m tokens          (m = n(n+1)/2)
 *     --standardize--> --linear to d_model + sinusoidal positions-->
 *     --encoder stack (full attention, or Autoformer-style decomposed blocks)-->
 *     --mean over time--> --linear head--> --unstandardize--> vech (1 x m)
 *                                                       or raw n x n (1 x n^2)
 *
 * predict_matrix() then reshapes to n x n and applies nearest_psd().
 *
 * Training minimizes the regulated loss
 *
 *   total = mse + alpha * (sym + psd)
 *   mse   = mean squared error (vech coordinates, or all n^2 entries in raw mode)
 *   sym   = (1/n^2) sum_ij |P_ij - P_ji|
 *   psd   = (1/n) sum_i max(0, -lambda_i((P + P^T)/2))
 *
 * where P is the predicted matrix divided by FeatureScaling::loss_scale. With
 * the vech head P is symmetric by construction and `sym` is identically zero.
 */
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "covarcast/market_data.hpp"
#include "covarcast/nn/checkpoint.hpp"
#include "covarcast/nn/layers.hpp"
#include "covarcast/nn/optim.hpp"
#include "covarcast/risk_matrix.hpp"

namespace covarcast {

enum class AttentionVariant { full, decomposed };
enum class HeadMode { vech, raw };

inline std::string to_string(AttentionVariant v) { return v == AttentionVariant::full ? "transformer" : "autoformer"; }
inline std::string to_string(HeadMode h) { return h == HeadMode::vech ? "vech" : "raw"; }

inline AttentionVariant parse_attention_variant(std::string_view name) {
  if (name == "transformer" || name == "full") return AttentionVariant::full;
  if (name == "autoformer" || name == "decomposed") return AttentionVariant::decomposed;
  if (name == "informer" || name == "reformer") {
    throw ValidationError("model variant '" + std::string(name) +
                          "' is not implemented; available variants: transformer, autoformer");
  }
  throw ValidationError("unknown model variant '" + std::string(name) + "'");
}

inline HeadMode parse_head_mode(std::string_view name) {
  if (name == "vech") return HeadMode::vech;
  if (name == "raw") return HeadMode::raw;
  throw ValidationError("unknown head mode '" + std::string(name) + "' (expected vech|raw)");
}

/// Per-coordinate standardization, fitted on the training split.
struct FeatureScaling {
  Eigen::RowVectorXd input_mean;
  Eigen::RowVectorXd input_scale;
  Eigen::RowVectorXd output_mean;
  Eigen::RowVectorXd output_scale;
  double loss_scale = 1.0;

  [[nodiscard]] bool fitted() const { return input_mean.size() > 0; }

  static FeatureScaling identity(std::size_t dim) {
    const auto m = static_cast<Eigen::Index>(dim);
    return {Eigen::RowVectorXd::Zero(m), Eigen::RowVectorXd::Ones(m), Eigen::RowVectorXd::Zero(m),
            Eigen::RowVectorXd::Ones(m), 1.0};
  }
};

struct ForecastModelConfig {
  std::size_t n_assets = 0;
  std::size_t input_len = 4;
  std::size_t d_model = 256;
  int heads = 8;
  std::size_t encoder_layers = 2;
  std::size_t d_ff = 0;            // 0: 2 * d_model
  double dropout = 0.05;
  AttentionVariant variant = AttentionVariant::full;
  HeadMode head = HeadMode::vech;
  std::size_t moving_average = 0;  // 0: largest odd window <= min(input_len, 25)
  bool zero_head = true;
  FeatureScaling scaling;

  [[nodiscard]] std::size_t token_dim() const { return vech_length(n_assets); }
  [[nodiscard]] std::size_t output_dim() const { return head == HeadMode::vech ? token_dim() : n_assets * n_assets; }
  [[nodiscard]] std::size_t resolved_d_ff() const { return d_ff ? d_ff : 2 * d_model; }
  [[nodiscard]] std::size_t resolved_moving_average() const {
    if (moving_average) return moving_average;
    std::size_t w = std::min<std::size_t>(input_len, 25);
    return w % 2 ? w : w - 1;
  }

  void validate() const {
    if (n_assets < 1) throw ValidationError("model config: n_assets must be >= 1");
    if (input_len < 1) throw ValidationError("model config: input_len must be >= 1");
    if (d_model < 1) throw ValidationError("model config: d_model must be >= 1");
    if (heads < 1 || d_model % static_cast<std::size_t>(heads) != 0) {
      throw ValidationError("model config: d_model " + std::to_string(d_model) + " is not divisible by heads " +
                            std::to_string(heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("model config: dropout must lie in [0, 1)");
    if (variant == AttentionVariant::decomposed) {
      const auto w = resolved_moving_average();
      if (w % 2 == 0) throw ValidationError("model config: moving_average window must be odd");
      if (w > input_len) throw ValidationError("model config: moving_average window exceeds input_len");
    }
  }
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  double penalty_alpha = 0.1;
  std::size_t batch_size = 32;
  double validation_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("training: learning_rate must be > 0");
    if (!(penalty_alpha >= 0.0)) throw ValidationError("training: alpha must be >= 0");
    if (batch_size < 1) throw ValidationError("training: batch_size must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ValidationError("training: validation_fraction must lie in (0, 1)");
    }
  }
};

struct LossBreakdown {
  double mse = 0.0;
  double sym = 0.0;
  double psd = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Dataset

struct DatasetOptions {
  std::size_t input_len = 4;
  std::size_t token_spacing = 5;
  Threshold threshold = {};
};

struct Sample {
  nn::Matrix tokens;           // input_len x m
  Eigen::RowVectorXd target;   // 1 x m
  IndexRange input;            // rows read by the tokens
  IndexRange target_range;
};

struct Dataset {
  MatrixKind kind = MatrixKind::covariance;
  std::size_t n_assets = 0;
  std::size_t input_len = 0;
  std::vector<Sample> samples;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] bool empty() const { return samples.empty(); }
};

/// First row touched by the tokens of a window whose history ends at `history_end`.
inline std::ptrdiff_t token_history_begin(std::size_t history_end, std::size_t lookback, const DatasetOptions& opts) {
  return static_cast<std::ptrdiff_t>(history_end) - static_cast<std::ptrdiff_t>(lookback) -
         static_cast<std::ptrdiff_t>((opts.input_len - 1) * opts.token_spacing);
}

/// Token j is vech(estimator over the lookback rows ending at
/// history_end - (L-1-j) * token_spacing); the last token is the window's history.
inline nn::Matrix input_tokens(const ReturnSeries& series, std::size_t history_end, std::size_t lookback,
                               MatrixKind kind, const DatasetOptions& opts) {
  if (opts.input_len < 1) throw ValidationError("input_len must be >= 1");
  if (opts.token_spacing < 1) throw ValidationError("token_spacing must be >= 1");
  if (history_end > series.size()) throw ValidationError("history range exceeds the series");
  if (token_history_begin(history_end, lookback, opts) < 0) {
    throw ValidationError("insufficient history for " + std::to_string(opts.input_len) + " tokens ending at row " +
                          std::to_string(history_end));
  }
  const auto m = static_cast<Eigen::Index>(vech_length(series.n_assets()));
  nn::Matrix tokens(static_cast<Eigen::Index>(opts.input_len), m);
  for (std::size_t j = 0; j < opts.input_len; ++j) {
    const std::size_t end = history_end - (opts.input_len - 1 - j) * opts.token_spacing;
    const auto risk = estimate_risk(slice_rows(series.returns, {end - lookback, end}), kind, opts.threshold);
    tokens.row(static_cast<Eigen::Index>(j)) = vech(risk).values().transpose();
  }
  return tokens;
}

inline Dataset build_dataset(const ReturnSeries& series, const WindowSet& windows, MatrixKind kind,
                             const DatasetOptions& opts = {}) {
  Dataset ds{kind, series.n_assets(), opts.input_len, {}};
  ds.samples.reserve(windows.size());
  for (const auto& w : windows.windows) {
    if (w.target.end > series.size()) throw ValidationError("window target range exceeds the series");
    Sample s;
    s.tokens = input_tokens(series, w.history.end, windows.lookback, kind, opts);
    s.target = vech(estimate_risk(slice_rows(series.returns, w.target), kind, opts.threshold)).values().transpose();
    s.input = {static_cast<std::size_t>(token_history_begin(w.history.end, windows.lookback, opts)), w.history.end};
    s.target_range = w.target;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

/// Standardization statistics from samples [0, count).
inline FeatureScaling fit_feature_scaling(const Dataset& ds, std::size_t count) {
  if (count == 0 || count > ds.size()) throw ValidationError("fit_feature_scaling: bad sample count");
  const auto m = static_cast<Eigen::Index>(vech_length(ds.n_assets));
  auto stats = [m](const Eigen::MatrixXd& rows, Eigen::RowVectorXd& mean, Eigen::RowVectorXd& scale) {
    mean = rows.colwise().mean();
    scale.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double sd = std::sqrt((rows.col(k).array() - mean(k)).square().mean());
      scale(k) = sd > 1e-300 ? sd : 1.0;
    }
  };
  Eigen::MatrixXd token_rows(static_cast<Eigen::Index>(count * ds.input_len), m);
  Eigen::MatrixXd target_rows(static_cast<Eigen::Index>(count), m);
  for (std::size_t i = 0; i < count; ++i) {
    token_rows.middleRows(static_cast<Eigen::Index>(i * ds.input_len), static_cast<Eigen::Index>(ds.input_len)) =
        ds.samples[i].tokens;
    target_rows.row(static_cast<Eigen::Index>(i)) = ds.samples[i].target;
  }
  FeatureScaling f;
  stats(token_rows, f.input_mean, f.input_scale);
  stats(target_rows, f.output_mean, f.output_scale);
  double diag = 0.0;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(ds.n_assets); ++i) {
    diag += target_rows.col(vech_index(i, i)).cwiseAbs().mean();
  }
  diag /= static_cast<double>(ds.n_assets);
  f.loss_scale = diag > 1e-300 ? diag : 1.0;
  return f;
}

// ---------------------------------------------------------------------------
// Loss

struct LossTerms {
  nn::Tensor total;
  LossBreakdown breakdown;
};

/// Regulated loss on one prediction. `prediction` is 1 x m (vech head) or
/// 1 x n^2 (raw head, row-major); `target` is the true vech. Both are divided
/// by `loss_scale` first.
inline LossTerms regulated_loss(const nn::Tensor& prediction, const Eigen::RowVectorXd& target, double alpha,
                                HeadMode head, std::size_t n_assets, double loss_scale = 1.0) {
  if (alpha < 0.0) throw ValidationError("loss alpha must be >= 0");
  const auto n = static_cast<Eigen::Index>(n_assets);
  const auto m = n * (n + 1) / 2;
  if (target.size() != m) throw ValidationError("loss: target length does not match n_assets");
  const double inv = 1.0 / loss_scale;
  const nn::Tensor pred = nn::scale(prediction, inv);

  nn::Tensor mse;
  nn::Tensor matrix;
  if (head == HeadMode::vech) {
    if (prediction.rows() != 1 || prediction.cols() != m) {
      throw ValidationError("loss: prediction length " + std::to_string(prediction.numel()) +
                            " does not match target length " + std::to_string(m));
    }
    mse = nn::mean(nn::square(nn::sub(pred, nn::Tensor::constant(target * inv))));
    matrix = nn::unvech(pred, n);
  } else {
    if (prediction.numel() != n * n) throw ValidationError("loss: raw prediction must have n^2 entries");
    matrix = nn::reshape(pred, n, n);
    const RiskMatrix truth = unvech(VechVector(target.transpose()));
    mse = nn::mean(nn::square(nn::sub(matrix, nn::Tensor::constant(truth.values() * inv))));
  }
  const nn::Tensor sym = nn::scale(nn::sum(nn::abs(nn::sub(matrix, nn::transpose(matrix)))), 1.0 / double(n * n));
  const nn::Tensor psd = nn::negative_eigenvalue_mean(matrix);
  const nn::Tensor total = nn::add(mse, nn::scale(nn::add(sym, psd), alpha));
  return {total, {mse.item(), sym.item(), psd.item(), total.item()}};
}

/// Loss on a predicted vech.
inline LossBreakdown loss_total(const VechVector& prediction, const VechVector& target, double alpha) {
  if (prediction.size() != target.size()) throw ValidationError("loss_total: length mismatch");
  nn::NoGradGuard guard;
  return regulated_loss(nn::Tensor::constant(prediction.values().transpose()), target.values().transpose(), alpha,
                        HeadMode::vech, target.n())
      .breakdown;
}

/// Loss on a raw (possibly asymmetric) predicted matrix.
inline LossBreakdown loss_total(const Eigen::MatrixXd& raw_prediction, const VechVector& target, double alpha) {
  if (raw_prediction.rows() != static_cast<Eigen::Index>(target.n()) || raw_prediction.cols() != raw_prediction.rows()) {
    throw ValidationError("loss_total: raw prediction must be n x n");
  }
  nn::NoGradGuard guard;
  const nn::Matrix row_major = raw_prediction;
  const nn::Matrix row = Eigen::Map<const nn::Matrix>(row_major.data(), 1, row_major.size());
  return regulated_loss(nn::Tensor::constant(row), target.values().transpose(), alpha, HeadMode::raw, target.n())
      .breakdown;
}

// ---------------------------------------------------------------------------
// Model

class ForecastModel {
 public:
  ForecastModel(ForecastModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    if (!config_.scaling.fitted()) config_.scaling = FeatureScaling::identity(config_.token_dim());
    std::mt19937_64 rng(seed);
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto m = static_cast<Eigen::Index>(config_.token_dim());
    const auto d_ff = static_cast<Eigen::Index>(config_.resolved_d_ff());

    input_ = nn::LinearParams::init(m, d, rng);
    input_.register_into(params_, "input");
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
      const std::string prefix = "encoder." + std::to_string(l);
      if (config_.variant == AttentionVariant::full) {
        full_blocks_.push_back(nn::EncoderBlockParams::init(d, config_.heads, d_ff, rng));
        full_blocks_.back().register_into(params_, prefix);
      } else {
        decomposed_blocks_.push_back(nn::DecomposedBlockParams::init(d, config_.heads, d_ff, rng));
        decomposed_blocks_.back().register_into(params_, prefix);
      }
    }
    if (config_.variant == AttentionVariant::decomposed) {
      final_norm_ = nn::LayerNormParams::init(d);
      final_norm_.register_into(params_, "final_norm");
    }
    const auto out = static_cast<Eigen::Index>(config_.output_dim());
    head_ = config_.zero_head ? nn::LinearParams::zeros(d, out) : nn::LinearParams::init(d, out, rng);
    head_.register_into(params_, "head");
    positions_ = nn::positional_encoding(static_cast<Eigen::Index>(config_.input_len), d);
    refresh_scaling();
  }

  ForecastModel(const ForecastModel&) = delete;
  ForecastModel& operator=(const ForecastModel&) = delete;
  ForecastModel(ForecastModel&&) = default;
  ForecastModel& operator=(ForecastModel&&) = default;

  /// Independent copy (parameters are not shared).
  [[nodiscard]] ForecastModel clone() const {
    ForecastModel copy(config_, 0);
    copy.params_.restore(params_.snapshot());
    return copy;
  }

  [[nodiscard]] const ForecastModelConfig& config() const { return config_; }
  [[nodiscard]] const nn::ParameterSet& parameters() const { return params_; }
  [[nodiscard]] const nn::LinearParams& head() const { return head_; }

  void set_scaling(FeatureScaling scaling) {
    config_.scaling = std::move(scaling);
    refresh_scaling();
  }

  /// Unstandardized head output, 1 x output_dim.
  [[nodiscard]] nn::Tensor forward(const nn::Matrix& tokens, const nn::ForwardContext& ctx = {}) const {
    const auto m = static_cast<Eigen::Index>(config_.token_dim());
    if (tokens.rows() != static_cast<Eigen::Index>(config_.input_len) || tokens.cols() != m) {
      throw ValidationError("forward: expected " + std::to_string(config_.input_len) + "x" + std::to_string(m) +
                            " tokens, got " + nn::shape_string({tokens.rows(), tokens.cols()}));
    }
    nn::Matrix scaled = (tokens.rowwise() - config_.scaling.input_mean).array().rowwise() /
                        config_.scaling.input_scale.array();
    nn::Tensor h = nn::add(nn::linear_forward(nn::Tensor::constant(std::move(scaled)), input_),
                           nn::Tensor::constant(positions_));
    h = nn::dropout(h, ctx);

    if (config_.variant == AttentionVariant::full) {
      for (const auto& block : full_blocks_) h = nn::encoder_block(h, block, ctx);
    } else {
      const auto window = static_cast<Eigen::Index>(config_.resolved_moving_average());
      auto parts = nn::series_decompose(h, window);
      nn::Tensor trend = parts.trend;
      h = parts.seasonal;
      for (const auto& block : decomposed_blocks_) {
        auto out = nn::decomposed_block(h, block, window, ctx);
        h = out.seasonal;
        trend = nn::add(trend, out.trend);
      }
      h = nn::add(nn::layer_norm(h, final_norm_), trend);
    }
    const nn::Tensor out = nn::linear_forward(nn::mean_rows(h), head_);
    return nn::add_row(nn::mul_row(out, output_scale_), output_mean_);
  }

  /// Predicted matrix before PSD repair: unvech of the vech head, or the raw n x n head.
  [[nodiscard]] Eigen::MatrixXd predict_raw(const nn::Matrix& tokens) const {
    nn::NoGradGuard guard;
    const nn::Tensor out = forward(tokens);
    const auto n = static_cast<Eigen::Index>(config_.n_assets);
    if (config_.head == HeadMode::vech) return unvech(VechVector(out.value().row(0).transpose())).values();
    return Eigen::Map<const nn::Matrix>(out.value().data(), n, n);
  }

  [[nodiscard]] nlohmann::json architecture() const;

 private:
  void refresh_scaling() {
    const auto& s = config_.scaling;
    const auto out = static_cast<Eigen::Index>(config_.output_dim());
    nn::Matrix mean(1, out), scale(1, out);
    const auto n = static_cast<Eigen::Index>(config_.n_assets);
    for (Eigen::Index k = 0; k < out; ++k) {
      const auto src = config_.head == HeadMode::vech ? k : vech_index(k / n, k % n);
      mean(0, k) = s.output_mean(src);
      scale(0, k) = s.output_scale(src);
    }
    output_mean_ = nn::Tensor::constant(std::move(mean));
    output_scale_ = nn::Tensor::constant(std::move(scale));
  }

  ForecastModelConfig config_;
  nn::ParameterSet params_;
  nn::LinearParams input_;
  std::vector<nn::EncoderBlockParams> full_blocks_;
  std::vector<nn::DecomposedBlockParams> decomposed_blocks_;
  nn::LayerNormParams final_norm_;
  nn::LinearParams head_;
  nn::Matrix positions_;
  nn::Tensor output_mean_;
  nn::Tensor output_scale_;
};

// ---------------------------------------------------------------------------
// JSON for configs

namespace detail {
inline std::vector<double> to_vector(const Eigen::RowVectorXd& v) { return {v.data(), v.data() + v.size()}; }
inline Eigen::RowVectorXd to_row(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace detail

inline nlohmann::json to_json(const ForecastModelConfig& c) {
  nlohmann::json j = {{"n_assets", c.n_assets},
                      {"input_len", c.input_len},
                      {"d_model", c.d_model},
                      {"heads", c.heads},
                      {"encoder_layers", c.encoder_layers},
                      {"d_ff", c.resolved_d_ff()},
                      {"dropout", c.dropout},
                      {"variant", to_string(c.variant)},
                      {"head", to_string(c.head)},
                      {"moving_average", c.resolved_moving_average()},
                      {"zero_head", c.zero_head}};
  if (c.scaling.fitted()) {
    j["scaling"] = {{"input_mean", detail::to_vector(c.scaling.input_mean)},
                    {"input_scale", detail::to_vector(c.scaling.input_scale)},
                    {"output_mean", detail::to_vector(c.scaling.output_mean)},
                    {"output_scale", detail::to_vector(c.scaling.output_scale)},
                    {"loss_scale", c.scaling.loss_scale}};
  }
  return j;
}

inline ForecastModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ForecastModelConfig c;
    c.n_assets = j.at("n_assets").get<std::size_t>();
    c.input_len = j.at("input_len").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.heads = j.at("heads").get<int>();
    c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.variant = parse_attention_variant(j.at("variant").get<std::string>());
    c.head = parse_head_mode(j.at("head").get<std::string>());
    c.moving_average = j.at("moving_average").get<std::size_t>();
    c.zero_head = j.at("zero_head").get<bool>();
    if (j.contains("scaling")) {
      const auto& s = j.at("scaling");
      c.scaling.input_mean = detail::to_row(s.at("input_mean").get<std::vector<double>>());
      c.scaling.input_scale = detail::to_row(s.at("input_scale").get<std::vector<double>>());
      c.scaling.output_mean = detail::to_row(s.at("output_mean").get<std::vector<double>>());
      c.scaling.output_scale = detail::to_row(s.at("output_scale").get<std::vector<double>>());
      c.scaling.loss_scale = s.at("loss_scale").get<double>();
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config JSON: ") + e.what());
  }
}

inline nlohmann::json ForecastModel::architecture() const { return to_json(config_); }

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"epochs", t.epochs},
          {"alpha", t.penalty_alpha},         {"batch_size", t.batch_size},
          {"validation_fraction", t.validation_fraction}, {"seed", t.seed}};
}

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"mse", l.mse}, {"sym", l.sym}, {"psd", l.psd}, {"total", l.total}};
}

inline LossBreakdown loss_from_json(const nlohmann::json& j) {
  return {j.at("mse").get<double>(), j.at("sym").get<double>(), j.at("psd").get<double>(), j.at("total").get<double>()};
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown train;
  std::optional<LossBreakdown> validation;
};

struct TrainedModel {
  ForecastModel model;
  MatrixKind kind = MatrixKind::covariance;
  TrainConfig train_config;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 1-based; 0 = initial parameters
};

struct TrainObserver {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const LossBreakdown&)> on_batch;
};

namespace detail {

inline void add_to(LossBreakdown& acc, const LossBreakdown& x, double w) {
  acc.mse += w * x.mse;
  acc.sym += w * x.sym;
  acc.psd += w * x.psd;
  acc.total += w * x.total;
}

inline LossBreakdown evaluate(const ForecastModel& model, const Dataset& ds, std::size_t begin, std::size_t end,
                              double alpha) {
  nn::NoGradGuard guard;
  LossBreakdown acc;
  const double w = 1.0 / static_cast<double>(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const auto terms = regulated_loss(model.forward(ds.samples[i].tokens), ds.samples[i].target, alpha,
                                      model.config().head, ds.n_assets, model.config().scaling.loss_scale);
    add_to(acc, terms.breakdown, w);
  }
  return acc;
}

}  // namespace detail

/// Mini-batch Adam on the regulated loss. The last `validation_fraction` of the
/// samples (chronologically) is held out; the parameters with the lowest
/// validation total are kept. Deterministic for a given seed.
inline TrainedModel train(ForecastModelConfig config, const TrainConfig& tc, const Dataset& ds,
                          const TrainObserver& observer = {}) {
  tc.validate();
  if (ds.empty()) throw ValidationError("train: empty dataset");
  if (config.n_assets == 0) config.n_assets = ds.n_assets;
  if (config.n_assets != ds.n_assets || config.input_len != ds.input_len) {
    throw ValidationError("train: model config does not match dataset shape");
  }
  const std::size_t n = ds.size();
  std::size_t n_val = n >= 2 ? static_cast<std::size_t>(std::floor(tc.validation_fraction * static_cast<double>(n))) : 0;
  if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  const std::size_t n_train = n - n_val;

  config.scaling = fit_feature_scaling(ds, n_train);
  TrainedModel result{ForecastModel(config, tc.seed), ds.kind, tc, {}, 0};
  ForecastModel& model = result.model;
  const auto& params = model.parameters();
  auto state = nn::OptimizerState::for_parameters(params, {tc.learning_rate});

  std::mt19937_64 rng(tc.seed ^ 0x9E3779B97F4A7C15ULL);
  const nn::ForwardContext ctx{true, model.config().dropout, &rng};
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  double best = n_val ? detail::evaluate(model, ds, n_train, n, tc.penalty_alpha).total
                      : std::numeric_limits<double>::infinity();
  auto best_params = params.snapshot();

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord record{epoch, {}, std::nullopt};
    for (std::size_t start = 0; start < n_train; start += tc.batch_size) {
      const std::size_t stop = std::min(n_train, start + tc.batch_size);
      const double w = 1.0 / static_cast<double>(stop - start);
      params.zero_grad();
      nn::Tensor batch_loss;
      LossBreakdown batch;
      for (std::size_t b = start; b < stop; ++b) {
        const auto& s = ds.samples[order[b]];
        auto terms = regulated_loss(model.forward(s.tokens, ctx), s.target, tc.penalty_alpha, model.config().head,
                                    ds.n_assets, model.config().scaling.loss_scale);
        detail::add_to(batch, terms.breakdown, w);
        batch_loss = batch_loss.defined() ? nn::add(batch_loss, terms.total) : terms.total;
      }
      if (!std::isfinite(batch.total)) {
        throw ComputationError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                               std::to_string(start));
      }
      if (observer.on_batch) observer.on_batch(batch);
      nn::scale(batch_loss, w).backward();
      nn::adam_step(params, state);
      detail::add_to(record.train, batch, static_cast<double>(stop - start) / static_cast<double>(n_train));
    }
    if (n_val) {
      record.validation = detail::evaluate(model, ds, n_train, n, tc.penalty_alpha);
      if (!std::isfinite(record.validation->total)) {
        throw ComputationError("non-finite validation loss at epoch " + std::to_string(epoch));
      }
      if (record.validation->total < best) {
        best = record.validation->total;
        best_params = params.snapshot();
        result.best_epoch = epoch;
      }
    } else {
      best_params = params.snapshot();
      result.best_epoch = epoch;
    }
    result.history.push_back(record);
    if (observer.on_epoch) observer.on_epoch(record);
  }
  params.restore(best_params);
  return result;
}

/// forward -> n x n -> nearest_psd.
inline RiskMatrix predict_matrix(const ForecastModel& model, const nn::Matrix& tokens, MatrixKind kind) {
  return nearest_psd(model.predict_raw(tokens), kind);
}

inline RiskMatrix predict_matrix(const TrainedModel& trained, const nn::Matrix& tokens) {
  return predict_matrix(trained.model, tokens, trained.kind);
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_trained_model(const std::filesystem::path& stem, const TrainedModel& trained) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : trained.history) {
    nlohmann::json e = {{"epoch", r.epoch}, {"train", to_json(r.train)}};
    if (r.validation) e["validation"] = to_json(*r.validation);
    history.push_back(e);
  }
  nn::write_checkpoint(stem, trained.model.architecture(), trained.model.parameters(),
                       {{"kind", to_string(trained.kind)},
                        {"training", to_json(trained.train_config)},
                        {"best_epoch", trained.best_epoch},
                        {"history", history}});
}

inline TrainedModel load_trained_model(const std::filesystem::path& stem) {
  const auto manifest = nn::read_checkpoint_manifest(stem);
  ForecastModel model(model_config_from_json(manifest.at("architecture")), 0);
  nn::load_checkpoint_values(stem, manifest, model.parameters());
  TrainedModel trained{std::move(model), parse_matrix_kind(manifest.at("kind").get<std::string>()), {}, {}, 0};
  const auto& t = manifest.at("training");
  trained.train_config = {t.at("learning_rate").get<double>(), t.at("epochs").get<std::size_t>(),
                          t.at("alpha").get<double>(),         t.at("batch_size").get<std::size_t>(),
                          t.at("validation_fraction").get<double>(), t.at("seed").get<std::uint64_t>()};
  trained.best_epoch = manifest.at("best_epoch").get<std::size_t>();
  for (const auto& e : manifest.at("history")) {
    EpochRecord r{e.at("epoch").get<std::size_t>(), loss_from_json(e.at("train")), std::nullopt};
    if (e.contains("validation")) r.validation = loss_from_json(e.at("validation"));
    trained.history.push_back(r);
  }
  return trained;
}

}  // namespace covarcast
