/**
 * @file layers.hpp
 * @brief Attention building blocks: linear maps, scaled dot-product and
 *        multi-head attention, layer norm, dropout, moving-average series
 *        decomposition and the two encoder block flavours.
 *
 * Sequences are L x d tensors (one row per time step).
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "covarcast/nn/tensor.hpp"

namespace covarcast::nn {

/// Ordered, named parameter tensors. The order is the checkpoint order.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor) { entries_.emplace_back(std::move(name), std::move(tensor)); }

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }
  [[nodiscard]] const std::pair<std::string, Tensor>& operator[](std::size_t i) const { return entries_[i]; }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : entries_) total += static_cast<std::size_t>(t.numel());
    return total;
  }

  void zero_grad() const {
    for (const auto& [name, t] : entries_) t.zero_grad();
  }

  [[nodiscard]] std::vector<Matrix> snapshot() const {
    std::vector<Matrix> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_) out.push_back(t.value());
    return out;
  }

  void restore(const std::vector<Matrix>& values) const {
    if (values.size() != entries_.size()) throw ValidationError("parameter snapshot size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) entries_[i].second.mutable_value() = values[i];
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Training-mode switches threaded through a forward pass.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
};

inline Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

// ---------------------------------------------------------------------------

struct LinearParams {
  Tensor weight;  // d_in x d_out
  Tensor bias;    // 1 x d_out

  static LinearParams init(Eigen::Index d_in, Eigen::Index d_out, std::mt19937_64& rng) {
    return {Tensor::parameter(xavier_uniform(d_in, d_out, rng)), Tensor::parameter(Matrix::Zero(1, d_out))};
  }
  static LinearParams zeros(Eigen::Index d_in, Eigen::Index d_out) {
    return {Tensor::parameter(Matrix::Zero(d_in, d_out)), Tensor::parameter(Matrix::Zero(1, d_out))};
  }
  static LinearParams identity(Eigen::Index d) {
    return {Tensor::parameter(Matrix::Identity(d, d)), Tensor::parameter(Matrix::Zero(1, d))};
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    set.add(prefix + ".weight", weight);
    set.add(prefix + ".bias", bias);
  }
};

/// y = x W + b.
inline Tensor linear_forward(const Tensor& x, const LinearParams& p) {
  if (x.cols() != p.weight.rows()) {
    throw ValidationError("linear_forward: input has " + std::to_string(x.cols()) + " features, layer expects " +
                          std::to_string(p.weight.rows()));
  }
  return add_row(matmul(x, p.weight), p.bias);
}

/// softmax(Q K^T / sqrt(d_k)) V.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.cols() != k.cols()) throw ValidationError("scaled_dot_attention: Q and K must share d_k");
  if (k.rows() != v.rows()) throw ValidationError("scaled_dot_attention: K and V must share length");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Tensor weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk));
  return matmul(weights, v);
}

/// Bias-free projections W^Q, W^K, W^V (d_model x d_model) and W^O.
struct MultiHeadParams {
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor output;
  int heads = 1;

  static MultiHeadParams init(Eigen::Index d_model, int heads, std::mt19937_64& rng) {
    if (heads < 1 || d_model % heads != 0) {
      throw ValidationError("d_model " + std::to_string(d_model) + " is not divisible by heads " + std::to_string(heads));
    }
    MultiHeadParams p;
    p.query = Tensor::parameter(xavier_uniform(d_model, d_model, rng));
    p.key = Tensor::parameter(xavier_uniform(d_model, d_model, rng));
    p.value = Tensor::parameter(xavier_uniform(d_model, d_model, rng));
    p.output = Tensor::parameter(xavier_uniform(d_model, d_model, rng));
    p.heads = heads;
    return p;
  }

  static MultiHeadParams identity(Eigen::Index d_model, int heads) {
    return {Tensor::parameter(Matrix::Identity(d_model, d_model)), Tensor::parameter(Matrix::Identity(d_model, d_model)),
            Tensor::parameter(Matrix::Identity(d_model, d_model)), Tensor::parameter(Matrix::Identity(d_model, d_model)),
            heads};
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    set.add(prefix + ".query", query);
    set.add(prefix + ".key", key);
    set.add(prefix + ".value", value);
    set.add(prefix + ".output", output);
  }
};

/// Concat(head_1..head_h) W^O with head_i = attention over the i-th column block
/// of X W^Q, X W^K and X W^V.
inline Tensor multi_head_attention(const Tensor& x, const MultiHeadParams& p, int heads) {
  const auto d_model = p.query.cols();
  if (x.cols() != p.query.rows()) {
    throw ValidationError("multi_head_attention: input has " + std::to_string(x.cols()) + " features, layer expects " +
                          std::to_string(p.query.rows()));
  }
  if (heads < 1 || d_model % heads != 0) {
    throw ValidationError("multi_head_attention: d_model " + std::to_string(d_model) + " is not divisible by " +
                          std::to_string(heads) + " heads");
  }
  const Tensor q = matmul(x, p.query);
  const Tensor k = matmul(x, p.key);
  const Tensor v = matmul(x, p.value);
  if (heads == 1) return matmul(scaled_dot_attention(q, k, v), p.output);
  const auto d_head = d_model / heads;
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto off = h * d_head;
    outputs.push_back(scaled_dot_attention(slice_cols(q, off, d_head), slice_cols(k, off, d_head),
                                           slice_cols(v, off, d_head)));
  }
  return matmul(concat_cols(outputs), p.output);
}

inline Tensor multi_head_attention(const Tensor& x, const MultiHeadParams& p) {
  return multi_head_attention(x, p, p.heads);
}

// ---------------------------------------------------------------------------

struct LayerNormParams {
  Tensor gamma;  // 1 x d
  Tensor beta;   // 1 x d

  static LayerNormParams init(Eigen::Index d) {
    return {Tensor::parameter(Matrix::Ones(1, d)), Tensor::parameter(Matrix::Zero(1, d))};
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    set.add(prefix + ".gamma", gamma);
    set.add(prefix + ".beta", beta);
  }
};

inline Tensor layer_norm(const Tensor& x, const LayerNormParams& p, double eps = 1e-5) {
  return add_row(mul_row(normalize_rows(x, eps), p.gamma), p.beta);
}

/// Inverted dropout: zero with probability `rate`, survivors scaled by 1/(1-rate).
/// Identity when not training or rate == 0.
inline Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv : 0.0;
  return mul(x, Tensor::constant(std::move(mask)));
}

inline Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return dropout(x, rate, training, rng);
}

inline Tensor dropout(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout == 0.0) return x;
  if (ctx.rng == nullptr) throw ValidationError("training-mode dropout needs an RNG");
  return dropout(x, ctx.dropout, true, *ctx.rng);
}

// ---------------------------------------------------------------------------

/// L x L centered moving-average operator with edge-replication padding.
inline Matrix moving_average_operator(Eigen::Index length, Eigen::Index window) {
  if (window < 1 || window % 2 == 0) throw ValidationError("series_decompose window must be odd");
  if (window > length) throw ValidationError("series_decompose window exceeds sequence length");
  const auto half = window / 2;
  Matrix a = Matrix::Zero(length, length);
  const double w = 1.0 / static_cast<double>(window);
  for (Eigen::Index t = 0; t < length; ++t) {
    for (Eigen::Index s = t - half; s <= t + half; ++s) {
      a(t, std::clamp<Eigen::Index>(s, 0, length - 1)) += w;
    }
  }
  return a;
}

struct Decomposition {
  Tensor trend;
  Tensor seasonal;
};

/// trend = centered moving average over time (rows), seasonal = x - trend.
inline Decomposition series_decompose(const Tensor& x, Eigen::Index window) {
  const Tensor trend = matmul(Tensor::constant(moving_average_operator(x.rows(), window)), x);
  return {trend, sub(x, trend)};
}

// ---------------------------------------------------------------------------

struct FeedForwardParams {
  LinearParams expand;
  LinearParams contract;

  static FeedForwardParams init(Eigen::Index d_model, Eigen::Index d_ff, std::mt19937_64& rng) {
    return {LinearParams::init(d_model, d_ff, rng), LinearParams::init(d_ff, d_model, rng)};
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    expand.register_into(set, prefix + ".expand");
    contract.register_into(set, prefix + ".contract");
  }
};

inline Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  return linear_forward(gelu(linear_forward(x, p.expand)), p.contract);
}

/// Post-norm transformer encoder block.
struct EncoderBlockParams {
  MultiHeadParams attention;
  LayerNormParams attention_norm;
  FeedForwardParams feed_forward;
  LayerNormParams output_norm;

  static EncoderBlockParams init(Eigen::Index d_model, int heads, Eigen::Index d_ff, std::mt19937_64& rng) {
    return {MultiHeadParams::init(d_model, heads, rng), LayerNormParams::init(d_model),
            FeedForwardParams::init(d_model, d_ff, rng), LayerNormParams::init(d_model)};
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    attention.register_into(set, prefix + ".attention");
    attention_norm.register_into(set, prefix + ".attention_norm");
    feed_forward.register_into(set, prefix + ".feed_forward");
    output_norm.register_into(set, prefix + ".output_norm");
  }
};

inline Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p, const ForwardContext& ctx) {
  const Tensor h = layer_norm(add(x, dropout(multi_head_attention(x, p.attention), ctx)), p.attention_norm);
  return layer_norm(add(h, dropout(feed_forward(h, p.feed_forward), ctx)), p.output_norm);
}

/// Autoformer-style block: each residual sum is split by series_decompose,
/// the seasonal part flows on and the trend parts are accumulated.
struct DecomposedBlockParams {
  MultiHeadParams attention;
  FeedForwardParams feed_forward;

  static DecomposedBlockParams init(Eigen::Index d_model, int heads, Eigen::Index d_ff, std::mt19937_64& rng) {
    return {MultiHeadParams::init(d_model, heads, rng), FeedForwardParams::init(d_model, d_ff, rng)};
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    attention.register_into(set, prefix + ".attention");
    feed_forward.register_into(set, prefix + ".feed_forward");
  }
};

inline Decomposition decomposed_block(const Tensor& x, const DecomposedBlockParams& p, Eigen::Index window,
                                      const ForwardContext& ctx) {
  const auto first = series_decompose(add(x, dropout(multi_head_attention(x, p.attention), ctx)), window);
  const auto second =
      series_decompose(add(first.seasonal, dropout(feed_forward(first.seasonal, p.feed_forward), ctx)), window);
  return {add(first.trend, second.trend), second.seasonal};
}

/// Fixed sinusoidal position encodings, L x d.
inline Matrix positional_encoding(Eigen::Index length, Eigen::Index d_model) {
  Matrix pe(length, d_model);
  for (Eigen::Index pos = 0; pos < length; ++pos) {
    for (Eigen::Index i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      pe(pos, i) = (i % 2 == 0) ? std::sin(static_cast<double>(pos) * rate) : std::cos(static_cast<double>(pos) * rate);
    }
  }
  return pe;
}

}  // namespace covarcast::nn
