/**
 * @file verification.hpp
 * @brief Finite-difference gradient suite over every layer type and the full loss.
 */
#pragma once

#include <random>
#include <string>
#include <vector>

#include "covarcast/forecaster.hpp"
#include "covarcast/nn/grad_check.hpp"

namespace covarcast {

struct GradCheckCase {
  std::string name;
  nn::GradCheckResult result;
};

inline constexpr double kGradCheckTolerance = 1e-4;

namespace detail {

inline nn::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  nn::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

/// sum(y * r) for a fixed random r, so no output coordinate is privileged.
inline nn::Tensor probe_loss(const nn::Tensor& y, const nn::Matrix& r) { return nn::sum(nn::mul(y, nn::Tensor::constant(r))); }

}  // namespace detail

/// Runs the gradient suite at the given step; all cases use double precision,
/// disabled dropout, and small random shapes.
inline std::vector<GradCheckCase> run_grad_check_suite(double epsilon = 1e-5, std::uint64_t seed = 7) {
  using namespace nn;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> cases;
  const Eigen::Index t = 5, d = 8, d_ff = 12;
  const int heads = 2;
  const ForwardContext eval{};

  auto run = [&](std::string name, const ParameterSet& params, const std::function<Tensor()>& loss) {
    cases.push_back({std::move(name), grad_check(loss, params, epsilon)});
  };

  {
    ParameterSet ps;
    const Tensor x = Tensor::parameter(covarcast::detail::random_matrix(t, d, rng));
    ps.add("x", x);
    const auto p = LinearParams::init(d, 6, rng);
    p.register_into(ps, "linear");
    const auto r = covarcast::detail::random_matrix(t, 6, rng);
    run("linear", ps, [&] { return covarcast::detail::probe_loss(linear_forward(x, p), r); });
  }
  {
    ParameterSet ps;
    const Tensor q = Tensor::parameter(covarcast::detail::random_matrix(t, 4, rng));
    const Tensor k = Tensor::parameter(covarcast::detail::random_matrix(t, 4, rng));
    const Tensor v = Tensor::parameter(covarcast::detail::random_matrix(t, 3, rng));
    ps.add("q", q);
    ps.add("k", k);
    ps.add("v", v);
    const auto r = covarcast::detail::random_matrix(t, 3, rng);
    run("scaled_dot_attention", ps, [&] { return covarcast::detail::probe_loss(scaled_dot_attention(q, k, v), r); });
  }
  {
    ParameterSet ps;
    const Tensor x = Tensor::parameter(covarcast::detail::random_matrix(t, d, rng));
    ps.add("x", x);
    const auto p = MultiHeadParams::init(d, heads, rng);
    p.register_into(ps, "attention");
    const auto r = covarcast::detail::random_matrix(t, d, rng);
    run("multi_head_attention", ps, [&] { return covarcast::detail::probe_loss(multi_head_attention(x, p), r); });
  }
  {
    ParameterSet ps;
    const Tensor x = Tensor::parameter(covarcast::detail::random_matrix(t, d, rng));
    ps.add("x", x);
    auto p = LayerNormParams::init(d);
    p.gamma.mutable_value() = covarcast::detail::random_matrix(1, d, rng);
    p.beta.mutable_value() = covarcast::detail::random_matrix(1, d, rng);
    p.register_into(ps, "norm");
    const auto r = covarcast::detail::random_matrix(t, d, rng);
    run("layer_norm", ps, [&] { return covarcast::detail::probe_loss(layer_norm(x, p), r); });
  }
  {
    ParameterSet ps;
    const Tensor x = Tensor::parameter(covarcast::detail::random_matrix(t, d, rng));
    ps.add("x", x);
    const auto p = FeedForwardParams::init(d, d_ff, rng);
    p.register_into(ps, "feed_forward");
    const auto r = covarcast::detail::random_matrix(t, d, rng);
    run("feed_forward", ps, [&] { return covarcast::detail::probe_loss(feed_forward(x, p), r); });
  }
  {
    ParameterSet ps;
    const Tensor x = Tensor::parameter(covarcast::detail::random_matrix(t, d, rng));
    ps.add("x", x);
    const auto r = covarcast::detail::random_matrix(t, d, rng);
    const auto r2 = covarcast::detail::random_matrix(t, d, rng);
    run("series_decompose", ps, [&] {
      const auto parts = series_decompose(x, 3);
      return add(covarcast::detail::probe_loss(parts.trend, r), covarcast::detail::probe_loss(parts.seasonal, r2));
    });
  }
  {
    ParameterSet ps;
    const Tensor x = Tensor::parameter(covarcast::detail::random_matrix(t, d, rng));
    ps.add("x", x);
    const auto p = EncoderBlockParams::init(d, heads, d_ff, rng);
    p.register_into(ps, "encoder");
    const auto r = covarcast::detail::random_matrix(t, d, rng);
    run("encoder_block", ps, [&] { return covarcast::detail::probe_loss(encoder_block(x, p, eval), r); });
  }
  {
    ParameterSet ps;
    const Tensor x = Tensor::parameter(covarcast::detail::random_matrix(t, d, rng));
    ps.add("x", x);
    const auto p = DecomposedBlockParams::init(d, heads, d_ff, rng);
    p.register_into(ps, "decomposed");
    const auto r = covarcast::detail::random_matrix(t, d, rng);
    const auto r2 = covarcast::detail::random_matrix(t, d, rng);
    run("decomposed_block", ps, [&] {
      const auto out = decomposed_block(x, p, 3, eval);
      return add(covarcast::detail::probe_loss(out.trend, r), covarcast::detail::probe_loss(out.seasonal, r2));
    });
  }

  // Full model + regulated loss. Random head weights keep the reconstruction
  // indefinite so the eigenvalue penalty is active.
  const std::size_t n_assets = 3;
  const std::size_t m = vech_length(n_assets);
  for (const auto variant : {AttentionVariant::full, AttentionVariant::decomposed}) {
    for (const auto head : {HeadMode::vech, HeadMode::raw}) {
      ForecastModelConfig cfg;
      cfg.n_assets = n_assets;
      cfg.input_len = 4;
      cfg.d_model = static_cast<std::size_t>(d);
      cfg.heads = heads;
      cfg.encoder_layers = 2;
      cfg.d_ff = static_cast<std::size_t>(d_ff);
      cfg.dropout = 0.0;
      cfg.variant = variant;
      cfg.head = head;
      cfg.moving_average = 3;
      cfg.zero_head = false;
      ForecastModel model(cfg, seed + cases.size());
      const nn::Matrix tokens = covarcast::detail::random_matrix(static_cast<Eigen::Index>(cfg.input_len), static_cast<Eigen::Index>(m), rng);
      const Eigen::RowVectorXd target = covarcast::detail::random_matrix(1, static_cast<Eigen::Index>(m), rng);
      const double alpha = 1.0;
      run("loss:" + to_string(variant) + "/" + to_string(head), model.parameters(), [&] {
        return regulated_loss(model.forward(tokens), target, alpha, head, n_assets, 1.0).total;
      });
    }
  }
  return cases;
}

}  // namespace covarcast
