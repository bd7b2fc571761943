/**
 * @file config.hpp
 * @brief Run configuration: file format, overrides, validation, data loading
 *        and the run manifest.
 *
 * The config file is INI-style (a TOML subset):
 *
 *     [section]
 *     key = value          # comment
 *     list = [1, 2, 3]
 *     name = "quoted"
 *
 * Precedence, lowest to highest: built-in defaults, config file, command-line
 * flags (`--data`, `--out`, then each `--set section.key=value` in order).
 */
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "covarcast/backtest.hpp"
#include "covarcast/scenarios.hpp"
#include "covarcast/version.hpp"

namespace covarcast {

struct DataSection {
  std::string path;  // empty: synthetic
  MissingDataPolicy missing = MissingDataPolicy::strict;
  ReturnMethod returns = ReturnMethod::simple;
  std::string start;  // inclusive ISO dates; empty: unbounded
  std::string end;
};

struct SyntheticSection {
  std::string scenario = "regime_switching";
  ScenarioOptions options;
};

struct WindowSection {
  WindowLayout layout;
  std::size_t input_len = 4;
  std::size_t token_spacing = 5;
};

struct ModelSection {
  std::vector<std::string> variants{"transformer"};
  bool baseline = true;
  std::size_t d_model = 256;
  int heads = 8;
  std::size_t layers = 2;
  std::size_t d_ff = 0;
  double dropout = 0.05;
  HeadMode head = HeadMode::vech;
  std::size_t moving_average = 0;
};

struct TrainingSection {
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

struct PortfolioSection {
  PortfolioOptions options;
  std::vector<MatrixKind> kinds{MatrixKind::covariance, MatrixKind::semi_covariance};
  Threshold threshold;
};

struct OutputSection {
  std::string dir = "covarcast-out";
  std::size_t threads = 0;
};

struct RunConfig {
  DataSection data;
  SyntheticSection synthetic;
  WindowSection window;
  ModelSection model;
  TrainingSection training;
  PortfolioSection portfolio;
  OutputSection output;
};

// ---------------------------------------------------------------------------
// Value parsing

namespace config_detail {

inline std::string unquote(std::string_view v) {
  v = detail::trim(v);
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    v = v.substr(1, v.size() - 2);
  }
  return std::string(v);
}

inline std::vector<std::string> parse_list(std::string_view key, std::string_view raw) {
  auto v = detail::trim(raw);
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = detail::trim(v.substr(1, v.size() - 2));
  std::vector<std::string> items;
  if (v.empty()) return items;
  for (const auto part : detail::split(v, ',')) {
    auto item = unquote(part);
    if (item.empty()) throw ValidationError("config " + std::string(key) + ": empty list element");
    items.push_back(std::move(item));
  }
  return items;
}

inline std::size_t parse_count(std::string_view key, const std::string& v) {
  int out = 0;
  if (!detail::parse_int(v, out) || out < 0) {
    throw ValidationError("config " + std::string(key) + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(out);
}

inline std::uint64_t parse_seed(std::string_view key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) {
    throw ValidationError("config " + std::string(key) + ": expected an unsigned integer seed, got '" + v + "'");
  }
  return out;
}

inline double parse_real(std::string_view key, const std::string& v) {
  double out = 0.0;
  if (!detail::parse_double(v, out) || !std::isfinite(out)) {
    throw ValidationError("config " + std::string(key) + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ValidationError("config " + std::string(key) + ": expected true or false, got '" + v + "'");
}

/// Removes `#` / `;` comments that are not inside quotes.
inline std::string strip_comments(const std::string& text) {
  std::ostringstream out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    char quote = 0;
    std::size_t cut = line.size();
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quote) {
        if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '#' || c == ';') {
        cut = i;
        break;
      }
    }
    out << line.substr(0, cut) << '\n';
  }
  return out.str();
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& raw)>;

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto str = [](auto member) {
      return [member](RunConfig& c, const std::string&, const std::string& raw) { member(c) = unquote(raw); };
    };
    auto count = [](auto member) {
      return [member](RunConfig& c, const std::string& k, const std::string& raw) { member(c) = parse_count(k, unquote(raw)); };
    };
    auto real = [](auto member) {
      return [member](RunConfig& c, const std::string& k, const std::string& raw) { member(c) = parse_real(k, unquote(raw)); };
    };
    auto boolean = [](auto member) {
      return [member](RunConfig& c, const std::string& k, const std::string& raw) { member(c) = parse_bool(k, unquote(raw)); };
    };

    t["data.path"] = str([](RunConfig& c) -> std::string& { return c.data.path; });
    t["data.missing"] = [](RunConfig& c, const std::string&, const std::string& raw) {
      c.data.missing = parse_missing_data_policy(unquote(raw));
    };
    t["data.returns"] = [](RunConfig& c, const std::string&, const std::string& raw) {
      c.data.returns = parse_return_method(unquote(raw));
    };
    t["data.start"] = [](RunConfig& c, const std::string&, const std::string& raw) {
      c.data.start = unquote(raw);
      if (!c.data.start.empty()) parse_date(c.data.start);
    };
    t["data.end"] = [](RunConfig& c, const std::string&, const std::string& raw) {
      c.data.end = unquote(raw);
      if (!c.data.end.empty()) parse_date(c.data.end);
    };

    t["synthetic.scenario"] = str([](RunConfig& c) -> std::string& { return c.synthetic.scenario; });
    t["synthetic.n_assets"] = count([](RunConfig& c) -> std::size_t& { return c.synthetic.options.n_assets; });
    t["synthetic.n_days"] = count([](RunConfig& c) -> std::size_t& { return c.synthetic.options.n_days; });
    t["synthetic.seed"] = [](RunConfig& c, const std::string& k, const std::string& raw) {
      c.synthetic.options.seed = parse_seed(k, unquote(raw));
    };
    t["synthetic.min_regime_days"] = count([](RunConfig& c) -> std::size_t& { return c.synthetic.options.min_regime_days; });
    t["synthetic.max_regime_days"] = count([](RunConfig& c) -> std::size_t& { return c.synthetic.options.max_regime_days; });
    t["synthetic.skew_regime_days"] = count([](RunConfig& c) -> std::size_t& { return c.synthetic.options.skew_regime_days; });
    t["synthetic.shock_probability"] = real([](RunConfig& c) -> double& { return c.synthetic.options.shock_probability; });
    t["synthetic.shock_size"] = real([](RunConfig& c) -> double& { return c.synthetic.options.shock_size; });

    t["window.lookback"] = count([](RunConfig& c) -> std::size_t& { return c.window.layout.lookback; });
    t["window.horizon"] = count([](RunConfig& c) -> std::size_t& { return c.window.layout.horizon; });
    t["window.stride"] = count([](RunConfig& c) -> std::size_t& { return c.window.layout.stride; });
    t["window.train_stride"] = count([](RunConfig& c) -> std::size_t& { return c.window.layout.train_stride; });
    t["window.train_fraction"] = real([](RunConfig& c) -> double& { return c.window.layout.train_fraction; });
    t["window.input_len"] = count([](RunConfig& c) -> std::size_t& { return c.window.input_len; });
    t["window.token_spacing"] = count([](RunConfig& c) -> std::size_t& { return c.window.token_spacing; });

    t["model.variants"] = [](RunConfig& c, const std::string& k, const std::string& raw) {
      c.model.variants = parse_list(k, raw);
    };
    t["model.baseline"] = boolean([](RunConfig& c) -> bool& { return c.model.baseline; });
    t["model.d_model"] = count([](RunConfig& c) -> std::size_t& { return c.model.d_model; });
    t["model.heads"] = [](RunConfig& c, const std::string& k, const std::string& raw) {
      c.model.heads = static_cast<int>(parse_count(k, unquote(raw)));
    };
    t["model.layers"] = count([](RunConfig& c) -> std::size_t& { return c.model.layers; });
    t["model.d_ff"] = count([](RunConfig& c) -> std::size_t& { return c.model.d_ff; });
    t["model.dropout"] = real([](RunConfig& c) -> double& { return c.model.dropout; });
    t["model.head"] = [](RunConfig& c, const std::string&, const std::string& raw) {
      c.model.head = parse_head_mode(unquote(raw));
    };
    t["model.moving_average"] = count([](RunConfig& c) -> std::size_t& { return c.model.moving_average; });

    t["training.learning_rate"] = real([](RunConfig& c) -> double& { return c.training.train.learning_rate; });
    t["training.epochs"] = count([](RunConfig& c) -> std::size_t& { return c.training.train.epochs; });
    t["training.alpha"] = real([](RunConfig& c) -> double& { return c.training.train.penalty_alpha; });
    t["training.batch_size"] = count([](RunConfig& c) -> std::size_t& { return c.training.train.batch_size; });
    t["training.validation_fraction"] = real([](RunConfig& c) -> double& { return c.training.train.validation_fraction; });
    t["training.seeds"] = [](RunConfig& c, const std::string& k, const std::string& raw) {
      c.training.seeds.clear();
      for (const auto& s : parse_list(k, raw)) c.training.seeds.push_back(parse_seed(k, s));
    };

    t["portfolio.long_only"] = boolean([](RunConfig& c) -> bool& { return c.portfolio.options.long_only; });
    t["portfolio.ridge"] = real([](RunConfig& c) -> double& { return c.portfolio.options.ridge; });
    t["portfolio.sortino_target"] = real([](RunConfig& c) -> double& { return c.portfolio.options.sortino_target; });
    t["portfolio.annualization"] = real([](RunConfig& c) -> double& { return c.portfolio.options.annualization; });
    t["portfolio.kinds"] = [](RunConfig& c, const std::string& k, const std::string& raw) {
      c.portfolio.kinds.clear();
      for (const auto& s : parse_list(k, raw)) c.portfolio.kinds.push_back(parse_matrix_kind(s));
    };
    t["portfolio.threshold"] = [](RunConfig& c, const std::string&, const std::string& raw) {
      c.portfolio.threshold = parse_threshold(unquote(raw));
    };

    t["output.dir"] = str([](RunConfig& c) -> std::string& { return c.output.dir; });
    t["output.threads"] = count([](RunConfig& c) -> std::size_t& { return c.output.threads; });
    return t;
  }();
  return table;
}

}  // namespace config_detail

/// Applies one `section.key = value` assignment.
inline void set_config_value(RunConfig& config, const std::string& key, const std::string& raw) {
  const auto& table = config_detail::setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
  it->second(config, key, raw);
}

/// Parses `section.key=value`.
inline void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ValidationError("override '" + std::string(assignment) + "' is not of the form section.key=value");
  }
  set_config_value(config, std::string(detail::trim(assignment.substr(0, eq))),
                   std::string(detail::trim(assignment.substr(eq + 1))));
}

inline void apply_config_text(RunConfig& config, const std::string& text, const std::string& source = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(config_detail::strip_comments(text));
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ValidationError(source + ": key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [key, value] : body) set_config_value(config, section + "." + key, value.data());
  }
}

inline RunConfig load_config_file(const std::filesystem::path& path, RunConfig config = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  apply_config_text(config, buffer.str(), path.string());
  return config;
}

// ---------------------------------------------------------------------------
// Derived objects

inline DatasetOptions dataset_options(const RunConfig& c) {
  return {c.window.input_len, c.window.token_spacing, c.portfolio.threshold};
}

inline ForecastModelConfig model_config(const RunConfig& c, const std::string& variant, std::size_t n_assets) {
  ForecastModelConfig m;
  m.n_assets = n_assets;
  m.input_len = c.window.input_len;
  m.d_model = c.model.d_model;
  m.heads = c.model.heads;
  m.encoder_layers = c.model.layers;
  m.d_ff = c.model.d_ff;
  m.dropout = c.model.dropout;
  m.variant = parse_attention_variant(variant);
  m.head = c.model.head;
  m.moving_average = c.model.moving_average;
  return m;
}

inline SyntheticSpec synthetic_spec(const RunConfig& c) { return make_scenario(c.synthetic.scenario, c.synthetic.options); }

/// Checks every constraint that does not need the data.
inline void validate_config(const RunConfig& c) {
  if (c.data.path.empty()) validate_synthetic_spec(synthetic_spec(c));
  if (c.window.layout.stride != c.window.layout.horizon) {
    throw ValidationError("window.stride (" + std::to_string(c.window.layout.stride) + ") must equal window.horizon (" +
                          std::to_string(c.window.layout.horizon) + ")");
  }
  if (c.window.layout.lookback < 2) throw ValidationError("window.lookback must be >= 2");
  if (c.window.layout.horizon < 1) throw ValidationError("window.horizon must be >= 1");
  if (c.window.layout.train_stride < 1) throw ValidationError("window.train_stride must be >= 1");
  if (!(c.window.layout.train_fraction > 0.0 && c.window.layout.train_fraction < 1.0)) {
    throw ValidationError("window.train_fraction must lie in (0, 1)");
  }
  if (c.window.input_len < 1) throw ValidationError("window.input_len must be >= 1");
  if (c.window.token_spacing < 1) throw ValidationError("window.token_spacing must be >= 1");
  if (c.model.variants.empty() && !c.model.baseline) throw ValidationError("no models: set model.variants or model.baseline");
  for (std::size_t i = 0; i < c.model.variants.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (c.model.variants[i] == c.model.variants[j]) {
        throw ValidationError("model.variants lists '" + c.model.variants[i] + "' twice");
      }
    }
    model_config(c, c.model.variants[i], 2).validate();
  }
  c.training.train.validate();
  if (c.training.seeds.empty()) throw ValidationError("training.seeds must not be empty");
  if (c.portfolio.kinds.empty()) throw ValidationError("portfolio.kinds must not be empty");
  if (!(c.portfolio.options.annualization > 0.0)) throw ValidationError("portfolio.annualization must be > 0");
  if (c.output.dir.empty()) throw ValidationError("output.dir must not be empty");
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw ComputationError("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < length; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

struct LoadedData {
  ReturnSeries series;
  std::string price_csv;  // canonical bytes the series was parsed from
  std::string sha256;
  std::string source;     // file path or "synthetic:<scenario>"
};

/// Synthetic data goes through the same CSV text as `synth` output, so a run
/// on the generated file and a run on the in-config scenario see identical returns.
inline LoadedData load_data(const RunConfig& c) {
  LoadedData d;
  if (c.data.path.empty()) {
    std::ostringstream csv;
    write_price_table(csv, prices_from_returns(generate_synthetic_returns(synthetic_spec(c))));
    d.price_csv = csv.str();
    d.source = "synthetic:" + c.synthetic.scenario;
  } else {
    std::ifstream in(c.data.path, std::ios::binary);
    if (!in) throw ValidationError("cannot open price file '" + c.data.path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    d.price_csv = buffer.str();
    d.source = c.data.path;
  }
  std::istringstream in(d.price_csv);
  const auto bound = [](const std::string& s) { return s.empty() ? std::optional<Date>{} : parse_date(s); };
  const auto table = restrict_dates(parse_price_table(in, c.data.missing), bound(c.data.start), bound(c.data.end));
  if (table.rows() < 2) {
    throw ValidationError("date range [" + c.data.start + ", " + c.data.end + "] keeps " + std::to_string(table.rows()) +
                          " price rows; at least 2 are needed");
  }
  d.series = compute_returns(table, c.data.returns);
  d.sha256 = sha256_hex(d.price_csv);
  return d;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json kinds = nlohmann::json::array();
  for (const auto k : c.portfolio.kinds) kinds.push_back(to_string(k));
  const auto& s = c.synthetic.options;
  return {
      {"data",
       {{"path", c.data.path},
        {"missing", c.data.missing == MissingDataPolicy::strict ? "strict" : "ffill"},
        {"returns", c.data.returns == ReturnMethod::simple ? "simple" : "log"},
        {"start", c.data.start},
        {"end", c.data.end}}},
      {"synthetic",
       {{"scenario", c.synthetic.scenario},
        {"n_assets", s.n_assets},
        {"n_days", s.n_days},
        {"seed", s.seed},
        {"min_regime_days", s.min_regime_days},
        {"max_regime_days", s.max_regime_days},
        {"skew_regime_days", s.skew_regime_days},
        {"shock_probability", s.shock_probability},
        {"shock_size", s.shock_size}}},
      {"window",
       {{"lookback", c.window.layout.lookback},
        {"horizon", c.window.layout.horizon},
        {"stride", c.window.layout.stride},
        {"train_stride", c.window.layout.train_stride},
        {"train_fraction", c.window.layout.train_fraction},
        {"input_len", c.window.input_len},
        {"token_spacing", c.window.token_spacing}}},
      {"model",
       {{"variants", c.model.variants},
        {"baseline", c.model.baseline},
        {"d_model", c.model.d_model},
        {"heads", c.model.heads},
        {"layers", c.model.layers},
        {"d_ff", c.model.d_ff},
        {"dropout", c.model.dropout},
        {"head", to_string(c.model.head)},
        {"moving_average", c.model.moving_average}}},
      {"training", {{"train", to_json(c.training.train)}, {"seeds", c.training.seeds}}},
      {"portfolio",
       {{"long_only", c.portfolio.options.long_only},
        {"ridge", c.portfolio.options.ridge},
        {"sortino_target", c.portfolio.options.sortino_target},
        {"annualization", c.portfolio.options.annualization},
        {"kinds", kinds},
        {"threshold", to_string(c.portfolio.threshold)}}},
      {"output", {{"dir", c.output.dir}, {"threads", c.output.threads}}},
  };
}

/// Backtest plan for the configured models; forecasters are trained unless
/// supplied through `plan.pretrained`.
inline BacktestPlan build_plan(const RunConfig& c, const LoadedData& data) {
  BacktestPlan plan;
  plan.data = data.series;
  plan.tokens = dataset_options(c);
  const auto split = split_windows(plan.data.size(), c.window.layout, plan.tokens);
  plan.windows = split.evaluation;
  plan.training_windows = split.training;
  plan.kinds = c.portfolio.kinds;
  if (c.model.baseline) plan.models.push_back(ModelSpec::sample_method());
  for (const auto& v : c.model.variants) plan.models.push_back({v, model_config(c, v, plan.data.n_assets())});
  plan.portfolio = c.portfolio.options;
  plan.training = c.training.train;
  plan.seeds = c.training.seeds;
  plan.output_dir = c.output.dir;
  plan.threads = c.output.threads;
  plan.metadata = {{"version", kVersion}, {"data_sha256", data.sha256}, {"data_source", data.source}, {"config", to_json(c)}};
  validate_plan(plan);
  return plan;
}

inline nlohmann::json run_manifest(const std::string& command, const RunConfig& c, const std::string& data_sha256,
                                   const std::string& data_source) {
  return {{"tool", "covarcast"},
          {"version", kVersion},
          {"command", command},
          {"config", to_json(c)},
          {"seeds", c.training.seeds},
          {"data", {{"source", data_source}, {"sha256", data_sha256}}},
          {"versions", versions_json()}};
}

}  // namespace covarcast
