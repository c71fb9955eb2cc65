#include "hybridcast/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace hybridcast {

namespace {

std::string toml_string(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

template <typename T, typename F>
std::string array_of(const std::vector<T>& values, F&& render) {
  std::string out = "[";
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k > 0) out += ", ";
    out += render(values[k]);
  }
  return out + "]";
}

std::string csv_number(double v) { return std::isfinite(v) ? format_number(v) : std::string(); }

void check_probability(const char* field, double v, bool allow_zero) {
  const bool ok = allow_zero ? (v >= 0.0 && v <= 1.0) : (v > 0.0 && v <= 1.0);
  if (!ok) throw ConfigError(field, allow_zero ? "must lie in [0, 1]" : "must lie in (0, 1]");
}

std::optional<Date> parse_bound(const char* field, const std::string& text) {
  if (text.empty()) return std::nullopt;
  try {
    return Date::parse(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (tickers.size() < 2) throw ConfigError("tickers", "need at least two tickers");
  std::set<std::string> unique(tickers.begin(), tickers.end());
  if (unique.size() != tickers.size()) throw ConfigError("tickers", "duplicate ticker");
  for (const auto& t : tickers) {
    if (t.empty() || t.find_first_of(",/\\ ") != std::string::npos) {
      throw ConfigError("tickers", "invalid ticker symbol '" + t + "'");
    }
  }
  const auto first = parse_bound("start_date", start_date);
  const auto last = parse_bound("end_date", end_date);
  if (first && last && *last < *first) throw ConfigError("end_date", "precedes start_date");

  if (!(graph.corr_threshold > 0.0 && graph.corr_threshold < 1.0)) {
    throw ConfigError("corr_threshold", "must lie in (0, 1)");
  }
  check_probability("min_support", graph.min_support, false);
  check_probability("min_confidence", graph.min_confidence, true);
  if (!(graph.min_lift > 0.0)) throw ConfigError("min_lift", "must be positive");
  if (!(graph.move_threshold >= 0.0)) throw ConfigError("move_threshold", "must be non-negative");
  if (!(graph.lift_cap > 0.0)) throw ConfigError("lift_cap", "must be positive");

  if (models.empty()) throw ConfigError("models", "list at least one model");
  for (const auto& m : models) {
    try {
      parse_model_kind(m);
    } catch (const ConfigError&) {
      throw ConfigError("models", "unknown model kind '" + m + "'");
    }
  }

  train.validate();
  widths.validate();
  if (train.epochs < 10 || train.epochs > 50) throw ConfigError("epochs", "must lie in [10, 50]");
  if (base_train_days < train.lookback + 2) throw ConfigError("base_train_days", "must exceed lookback + 1");
  if (test_days < 1) throw ConfigError("test_days", "must be at least 1");
  if (jobs < 1) throw ConfigError("jobs", "must be at least 1");
  if (out_dir.empty()) throw ConfigError("out", "output directory is empty");
  grid.validate();
  for (auto e : grid.epochs) {
    if (e < 10 || e > 50) throw ConfigError("grid_epochs", "epoch caps must lie in [10, 50]");
  }
  for (auto l : grid.lookbacks) {
    if (base_train_days < l + 2) throw ConfigError("grid_lookbacks", "lookback too long for base_train_days");
  }
  for (const auto& m : models) spec_for(parse_model_kind(m)).validate();
}

ModelSpec RunConfig::spec_for(ModelKind kind) const {
  ModelSpec spec;
  spec.kind = kind;
  spec.widths = widths;
  spec.train = train;
  spec.train.seed = seed;
  return spec;
}

std::vector<ModelSpec> RunConfig::model_specs() const {
  std::vector<ModelSpec> out;
  for (const auto& m : models) out.push_back(spec_for(parse_model_kind(m)));
  return out;
}

std::string manifest_text(const RunConfig& c, std::string_view command) {
  std::ostringstream o;
  const auto num = [](double v) { return format_number(v); };
  const auto str = [](const std::string& s) { return toml_string(s); };
  const auto size = [](std::size_t v) { return std::to_string(v); };
  o << "# hybridcast " << HYBRIDCAST_VERSION << " run manifest\n";
  o << "# command: " << command << "\n";
  o << "data_dir = " << toml_string(c.data_dir.string()) << "\n";
  o << "tickers = " << array_of(c.tickers, str) << "\n";
  o << "start_date = " << toml_string(c.start_date) << "\n";
  o << "end_date = " << toml_string(c.end_date) << "\n";
  o << "corr_threshold = " << num(c.graph.corr_threshold) << "\n";
  o << "min_support = " << num(c.graph.min_support) << "\n";
  o << "min_confidence = " << num(c.graph.min_confidence) << "\n";
  o << "min_lift = " << num(c.graph.min_lift) << "\n";
  o << "move_threshold = " << num(c.graph.move_threshold) << "\n";
  o << "lift_cap = " << num(c.graph.lift_cap) << "\n";
  o << "models = " << array_of(c.models, str) << "\n";
  o << "learning_rate = " << num(c.train.learning_rate) << "\n";
  o << "lookback = " << c.train.lookback << "\n";
  o << "epochs = " << c.train.epochs << "\n";
  o << "batch_size = " << c.train.batch_size << "\n";
  o << "dropout = " << num(c.train.dropout) << "\n";
  o << "patience = " << c.train.patience << "\n";
  o << "min_delta = " << num(c.train.min_delta) << "\n";
  o << "validation_fraction = " << num(c.train.validation_fraction) << "\n";
  o << "lstm_hidden = " << c.widths.lstm_hidden << "\n";
  o << "lstm_layers = " << c.widths.lstm_layers << "\n";
  o << "gcn_hidden = " << c.widths.gcn_hidden << "\n";
  o << "gcn_out = " << c.widths.gcn_out << "\n";
  o << "fusion_hidden = " << c.widths.fusion_hidden << "\n";
  o << "dense_hidden = " << c.widths.dense_hidden << "\n";
  o << "cnn_channels = " << c.widths.cnn_channels << "\n";
  o << "cnn_kernel = " << c.widths.cnn_kernel << "\n";
  o << "base_train_days = " << c.base_train_days << "\n";
  o << "test_days = " << c.test_days << "\n";
  o << "warm_start = " << (c.warm_start ? "true" : "false") << "\n";
  o << "price_space = " << (c.price_space ? "true" : "false") << "\n";
  o << "out = " << toml_string(c.out_dir.string()) << "\n";
  o << "seed = " << c.seed << "\n";
  o << "jobs = " << c.jobs << "\n";
  o << "grid_learning_rates = " << array_of(c.grid.learning_rates, num) << "\n";
  o << "grid_lookbacks = " << array_of(c.grid.lookbacks, size) << "\n";
  o << "grid_epochs = " << array_of(c.grid.epochs, size) << "\n";
  return o.str();
}

void write_outputs(const std::filesystem::path& dir, const OutputFiles& files) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("OutputError", "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& [name, content] : files) {
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw DataError("OutputError", "cannot write " + path.string());
  }
}

namespace {

std::vector<RawSeries> load_series(const RunConfig& config) {
  std::vector<RawSeries> series;
  for (const auto& t : config.tickers) series.push_back(load_ticker_csv(config.data_dir, t));
  return series;
}

PricePanel filter_dates(PricePanel panel, const RunConfig& config) {
  const auto first = parse_bound("start_date", config.start_date);
  const auto last = parse_bound("end_date", config.end_date);
  const auto lo = first ? std::lower_bound(panel.dates.begin(), panel.dates.end(), *first) : panel.dates.begin();
  const auto hi = last ? std::upper_bound(panel.dates.begin(), panel.dates.end(), *last) : panel.dates.end();
  if (lo >= hi) throw DataError("EmptyIntersection", "no common trading day inside the configured date range");
  return panel.slice(static_cast<std::size_t>(lo - panel.dates.begin()), static_cast<std::size_t>(hi - lo));
}

WindowPlan plan_for(const RunConfig& config, const PricePanel& panel) {
  try {
    return expanding_schedule(panel.dates, config.base_train_days, config.test_days);
  } catch (const BacktestError& e) {
    throw DataError(e.code(), e.what());
  }
}

}  // namespace

PricePanel load_panel(const RunConfig& config) { return filter_dates(align_panel(load_series(config)), config); }

std::string panel_summary_csv(const std::vector<RawSeries>& series) {
  std::string out = "ticker,rows,first_date,last_date\n";
  for (const auto& s : series) {
    out += s.ticker + "," + std::to_string(s.rows.size()) + ",";
    if (!s.rows.empty()) out += s.rows.front().date.iso() + "," + s.rows.back().date.iso();
    else out += ",";
    out += "\n";
  }
  return out;
}

std::string moving_average_csv(const PricePanel& panel, std::size_t short_window, std::size_t long_window) {
  const Scaler scaler = fit_scaler(panel, {panel.dates.front(), panel.dates.back()});
  const Matrix norm = scaler.scale(panel);
  std::vector<std::vector<std::optional<double>>> short_ma;
  std::vector<std::vector<std::optional<double>>> long_ma;
  for (Eigen::Index i = 0; i < norm.cols(); ++i) {
    const Eigen::VectorXd col = norm.col(i);
    const std::span<const double> values(col.data(), static_cast<std::size_t>(col.size()));
    short_ma.push_back(moving_average(values, short_window));
    long_ma.push_back(moving_average(values, long_window));
  }
  const auto cell = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  std::string out = "date,ticker,norm_close,ma50,ma200\n";
  for (std::size_t t = 0; t < panel.num_days(); ++t) {
    for (std::size_t i = 0; i < panel.num_tickers(); ++i) {
      out += panel.dates[t].iso() + "," + panel.tickers[i] + "," +
             format_number(norm(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i))) + "," +
             cell(short_ma[i][t]) + "," + cell(long_ma[i][t]) + "\n";
    }
  }
  return out;
}

std::string per_day_csv(const BacktestReport& report) {
  std::string out = "date,mse\n";
  for (const auto& d : report.per_day) out += d.date.iso() + "," + (d.failed ? std::string() : csv_number(d.mse)) + "\n";
  return out;
}

std::string per_stock_csv(std::span<const BacktestReport> reports) {
  std::string out = "ticker,model,mse\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.tickers.size(); ++i) {
      out += r.tickers[i] + "," + r.model + "," + csv_number(r.per_stock(static_cast<Eigen::Index>(i))) + "\n";
    }
  }
  return out;
}

std::string comparison_csv(std::span<const ComparisonRow> rows) {
  std::string out = "model,mean_mse\n";
  for (const auto& r : rows) out += r.model + "," + csv_number(r.mean_mse) + "\n";
  return out;
}

std::string grid_csv(std::span<const GridCell> cells) {
  std::string out = "lr,lookback,epochs,mean_mse,rank\n";
  for (const auto& c : cells) {
    out += format_number(c.learning_rate) + "," + std::to_string(c.lookback) + "," + std::to_string(c.epochs) + "," +
           (c.failed ? std::string() : csv_number(c.mean_mse)) + "," +
           (c.failed ? std::string("failed") : std::to_string(c.rank)) + "\n";
  }
  return out;
}

OutputFiles cmd_ingest(const RunConfig& config) {
  config.validate();
  const auto series = load_series(config);
  const PricePanel panel = filter_dates(align_panel(series), config);
  OutputFiles files;
  files["panel_summary.csv"] = panel_summary_csv(series);
  files["ma_prices.csv"] = moving_average_csv(panel);
  files["manifest.toml"] = manifest_text(config, "ingest");
  return files;
}

OutputFiles cmd_graph(const RunConfig& config) {
  config.validate();
  const PricePanel panel = load_panel(config);
  const ReturnPanel returns = daily_returns(panel);
  const GraphBuild build = build_graph(returns, {returns.dates.front(), returns.dates.back()}, config.graph);
  OutputFiles files;
  files["graph_edges.csv"] = format_edge_list(build.graph);
  files["assoc_rules.csv"] = format_rules(build.rules, returns.tickers);
  files["manifest.toml"] = manifest_text(config, "graph");
  return files;
}

OutputFiles cmd_backtest(const RunConfig& config) {
  config.validate();
  const PricePanel panel = load_panel(config);
  const WindowPlan plan = plan_for(config, panel);
  const auto specs = config.model_specs();
  const BacktestOptions options{config.warm_start, config.price_space};

  std::vector<BacktestReport> reports;
  std::vector<ComparisonRow> rows;
  if (specs.size() == 1) {
    reports.push_back(run_backtest(specs.front(), panel, config.graph, plan, options));
    rows.push_back({reports.front().model, reports.front().summary, reports.front().failed_steps});
  } else {
    auto cmp = compare_models(specs, panel, config.graph, plan, config.jobs, options);
    reports = std::move(cmp.reports);
    rows = std::move(cmp.rows);
  }

  OutputFiles files;
  files["per_day_mse.csv"] = per_day_csv(reports.front());
  if (reports.size() > 1) {
    for (const auto& r : reports) files["per_day_mse_" + r.model + ".csv"] = per_day_csv(r);
  }
  if (config.price_space) {
    for (const auto& r : reports) {
      std::string csv = "date,price_mse\n";
      for (const auto& d : r.per_day) {
        csv += d.date.iso() + "," + (d.price_mse ? csv_number(*d.price_mse) : std::string()) + "\n";
      }
      files["per_day_price_mse_" + r.model + ".csv"] = csv;
    }
  }
  files["per_stock_mse.csv"] = per_stock_csv(reports);
  files["model_comparison.csv"] = comparison_csv(rows);
  std::string manifest = manifest_text(config, "backtest");
  for (const auto& r : reports) {
    manifest += "# " + r.model + ": failed_steps " + std::to_string(r.failed_steps) + "\n";
  }
  files["manifest.toml"] = manifest;
  for (const auto& r : reports) {
    if (r.failed_steps == r.per_day.size()) {
      throw ModelError("DivergedLoss", "every backtest step of " + r.model + " failed");
    }
  }
  return files;
}

OutputFiles cmd_gridsearch(const RunConfig& config) {
  config.validate();
  const PricePanel panel = load_panel(config);
  const WindowPlan plan = plan_for(config, panel);
  const auto specs = config.model_specs();
  const GridResult result = grid_search(config.grid, specs.front(), panel, config.graph, plan, config.jobs);
  OutputFiles files;
  files["grid_results.csv"] = grid_csv(result.ranked);
  files["manifest.toml"] = manifest_text(config, "gridsearch");
  return files;
}

OutputFiles cmd_synth(const RunConfig& config, std::size_t days) {
  if (config.tickers.size() < 2) throw ConfigError("tickers", "need at least two tickers");
  SyntheticConfig synth;
  synth.num_assets = config.tickers.size();
  synth.num_days = days;
  synth.seed = config.seed;
  auto series = synthetic_market(synth);
  OutputFiles files;
  for (std::size_t k = 0; k < series.size(); ++k) {
    series[k].ticker = config.tickers[k];
    files[config.tickers[k] + ".csv"] = format_ohlcv_csv(series[k]);
  }
  return files;
}

}  // namespace hybridcast
