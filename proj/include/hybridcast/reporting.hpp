#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hybridcast/backtest.hpp"
#include "hybridcast/market_data.hpp"
#include "hybridcast/models.hpp"
#include "hybridcast/relation_graph.hpp"

namespace hybridcast {

/// Fully resolved run configuration. Each field maps to one config key of the
/// same name (see config/default.toml).
struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::vector<std::string> tickers = {"AAPL", "MSFT", "CMCSA", "COST", "QCOM",
                                      "ADBE", "SBUX", "INTU",  "AMD",  "INTC"};
  std::string start_date;  // empty: no lower bound
  std::string end_date;    // empty: no upper bound

  GraphConfig graph;

  std::vector<std::string> models = {"hybrid"};
  ModelWidths widths;
  TrainConfig train;

  std::size_t base_train_days = 504;
  std::size_t test_days = 50;
  bool warm_start = false;
  bool price_space = false;

  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 42;
  std::size_t jobs = 1;

  GridSpace grid{{0.001, 0.005, 0.01}, {11, 21}, {10, 20, 30, 40, 50}};

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  /// Spec for one model kind with this config's widths, training settings and seed.
  ModelSpec spec_for(ModelKind kind) const;
  std::vector<ModelSpec> model_specs() const;
};

/// Config-file text (`key = value`) that reproduces `config`; written as the
/// run manifest and loadable with --config.
std::string manifest_text(const RunConfig& config, std::string_view command);

/// Files produced by a command, keyed by file name. Written in one pass at
/// the end of a run.
using OutputFiles = std::map<std::string, std::string>;

void write_outputs(const std::filesystem::path& dir, const OutputFiles& files);

/// Loads, aligns and date-filters the configured tickers.
PricePanel load_panel(const RunConfig& config);

// CSV renderers. Headers are fixed by the external interface.
std::string panel_summary_csv(const std::vector<RawSeries>& series);
std::string moving_average_csv(const PricePanel& panel, std::size_t short_window = 50, std::size_t long_window = 200);
std::string per_day_csv(const BacktestReport& report);
std::string per_stock_csv(std::span<const BacktestReport> reports);
std::string comparison_csv(std::span<const ComparisonRow> rows);
std::string grid_csv(std::span<const GridCell> cells);

// Subcommands. Each validates the whole config before touching data and
// returns the files to write; the CLI writes them.
OutputFiles cmd_ingest(const RunConfig& config);
OutputFiles cmd_graph(const RunConfig& config);
OutputFiles cmd_backtest(const RunConfig& config);
OutputFiles cmd_gridsearch(const RunConfig& config);
/// Writes synthetic lead-lag OHLCV files for the configured tickers into data_dir.
OutputFiles cmd_synth(const RunConfig& config, std::size_t days);

}  // namespace hybridcast
