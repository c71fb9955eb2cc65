#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybridcast/common.hpp"
#include "hybridcast/market_data.hpp"
#include "hybridcast/models.hpp"
#include "hybridcast/relation_graph.hpp"

namespace hybridcast {

/// One walk-forward step: train on panel rows [train_first, train_last],
/// predict row test_index == train_last + 1.
struct PlanStep {
  std::size_t train_first = 0;
  std::size_t train_last = 0;
  std::size_t test_index = 0;
  DateRange train;
  Date test_date;

  std::size_t train_days() const { return train_last - train_first + 1; }
};

struct WindowPlan {
  DateRange base_train;
  std::vector<Date> test_days;
  std::vector<PlanStep> steps;
};

/// The last `test_count` dates are tested one at a time; step 0 trains on the
/// `base_train_days` dates before the first test day and every later step adds
/// the previous test day. Throws BacktestError("InsufficientHistory").
WindowPlan expanding_schedule(std::span<const Date> dates, std::size_t base_train_days, std::size_t test_count = 50);

/// Mean squared error. Throws BacktestError("LengthMismatch") / ("EmptyInput").
double mse(std::span<const double> predictions, std::span<const double> actuals);

/// What a step actually consumed, for leakage audits.
struct StepAudit {
  Date test_date;
  Date train_first;
  Date train_last;
  Date scaler_fit_last;
  Date graph_last;           // equals train_last when the model uses a graph
  Date max_sample_date;      // latest training target date
  Date max_test_input_date;  // latest day in the prediction window
  std::size_t train_days = 0;
  std::size_t samples = 0;
};

struct DayResult {
  Date date;
  double mse = 0.0;
  bool failed = false;
  std::string failure;
  Vector squared_errors;  // per stock, scaled space
  std::optional<double> price_mse;
};

struct BacktestReport {
  std::string model;
  std::vector<std::string> tickers;
  std::vector<DayResult> per_day;
  Vector per_stock;  // mean squared error per ticker over successful days
  double summary = 0.0;
  std::size_t failed_steps = 0;
  ModelSpec spec;
  GraphConfig graph;
  std::vector<StepAudit> audit;
};

struct BacktestOptions {
  /// Start each step from the previous step's trained parameters.
  bool warm_start = false;
  /// Also report currency-space errors via the inverse scaling.
  bool price_space = false;
};

/// Everything a step predictor may look at. Only `panel.close` rows up to
/// step.train_last are training data; the test row is exposed for oracles.
struct StepContext {
  std::size_t step_index = 0;
  const PricePanel& panel;
  const PlanStep& step;
  const Scaler& scaler;
  const WindowDataset& dataset;
  const Matrix* a_hat = nullptr;
  const Matrix& test_window;
  std::uint64_t seed = 0;
};

using StepPredictor = std::function<Vector(const StepContext&)>;

/// Walk-forward driver shared by every model. Per step: fit the scaler on the
/// training rows, rebuild the graph from training returns when `needs_graph`,
/// window the scaled training rows, call `predict`, score the test day.
BacktestReport run_walk_forward(const std::string& model_name, const PricePanel& panel, const WindowPlan& plan,
                                const GraphConfig& graph_config, std::size_t lookback, bool needs_graph,
                                std::uint64_t base_seed, const StepPredictor& predict,
                                const BacktestOptions& options = {});

/// Retrains `spec` from scratch at every step.
BacktestReport run_backtest(const ModelSpec& spec, const PricePanel& panel, const GraphConfig& graph_config,
                            const WindowPlan& plan, const BacktestOptions& options = {});

struct GridSpace {
  std::vector<double> learning_rates;
  std::vector<std::size_t> lookbacks;
  std::vector<std::size_t> epochs;

  void validate() const;
  std::size_t size() const { return learning_rates.size() * lookbacks.size() * epochs.size(); }
};

struct GridCell {
  double learning_rate = 0.0;
  std::size_t lookback = 0;
  std::size_t epochs = 0;
  double mean_mse = 0.0;
  bool failed = false;
  std::string failure;
  std::size_t rank = 0;  // 1-based
};

struct GridResult {
  std::vector<GridCell> ranked;
  GridCell best;
};

/// Ranks every (lr, lookback, epochs) cell by backtest summary MSE. Failed
/// cells rank last; ties break on (lr, lookback, epochs) ascending.
GridResult grid_search(const GridSpace& space, const ModelSpec& tmpl, const PricePanel& panel,
                       const GraphConfig& graph_config, const WindowPlan& plan, std::size_t jobs = 1);

/// Sorts cells in place into rank order and assigns ranks.
void rank_cells(std::vector<GridCell>& cells);

struct ComparisonRow {
  std::string model;
  double mean_mse = 0.0;
  std::size_t failed_steps = 0;
};

struct Comparison {
  std::vector<BacktestReport> reports;
  std::vector<ComparisonRow> rows;
};

/// Runs each spec under the same plan and seeds. Needs at least two specs.
Comparison compare_models(const std::vector<ModelSpec>& specs, const PricePanel& panel,
                          const GraphConfig& graph_config, const WindowPlan& plan, std::size_t jobs = 1,
                          const BacktestOptions& options = {});

/// Runs fn(0..count-1) on up to `jobs` threads; rethrows the first exception.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace hybridcast
