#include "hybridcast/backtest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <tuple>

#include "hybridcast/random.hpp"

namespace hybridcast {

WindowPlan expanding_schedule(std::span<const Date> dates, std::size_t base_train_days, std::size_t test_count) {
  if (base_train_days == 0 || test_count == 0) {
    throw BacktestError("InvalidPlan", "base window and test count must be positive");
  }
  if (dates.size() < base_train_days + test_count) {
    throw BacktestError("InsufficientHistory", "panel has " + std::to_string(dates.size()) + " days, plan needs " +
                                                   std::to_string(base_train_days + test_count));
  }
  WindowPlan plan;
  const std::size_t first_test = dates.size() - test_count;
  const std::size_t train_first = first_test - base_train_days;
  plan.base_train = {dates[train_first], dates[first_test - 1]};
  for (std::size_t k = 0; k < test_count; ++k) {
    PlanStep s;
    s.train_first = train_first;
    s.train_last = first_test - 1 + k;
    s.test_index = first_test + k;
    s.train = {dates[s.train_first], dates[s.train_last]};
    s.test_date = dates[s.test_index];
    plan.test_days.push_back(s.test_date);
    plan.steps.push_back(s);
  }
  return plan;
}

double mse(std::span<const double> predictions, std::span<const double> actuals) {
  if (predictions.size() != actuals.size()) {
    throw BacktestError("LengthMismatch", std::to_string(predictions.size()) + " predictions for " +
                                              std::to_string(actuals.size()) + " actuals");
  }
  if (predictions.empty()) throw BacktestError("EmptyInput", "mse of zero predictions");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - actuals[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predictions.size());
}

BacktestReport run_walk_forward(const std::string& model_name, const PricePanel& panel, const WindowPlan& plan,
                                const GraphConfig& graph_config, std::size_t lookback, bool needs_graph,
                                std::uint64_t base_seed, const StepPredictor& predict,
                                const BacktestOptions& options) {
  BacktestReport report;
  report.model = model_name;
  report.tickers = panel.tickers;
  report.graph = graph_config;
  const auto N = static_cast<Eigen::Index>(panel.num_tickers());
  Vector stock_sum = Vector::Zero(N);
  double day_sum = 0.0;
  std::size_t ok_days = 0;

  for (std::size_t k = 0; k < plan.steps.size(); ++k) {
    const PlanStep& step = plan.steps[k];
    if (step.test_index >= panel.num_days() || step.train_last + 1 != step.test_index ||
        panel.dates[step.test_index] != step.test_date) {
      throw BacktestError("PlanMismatch", "plan step " + std::to_string(k) + " does not fit the panel");
    }
    const PricePanel train = panel.slice(step.train_first, step.train_days());
    const Scaler scaler = fit_scaler(train, step.train);
    const Matrix scaled = scaler.scale(train);
    const WindowDataset data = make_windows(scaled, train.dates, lookback);
    const Matrix test_window = scaled.bottomRows(static_cast<Eigen::Index>(lookback));
    Vector actual(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      actual(i) = scaler.scale_value(static_cast<std::size_t>(i), panel.close(static_cast<Eigen::Index>(step.test_index), i));
    }

    StepAudit audit;
    audit.test_date = step.test_date;
    audit.train_first = train.dates.front();
    audit.train_last = train.dates.back();
    audit.scaler_fit_last = scaler.fit_range().last;
    audit.graph_last = train.dates.back();
    audit.max_sample_date = data.samples.back().target_date;
    audit.max_test_input_date = train.dates.back();
    audit.train_days = train.num_days();
    audit.samples = data.size();

    DayResult day;
    day.date = step.test_date;
    try {
      std::optional<GraphBuild> graph;
      if (needs_graph) {
        const ReturnPanel returns = daily_returns(train);
        graph = build_graph(returns, {returns.dates.front(), returns.dates.back()}, graph_config);
        audit.graph_last = returns.dates.back();
      }
      const StepContext ctx{k,           panel, step, scaler, data, graph ? &graph->a_hat : nullptr,
                            test_window, derive_seed(base_seed, k)};
      const Vector pred = predict(ctx);
      if (pred.size() != N) {
        throw ModelError("ShapeMismatch", "predictor returned " + std::to_string(pred.size()) + " values");
      }
      if (!pred.allFinite()) throw ModelError("DivergedLoss", "non-finite prediction");
      day.squared_errors = (pred - actual).array().square().matrix();
      day.mse = mse(std::span<const double>(pred.data(), static_cast<std::size_t>(N)),
                    std::span<const double>(actual.data(), static_cast<std::size_t>(N)));
      if (options.price_space) {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < N; ++i) {
          const double p = scaler.invert_value(static_cast<std::size_t>(i), pred(i));
          const double d = p - panel.close(static_cast<Eigen::Index>(step.test_index), i);
          sum += d * d;
        }
        day.price_mse = sum / static_cast<double>(N);
      }
      stock_sum += day.squared_errors;
      day_sum += day.mse;
      ++ok_days;
    } catch (const ModelError& e) {
      day.failed = true;
      day.failure = e.what();
    } catch (const GradError& e) {
      day.failed = true;
      day.failure = e.what();
    } catch (const GraphError& e) {
      day.failed = true;
      day.failure = e.what();
    }
    if (day.failed) {
      ++report.failed_steps;
      day.mse = std::numeric_limits<double>::quiet_NaN();
    }
    report.per_day.push_back(std::move(day));
    report.audit.push_back(audit);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.summary = ok_days > 0 ? day_sum / static_cast<double>(ok_days) : nan;
  report.per_stock = ok_days > 0 ? Vector(stock_sum / static_cast<double>(ok_days)) : Vector::Constant(N, nan);
  return report;
}

BacktestReport run_backtest(const ModelSpec& spec, const PricePanel& panel, const GraphConfig& graph_config,
                            const WindowPlan& plan, const BacktestOptions& options) {
  spec.validate();
  std::optional<grad::ParamStore> previous;
  const StepPredictor predictor = [&](const StepContext& ctx) {
    ModelSpec local = spec;
    local.train.seed = ctx.seed;
    const grad::ParamStore* warm = options.warm_start && previous ? &*previous : nullptr;
    TrainedModel model = train(local, ctx.dataset, ctx.a_hat, {}, warm);
    Vector pred = model.predict(ctx.test_window);
    if (options.warm_start) previous = std::move(model.params);
    return pred;
  };
  BacktestReport report =
      run_walk_forward(std::string(model_kind_name(spec.kind)), panel, plan, graph_config, spec.train.lookback,
                       spec.uses_graph(), spec.train.seed, predictor, options);
  report.spec = spec;
  return report;
}

void GridSpace::validate() const {
  if (learning_rates.empty()) throw ConfigError("grid_learning_rates", "axis is empty");
  if (lookbacks.empty()) throw ConfigError("grid_lookbacks", "axis is empty");
  if (epochs.empty()) throw ConfigError("grid_epochs", "axis is empty");
  for (double lr : learning_rates) {
    if (!(lr > 0.0)) throw ConfigError("grid_learning_rates", "learning rates must be positive");
  }
  for (auto l : lookbacks) {
    if (l < 1) throw ConfigError("grid_lookbacks", "lookbacks must be at least 1");
  }
  for (auto e : epochs) {
    if (e < 1) throw ConfigError("grid_epochs", "epoch caps must be at least 1");
  }
}

void rank_cells(std::vector<GridCell>& cells) {
  std::sort(cells.begin(), cells.end(), [](const GridCell& a, const GridCell& b) {
    if (a.failed != b.failed) return !a.failed;
    if (!a.failed && a.mean_mse != b.mean_mse) return a.mean_mse < b.mean_mse;
    return std::tie(a.learning_rate, a.lookback, a.epochs) < std::tie(b.learning_rate, b.lookback, b.epochs);
  });
  for (std::size_t k = 0; k < cells.size(); ++k) cells[k].rank = k + 1;
}

GridResult grid_search(const GridSpace& space, const ModelSpec& tmpl, const PricePanel& panel,
                       const GraphConfig& graph_config, const WindowPlan& plan, std::size_t jobs) {
  space.validate();
  std::vector<GridCell> cells;
  for (double lr : space.learning_rates) {
    for (auto lookback : space.lookbacks) {
      for (auto epochs : space.epochs) cells.push_back(GridCell{lr, lookback, epochs, 0.0, false, {}, 0});
    }
  }
  parallel_for(cells.size(), jobs, [&](std::size_t k) {
    GridCell& cell = cells[k];
    ModelSpec spec = tmpl;
    spec.train.learning_rate = cell.learning_rate;
    spec.train.lookback = cell.lookback;
    spec.train.epochs = cell.epochs;
    try {
      const auto report = run_backtest(spec, panel, graph_config, plan);
      cell.mean_mse = report.summary;
      cell.failed = !std::isfinite(report.summary);
      if (cell.failed) cell.failure = "every step failed";
    } catch (const Error& e) {
      cell.failed = true;
      cell.failure = e.what();
    }
    if (cell.failed) cell.mean_mse = std::numeric_limits<double>::quiet_NaN();
  });
  rank_cells(cells);
  GridResult out;
  out.ranked = std::move(cells);
  out.best = out.ranked.front();
  return out;
}

Comparison compare_models(const std::vector<ModelSpec>& specs, const PricePanel& panel,
                          const GraphConfig& graph_config, const WindowPlan& plan, std::size_t jobs,
                          const BacktestOptions& options) {
  if (specs.size() < 2) throw BacktestError("TooFewModels", "comparison needs at least two specs");
  Comparison out;
  out.reports.resize(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t k) {
    out.reports[k] = run_backtest(specs[k], panel, graph_config, plan, options);
  });
  for (const auto& r : out.reports) out.rows.push_back({r.model, r.summary, r.failed_steps});
  return out;
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace hybridcast
