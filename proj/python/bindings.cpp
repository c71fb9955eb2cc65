#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hybridcast/backtest.hpp"
#include "hybridcast/reporting.hpp"

namespace py = pybind11;
namespace hc = hybridcast;

namespace {

std::vector<std::string> iso_dates(const std::vector<hc::Date>& dates) {
  std::vector<std::string> out;
  out.reserve(dates.size());
  for (const auto& d : dates) out.push_back(d.iso());
  return out;
}

hc::PricePanel make_panel(const std::vector<std::string>& tickers, const std::vector<std::string>& dates,
                          const hc::Matrix& close) {
  if (close.rows() != static_cast<Eigen::Index>(dates.size()) ||
      close.cols() != static_cast<Eigen::Index>(tickers.size())) {
    throw hc::DataError("ShapeMismatch", "close must be len(dates) x len(tickers)");
  }
  hc::PricePanel p;
  p.tickers = tickers;
  for (const auto& d : dates) p.dates.push_back(hc::Date::parse(d));
  p.close = close;
  return p;
}

py::dict panel_dict(const hc::PricePanel& p) {
  py::dict d;
  d["tickers"] = p.tickers;
  d["dates"] = iso_dates(p.dates);
  d["close"] = p.close;
  return d;
}

hc::GraphConfig graph_config(double corr_threshold, double min_support, double min_confidence, double min_lift,
                             double move_threshold, double lift_cap) {
  hc::GraphConfig g;
  g.corr_threshold = corr_threshold;
  g.min_support = min_support;
  g.min_confidence = min_confidence;
  g.min_lift = min_lift;
  g.move_threshold = move_threshold;
  g.lift_cap = lift_cap;
  return g;
}

py::dict report_dict(const hc::BacktestReport& r) {
  py::list days;
  for (const auto& d : r.per_day) {
    py::dict row;
    row["date"] = d.date.iso();
    row["mse"] = d.mse;
    row["failed"] = d.failed;
    days.append(row);
  }
  py::dict out;
  out["model"] = r.model;
  out["tickers"] = r.tickers;
  out["per_day"] = days;
  out["per_stock"] = r.per_stock;
  out["summary"] = r.summary;
  out["failed_steps"] = r.failed_steps;
  return out;
}

}  // namespace

PYBIND11_MODULE(hybridcast, m) {
  m.doc() = "LSTM + graph convolution stock forecasting backtests";
  m.attr("__version__") = HYBRIDCAST_VERSION;

  // later registrations are tried first, so the base class goes first
  py::register_exception<hc::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<hc::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "synthetic_panel",
      [](std::uint64_t seed, std::size_t num_days, double factor_persistence, double leader_echo,
         double price_reversion) {
        hc::SyntheticConfig c;
        c.seed = seed;
        c.num_days = num_days;
        c.factor_persistence = factor_persistence;
        c.leader_echo = leader_echo;
        c.price_reversion = price_reversion;
        return panel_dict(hc::align_panel(hc::synthetic_market(c)));
      },
      py::arg("seed") = 1, py::arg("num_days") = 554,
      py::arg("factor_persistence") = hc::SyntheticConfig{}.factor_persistence,
      py::arg("leader_echo") = hc::SyntheticConfig{}.leader_echo,
      py::arg("price_reversion") = hc::SyntheticConfig{}.price_reversion,
      "Ten-asset lead-lag panel: dict with tickers, dates and a days x tickers close array.");

  m.def(
      "load_panel",
      [](const std::string& data_dir, const std::vector<std::string>& tickers) {
        hc::RunConfig c;
        c.data_dir = data_dir;
        c.tickers = tickers;
        return panel_dict(hc::load_panel(c));
      },
      py::arg("data_dir"), py::arg("tickers"), "Reads <data_dir>/<ticker>.csv files and aligns them.");

  m.def(
      "daily_returns",
      [](const hc::Matrix& close) {
        hc::PricePanel p;
        p.close = close;
        for (Eigen::Index i = 0; i < close.cols(); ++i) p.tickers.push_back("S" + std::to_string(i));
        p.dates = hc::business_days(hc::Date::from_ymd(2000, 1, 3), static_cast<std::size_t>(close.rows()));
        return hc::Matrix(hc::daily_returns(p).returns);
      },
      py::arg("close"));

  m.def(
      "pearson_matrix",
      [](const hc::Matrix& returns) {
        hc::ReturnPanel r;
        r.returns = returns;
        for (Eigen::Index i = 0; i < returns.cols(); ++i) r.tickers.push_back("S" + std::to_string(i));
        r.dates = hc::business_days(hc::Date::from_ymd(2000, 1, 3), static_cast<std::size_t>(returns.rows()));
        return hc::Matrix(hc::pearson_matrix(r, {r.dates.front(), r.dates.back()}).rho);
      },
      py::arg("returns"), "Pearson correlation of the columns of a days x tickers return array.");

  m.def(
      "build_graph",
      [](const std::vector<std::string>& tickers, const std::vector<std::string>& dates, const hc::Matrix& close,
         double corr_threshold, double min_support, double min_confidence, double min_lift, double move_threshold,
         double lift_cap) {
        const auto panel = make_panel(tickers, dates, close);
        const auto returns = hc::daily_returns(panel);
        const auto g = hc::build_graph(
            returns, {returns.dates.front(), returns.dates.back()},
            graph_config(corr_threshold, min_support, min_confidence, min_lift, move_threshold, lift_cap));
        py::list edges;
        for (const auto& e : g.graph.edges) {
          edges.append(py::make_tuple(tickers[e.a], tickers[e.b], e.weight, static_cast<int>(e.provenance)));
        }
        py::dict out;
        out["corr"] = g.corr.rho;
        out["a_hat"] = g.a_hat;
        out["edges"] = edges;
        out["num_rules"] = g.rules.rules.size();
        out["edge_list"] = hc::format_edge_list(g.graph);
        out["rules"] = hc::format_rules(g.rules, tickers);
        return out;
      },
      py::arg("tickers"), py::arg("dates"), py::arg("close"), py::arg("corr_threshold") = 0.7,
      py::arg("min_support") = 0.3, py::arg("min_confidence") = 0.6, py::arg("min_lift") = 1.7,
      py::arg("move_threshold") = 0.001, py::arg("lift_cap") = 3.0);

  m.def(
      "expanding_schedule",
      [](std::size_t num_days, std::size_t base_train_days, std::size_t test_days) {
        const auto dates = hc::business_days(hc::Date::from_ymd(2000, 1, 3), num_days);
        const auto plan = hc::expanding_schedule(dates, base_train_days, test_days);
        std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> out;
        for (const auto& s : plan.steps) out.emplace_back(s.train_first, s.train_last, s.test_index);
        return out;
      },
      py::arg("num_days"), py::arg("base_train_days") = 504, py::arg("test_days") = 50,
      "(train_first, train_last, test_index) row indices of each walk-forward step.");

  m.def(
      "mse",
      [](const std::vector<double>& predictions, const std::vector<double>& actuals) {
        return hc::mse(predictions, actuals);
      },
      py::arg("predictions"), py::arg("actuals"));

  m.def(
      "backtest",
      [](const std::vector<std::string>& tickers, const std::vector<std::string>& dates, const hc::Matrix& close,
         const std::vector<std::string>& models, std::size_t base_train_days, std::size_t test_days,
         std::uint64_t seed, double learning_rate, std::size_t lookback, std::size_t epochs, std::size_t jobs) {
        hc::RunConfig c;
        c.tickers = tickers;
        c.models = models;
        c.base_train_days = base_train_days;
        c.test_days = test_days;
        c.seed = seed;
        c.train.learning_rate = learning_rate;
        c.train.lookback = lookback;
        c.train.epochs = epochs;
        c.jobs = jobs;
        c.validate();
        const auto panel = make_panel(tickers, dates, close);
        const auto plan = hc::expanding_schedule(panel.dates, base_train_days, test_days);
        py::gil_scoped_release release;
        std::vector<hc::BacktestReport> reports;
        const auto specs = c.model_specs();
        if (specs.size() == 1) {
          reports.push_back(hc::run_backtest(specs.front(), panel, c.graph, plan));
        } else {
          reports = hc::compare_models(specs, panel, c.graph, plan, jobs).reports;
        }
        py::gil_scoped_acquire acquire;
        py::list out;
        for (const auto& r : reports) out.append(report_dict(r));
        return out;
      },
      py::arg("tickers"), py::arg("dates"), py::arg("close"), py::arg("models") = std::vector<std::string>{"hybrid"},
      py::arg("base_train_days") = 504, py::arg("test_days") = 50, py::arg("seed") = 42,
      py::arg("learning_rate") = 0.005, py::arg("lookback") = 11, py::arg("epochs") = 40, py::arg("jobs") = 1,
      "Walk-forward backtest of each model; returns one report dict per model.");
}
