#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hybridcast/reporting.hpp"

namespace hc = hybridcast;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kTraining = 4 };

void add_run_options(CLI::App& app, hc::RunConfig& c) {
  app.add_option("--data_dir", c.data_dir, "Directory holding one <TICKER>.csv per ticker");
  app.add_option("--tickers", c.tickers, "Ticker list")->delimiter(',');
  app.add_option("--start_date", c.start_date, "First date to keep (YYYY-MM-DD)");
  app.add_option("--end_date", c.end_date, "Last date to keep (YYYY-MM-DD)");

  app.add_option("--corr_threshold", c.graph.corr_threshold, "Keep pairs with |rho| above this");
  app.add_option("--min_support", c.graph.min_support, "Apriori minimum support");
  app.add_option("--min_confidence", c.graph.min_confidence, "Minimum rule confidence");
  app.add_option("--min_lift", c.graph.min_lift, "Keep rules with lift above this");
  app.add_option("--move_threshold", c.graph.move_threshold, "Absolute return that counts as a move");
  app.add_option("--lift_cap", c.graph.lift_cap, "Lift mapped to edge weight 1");

  app.add_option("--models", c.models, "hybrid, lstm, linreg, dense, cnn1d")->delimiter(',');
  app.add_option("--learning_rate", c.train.learning_rate, "Adam learning rate");
  app.add_option("--lookback", c.train.lookback, "Window length in days");
  app.add_option("--epochs", c.train.epochs, "Epoch cap");
  app.add_option("--batch_size", c.train.batch_size, "Mini-batch size, 0 for full batch");
  app.add_option("--dropout", c.train.dropout, "Dropout rate");
  app.add_option("--patience", c.train.patience, "Early-stopping patience");
  app.add_option("--min_delta", c.train.min_delta, "Smallest validation improvement that counts");
  app.add_option("--validation_fraction", c.train.validation_fraction, "Chronological validation tail");
  app.add_option("--lstm_hidden", c.widths.lstm_hidden);
  app.add_option("--lstm_layers", c.widths.lstm_layers);
  app.add_option("--gcn_hidden", c.widths.gcn_hidden);
  app.add_option("--gcn_out", c.widths.gcn_out);
  app.add_option("--fusion_hidden", c.widths.fusion_hidden);
  app.add_option("--dense_hidden", c.widths.dense_hidden);
  app.add_option("--cnn_channels", c.widths.cnn_channels);
  app.add_option("--cnn_kernel", c.widths.cnn_kernel);

  app.add_option("--base_train_days", c.base_train_days, "Days in the first training window");
  app.add_option("--test_days", c.test_days, "Walk-forward test days");
  app.add_option("--warm_start", c.warm_start, "Start each step from the previous step's weights");
  app.add_option("--price_space", c.price_space, "Also report errors in price units");

  app.add_option("--out", c.out_dir, "Output directory");
  app.add_option("--seed", c.seed, "Base seed");
  app.add_option("--jobs", c.jobs, "Worker threads for comparisons and grid search");

  app.add_option("--grid_learning_rates", c.grid.learning_rates)->delimiter(',');
  app.add_option("--grid_lookbacks", c.grid.lookbacks)->delimiter(',');
  app.add_option("--grid_epochs", c.grid.epochs)->delimiter(',');
}

int run(const std::string& command, const hc::RunConfig& config, std::size_t synth_days) {
  hc::OutputFiles files;
  std::filesystem::path dir = config.out_dir;
  if (command == "ingest") {
    files = hc::cmd_ingest(config);
  } else if (command == "graph") {
    files = hc::cmd_graph(config);
  } else if (command == "backtest") {
    files = hc::cmd_backtest(config);
  } else if (command == "gridsearch") {
    files = hc::cmd_gridsearch(config);
  } else {
    files = hc::cmd_synth(config, synth_days);
    dir = config.data_dir;
  }
  hc::write_outputs(dir, files);
  for (const auto& [name, content] : files) std::cout << (dir / name).string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybridcast: LSTM + graph convolution stock forecasting backtests"};
  app.set_version_flag("--version", std::string(HYBRIDCAST_VERSION));
  app.set_config("--config", "", "TOML or INI file with any of the option keys");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  hc::RunConfig config;
  add_run_options(app, config);

  std::size_t synth_days = 554;
  app.add_subcommand("ingest", "Summarize the panel and write moving-average data")->fallthrough();
  app.add_subcommand("graph", "Build the stock relation graph")->fallthrough();
  app.add_subcommand("backtest", "Walk-forward backtest of the configured models")->fallthrough();
  app.add_subcommand("gridsearch", "Rank learning rate x lookback x epochs cells")->fallthrough();
  auto* synth = app.add_subcommand("synth", "Write a synthetic lead-lag OHLCV panel into data_dir");
  synth->fallthrough();
  synth->add_option("--days", synth_days, "Business days to generate")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, config, synth_days);
  } catch (const hc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const hc::DataError& e) {
    std::cerr << "data error [" << e.code() << "]: " << e.what() << "\n";
    return kData;
  } catch (const hc::GraphError& e) {
    std::cerr << "data error [" << e.code() << "]: " << e.what() << "\n";
    return kData;
  } catch (const hc::ModelError& e) {
    std::cerr << "training failure [" << e.code() << "]: " << e.what() << "\n";
    return kTraining;
  } catch (const hc::GradError& e) {
    std::cerr << "training failure [" << e.code() << "]: " << e.what() << "\n";
    return kTraining;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
