#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hybridcast/common.hpp"

namespace hybridcast {

struct OhlcvRow {
  Date date;
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  double adj_close = 0.0;
  double volume = 0.0;
};

/// One ticker's daily bars, ascending by date.
struct RawSeries {
  std::string ticker;
  std::vector<OhlcvRow> rows;
};

/// Closing prices of N tickers over T common trading days. close is T x N.
struct PricePanel {
  std::vector<std::string> tickers;
  std::vector<Date> dates;
  Matrix close;

  std::size_t num_days() const { return dates.size(); }
  std::size_t num_tickers() const { return tickers.size(); }

  /// Index of `d` in dates; throws DataError("UnknownDate") when absent.
  std::size_t index_of(Date d) const;

  /// Contiguous block of days [first, first + count).
  PricePanel slice(std::size_t first, std::size_t count) const;
};

/// Simple daily returns. returns row t belongs to dates[t], i.e. the later day
/// of the pair (t, t+1) in the parent panel.
struct ReturnPanel {
  std::vector<std::string> tickers;
  std::vector<Date> dates;
  Matrix returns;
};

/// Per-ticker min-max scaling fitted over a fixed date range.
class Scaler {
 public:
  Scaler() = default;
  Scaler(std::vector<std::string> tickers, Vector x_min, Vector x_max, DateRange fit_range);

  const std::vector<std::string>& tickers() const { return tickers_; }
  const Vector& x_min() const { return x_min_; }
  const Vector& x_max() const { return x_max_; }
  const DateRange& fit_range() const { return fit_range_; }

  /// Scales a T x N matrix whose columns follow `tickers`. Values outside the
  /// fit range extrapolate linearly.
  Matrix scale(const Matrix& prices, std::span<const std::string> tickers) const;
  Matrix scale(const PricePanel& panel) const { return scale(panel.close, panel.tickers); }
  Matrix invert(const Matrix& scaled, std::span<const std::string> tickers) const;

  /// Scaling of a single column.
  double scale_value(std::size_t column, double price) const;
  double invert_value(std::size_t column, double scaled) const;

 private:
  void check_tickers(std::span<const std::string> tickers, std::size_t cols) const;

  std::vector<std::string> tickers_;
  Vector x_min_;
  Vector x_max_;
  DateRange fit_range_{};
};

struct WindowSample {
  Matrix input;  // L x N, oldest day first
  Vector target; // N
  Date target_date;
  Date first_input_date;
  Date last_input_date;
};

struct WindowDataset {
  std::size_t lookback = 0;
  std::size_t num_tickers = 0;
  std::vector<WindowSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// Parses CSV text with header date,open,high,low,close,adj_close,volume (any
/// column order). Rows come back sorted by date.
RawSeries parse_ohlcv_csv(std::string_view content, std::string ticker);

/// Reads `<dir>/<ticker>.csv`. Throws DataError("MissingFile") naming the ticker.
RawSeries load_ticker_csv(const std::filesystem::path& dir, const std::string& ticker);

std::string format_ohlcv_csv(const RawSeries& series);

/// Intersects the trading calendars and collects closing prices.
PricePanel align_panel(std::span<const RawSeries> series);

ReturnPanel daily_returns(const PricePanel& panel);

Scaler fit_scaler(const PricePanel& panel, DateRange fit_range);

/// Windows over a scaled slice; `dates` labels the rows of `scaled`.
WindowDataset make_windows(const Matrix& scaled, std::span<const Date> dates, std::size_t lookback);

/// Trailing mean; the first window-1 entries are undefined.
std::vector<std::optional<double>> moving_average(std::span<const double> closes, std::size_t window);

/// Settings for the lead-lag factor panel used by the synthetic studies and
/// fixtures. Each cluster shares a momentum-style return factor; the first
/// member of each cluster (the leader) moves one day ahead of the rest. Log
/// prices revert toward their start so every series stays in a band.
struct SyntheticConfig {
  std::size_t num_assets = 10;
  std::size_t num_clusters = 2;
  std::size_t num_days = 554;
  double factor_persistence = 0.8;
  double factor_volatility = 0.012;
  double idio_volatility = 0.003;
  /// Weight of today's factor in a leader's return, on top of tomorrow's.
  double leader_echo = 0.0;
  /// Daily pull of each log price back toward its starting level.
  double price_reversion = 0.2;
  std::uint64_t seed = 1;
  Date start = Date::from_ymd(2020, 1, 6);
};

/// Business-day calendar (Mon-Fri) starting at `start`.
std::vector<Date> business_days(Date start, std::size_t count);

std::vector<RawSeries> synthetic_market(const SyntheticConfig& config);

}  // namespace hybridcast
