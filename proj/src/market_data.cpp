#include "hybridcast/market_data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "hybridcast/random.hpp"

namespace hybridcast {

namespace {

constexpr std::array<std::string_view, 7> kColumns = {"date",  "open",      "high",  "low",
                                                      "close", "adj_close", "volume"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

}  // namespace

std::size_t PricePanel::index_of(Date d) const {
  const auto it = std::lower_bound(dates.begin(), dates.end(), d);
  if (it == dates.end() || *it != d) {
    throw DataError("UnknownDate", d.iso() + " is not a panel date");
  }
  return static_cast<std::size_t>(it - dates.begin());
}

PricePanel PricePanel::slice(std::size_t first, std::size_t count) const {
  if (first + count > dates.size()) {
    throw DataError("SliceOutOfRange", "panel slice exceeds " + std::to_string(dates.size()) + " days");
  }
  PricePanel out;
  out.tickers = tickers;
  out.dates.assign(dates.begin() + static_cast<std::ptrdiff_t>(first),
                   dates.begin() + static_cast<std::ptrdiff_t>(first + count));
  out.close = close.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count));
  return out;
}

RawSeries parse_ohlcv_csv(std::string_view content, std::string ticker) {
  RawSeries series;
  series.ticker = std::move(ticker);

  std::size_t line_no = 0;
  std::array<std::size_t, kColumns.size()> column_of{};
  bool have_header = false;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    const std::string_view line = trim(content.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) {
      if (end == content.size()) break;
      continue;
    }
    const auto fields = split_commas(line);
    if (!have_header) {
      if (fields.size() != kColumns.size()) {
        throw DataError("MalformedRow", series.ticker + " line 1: header must name " +
                                            std::to_string(kColumns.size()) + " columns");
      }
      for (std::size_t c = 0; c < kColumns.size(); ++c) {
        const auto it = std::find(fields.begin(), fields.end(), kColumns[c]);
        if (it == fields.end()) {
          throw DataError("MalformedRow",
                          series.ticker + " line 1: header lacks column '" + std::string(kColumns[c]) + "'");
        }
        column_of[c] = static_cast<std::size_t>(it - fields.begin());
      }
      have_header = true;
      continue;
    }
    const std::string where = series.ticker + " line " + std::to_string(line_no);
    if (fields.size() != kColumns.size()) {
      throw DataError("MalformedRow", where + ": expected 7 fields, got " + std::to_string(fields.size()));
    }
    OhlcvRow row;
    try {
      row.date = Date::parse(fields[column_of[0]]);
    } catch (const std::invalid_argument& e) {
      throw DataError("MalformedRow", where + ": " + e.what());
    }
    std::array<double*, 6> targets = {&row.open, &row.high, &row.low, &row.close, &row.adj_close, &row.volume};
    for (std::size_t c = 1; c < kColumns.size(); ++c) {
      if (!parse_double(fields[column_of[c]], *targets[c - 1])) {
        throw DataError("MalformedRow", where + ": cannot parse " + std::string(kColumns[c]) + " '" +
                                            std::string(fields[column_of[c]]) + "'");
      }
    }
    for (std::size_t c = 0; c < 5; ++c) {
      if (!(*targets[c] > 0.0)) {
        throw DataError("NonPositivePrice",
                        where + ": " + std::string(kColumns[c + 1]) + " = " + format_number(*targets[c]));
      }
    }
    if (row.volume < 0.0) {
      throw DataError("MalformedRow", where + ": negative volume");
    }
    series.rows.push_back(row);
    if (end == content.size()) break;
  }
  if (!have_header) {
    throw DataError("MalformedRow", series.ticker + ": missing header row");
  }

  std::stable_sort(series.rows.begin(), series.rows.end(),
                   [](const OhlcvRow& a, const OhlcvRow& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < series.rows.size(); ++i) {
    if (series.rows[i].date == series.rows[i - 1].date) {
      throw DataError("DuplicateDate", series.ticker + ": " + series.rows[i].date.iso() + " appears twice");
    }
  }
  return series;
}

RawSeries load_ticker_csv(const std::filesystem::path& dir, const std::string& ticker) {
  const auto path = dir / (ticker + ".csv");
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("MissingFile", "no data file for ticker " + ticker + " (" + path.string() + ")");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_ohlcv_csv(buf.str(), ticker);
}

std::string format_ohlcv_csv(const RawSeries& series) {
  std::string out = "date,open,high,low,close,adj_close,volume\n";
  for (const auto& r : series.rows) {
    out += r.date.iso();
    for (double v : {r.open, r.high, r.low, r.close, r.adj_close, r.volume}) {
      out += ',';
      out += format_number(v);
    }
    out += '\n';
  }
  return out;
}

PricePanel align_panel(std::span<const RawSeries> series) {
  if (series.size() < 2) {
    throw DataError("TooFewSeries", "alignment needs at least two series");
  }
  std::set<std::string> seen;
  for (const auto& s : series) {
    if (!seen.insert(s.ticker).second) {
      throw DataError("DuplicateTicker", s.ticker + " supplied twice");
    }
  }

  std::vector<Date> common;
  for (const auto& r : series.front().rows) common.push_back(r.date);
  for (std::size_t k = 1; k < series.size(); ++k) {
    std::vector<Date> other;
    for (const auto& r : series[k].rows) other.push_back(r.date);
    std::vector<Date> merged;
    std::set_intersection(common.begin(), common.end(), other.begin(), other.end(), std::back_inserter(merged));
    common = std::move(merged);
  }
  if (common.empty()) {
    throw DataError("EmptyIntersection", "series share no trading day");
  }

  PricePanel panel;
  panel.dates = common;
  panel.close.resize(static_cast<Eigen::Index>(common.size()), static_cast<Eigen::Index>(series.size()));
  for (std::size_t k = 0; k < series.size(); ++k) {
    panel.tickers.push_back(series[k].ticker);
    std::size_t t = 0;
    for (const auto& r : series[k].rows) {
      if (t < common.size() && r.date == common[t]) {
        panel.close(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = r.close;
        ++t;
      }
    }
  }
  return panel;
}

ReturnPanel daily_returns(const PricePanel& panel) {
  if (panel.num_days() < 2) {
    throw DataError("PanelTooShort", "returns need at least two days");
  }
  ReturnPanel out;
  out.tickers = panel.tickers;
  out.dates.assign(panel.dates.begin() + 1, panel.dates.end());
  const auto rows = panel.close.rows() - 1;
  out.returns = (panel.close.bottomRows(rows) - panel.close.topRows(rows)).array() /
                panel.close.topRows(rows).array();
  return out;
}

Scaler::Scaler(std::vector<std::string> tickers, Vector x_min, Vector x_max, DateRange fit_range)
    : tickers_(std::move(tickers)), x_min_(std::move(x_min)), x_max_(std::move(x_max)), fit_range_(fit_range) {}

void Scaler::check_tickers(std::span<const std::string> tickers, std::size_t cols) const {
  if (tickers.size() != tickers_.size() || cols != tickers_.size() ||
      !std::equal(tickers.begin(), tickers.end(), tickers_.begin())) {
    throw DataError("TickerMismatch", "scaler tickers differ from the supplied columns");
  }
}

Matrix Scaler::scale(const Matrix& prices, std::span<const std::string> tickers) const {
  check_tickers(tickers, static_cast<std::size_t>(prices.cols()));
  Matrix out(prices.rows(), prices.cols());
  for (Eigen::Index c = 0; c < prices.cols(); ++c) {
    out.col(c) = (prices.col(c).array() - x_min_(c)) / (x_max_(c) - x_min_(c));
  }
  return out;
}

Matrix Scaler::invert(const Matrix& scaled, std::span<const std::string> tickers) const {
  check_tickers(tickers, static_cast<std::size_t>(scaled.cols()));
  Matrix out(scaled.rows(), scaled.cols());
  for (Eigen::Index c = 0; c < scaled.cols(); ++c) {
    out.col(c) = scaled.col(c).array() * (x_max_(c) - x_min_(c)) + x_min_(c);
  }
  return out;
}

double Scaler::scale_value(std::size_t column, double price) const {
  const auto c = static_cast<Eigen::Index>(column);
  return (price - x_min_(c)) / (x_max_(c) - x_min_(c));
}

double Scaler::invert_value(std::size_t column, double scaled) const {
  const auto c = static_cast<Eigen::Index>(column);
  return scaled * (x_max_(c) - x_min_(c)) + x_min_(c);
}

Scaler fit_scaler(const PricePanel& panel, DateRange fit_range) {
  const auto lo = std::lower_bound(panel.dates.begin(), panel.dates.end(), fit_range.first);
  const auto hi = std::upper_bound(panel.dates.begin(), panel.dates.end(), fit_range.last);
  if (fit_range.empty() || lo >= hi) {
    throw DataError("EmptyFitRange", "fit range holds no panel dates");
  }
  const auto first = static_cast<Eigen::Index>(lo - panel.dates.begin());
  const auto count = static_cast<Eigen::Index>(hi - lo);
  const auto block = panel.close.middleRows(first, count);
  Vector x_min = block.colwise().minCoeff().transpose();
  Vector x_max = block.colwise().maxCoeff().transpose();
  for (Eigen::Index c = 0; c < x_min.size(); ++c) {
    if (!(x_max(c) > x_min(c))) {
      throw DataError("DegenerateSeries", panel.tickers[static_cast<std::size_t>(c)] +
                                              " is constant over the fit range");
    }
  }
  return Scaler(panel.tickers, std::move(x_min), std::move(x_max), DateRange{*lo, *(hi - 1)});
}

WindowDataset make_windows(const Matrix& scaled, std::span<const Date> dates, std::size_t lookback) {
  const auto days = static_cast<std::size_t>(scaled.rows());
  if (dates.size() != days) {
    throw DataError("LengthMismatch", "dates do not label every scaled row");
  }
  if (lookback == 0 || days <= lookback) {
    throw DataError("SliceTooShort", std::to_string(days) + " days cannot fill a lookback of " +
                                         std::to_string(lookback));
  }
  WindowDataset ds;
  ds.lookback = lookback;
  ds.num_tickers = static_cast<std::size_t>(scaled.cols());
  ds.samples.reserve(days - lookback);
  const auto L = static_cast<Eigen::Index>(lookback);
  for (std::size_t t = lookback; t < days; ++t) {
    WindowSample s;
    s.input = scaled.middleRows(static_cast<Eigen::Index>(t) - L, L);
    s.target = scaled.row(static_cast<Eigen::Index>(t)).transpose();
    s.target_date = dates[t];
    s.first_input_date = dates[t - lookback];
    s.last_input_date = dates[t - 1];
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::optional<double>> moving_average(std::span<const double> closes, std::size_t window) {
  if (window == 0) {
    throw DataError("InvalidWindow", "moving-average window must be at least 1");
  }
  std::vector<std::optional<double>> out(closes.size());
  double sum = 0.0;
  for (std::size_t t = 0; t < closes.size(); ++t) {
    sum += closes[t];
    if (t >= window) sum -= closes[t - window];
    if (t + 1 >= window) {
      // recompute exactly every so often to stop drift in the running sum
      if ((t + 1) % 256 == 0) {
        sum = 0.0;
        for (std::size_t k = t + 1 - window; k <= t; ++k) sum += closes[k];
      }
      out[t] = sum / static_cast<double>(window);
    }
  }
  return out;
}

std::vector<Date> business_days(Date start, std::size_t count) {
  std::vector<Date> out;
  out.reserve(count);
  Date d = start;
  while (out.size() < count) {
    const std::chrono::weekday wd(d.days());
    if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) out.push_back(d);
    d = d.next();
  }
  return out;
}

std::vector<RawSeries> synthetic_market(const SyntheticConfig& config) {
  if (config.num_assets < 2 || config.num_clusters == 0 || config.num_clusters > config.num_assets ||
      config.num_days < 2) {
    throw DataError("InvalidSynthetic", "need >= 2 assets, 1..assets clusters and >= 2 days");
  }
  Rng rng(config.seed);
  const std::size_t T = config.num_days;
  const double phi = config.factor_persistence;
  const double shock = config.factor_volatility * std::sqrt(1.0 - phi * phi);

  // one extra day so leaders can read tomorrow's factor
  std::vector<std::vector<double>> factor(config.num_clusters, std::vector<double>(T + 1));
  for (auto& f : factor) {
    double d = rng.normal() * config.factor_volatility;
    for (auto& v : f) {
      d = phi * d + shock * rng.normal();
      v = d;
    }
  }

  const auto dates = business_days(config.start, T);
  std::vector<RawSeries> out;
  for (std::size_t a = 0; a < config.num_assets; ++a) {
    const std::size_t cluster = a % config.num_clusters;
    const bool leader = a < config.num_clusters;
    const double beta = leader ? 1.0 : rng.uniform(0.8, 1.2);
    double price = rng.uniform(20.0, 200.0);
    const double anchor = std::log(price);

    RawSeries s;
    char name[16];
    std::snprintf(name, sizeof name, "SYN%02zu", a);
    s.ticker = name;
    for (std::size_t t = 0; t < T; ++t) {
      const double prev = price;
      if (t > 0) {
        const double common =
            leader ? factor[cluster][t + 1] + config.leader_echo * factor[cluster][t] : factor[cluster][t];
        const double pull = config.price_reversion * (std::log(prev) - anchor);
        const double r = beta * common - pull + config.idio_volatility * rng.normal();
        price = prev * (1.0 + r);
      }
      OhlcvRow row;
      row.date = dates[t];
      row.close = price;
      row.adj_close = price;
      row.open = prev * (1.0 + 0.002 * rng.normal());
      row.high = std::max(row.open, row.close) * (1.0 + 0.004 * std::abs(rng.normal()));
      row.low = std::min(row.open, row.close) * (1.0 - 0.004 * std::abs(rng.normal()));
      row.volume = std::floor(1.0e6 * (1.0 + rng.uniform()));
      s.rows.push_back(row);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hybridcast
