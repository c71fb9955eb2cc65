#pragma once

#include <string>
#include <vector>

#include "hybridcast/market_data.hpp"
#include "hybridcast/random.hpp"

namespace hctest {

using hybridcast::Date;
using hybridcast::Matrix;

inline std::vector<std::string> tickers(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("T" + std::to_string(i));
  return out;
}

/// Geometric random walk panel on a business-day calendar.
inline hybridcast::PricePanel random_panel(std::size_t days, std::size_t n, std::uint64_t seed, double vol = 0.02) {
  hybridcast::Rng rng(seed);
  hybridcast::PricePanel p;
  p.tickers = tickers(n);
  p.dates = hybridcast::business_days(Date::from_ymd(2021, 1, 4), days);
  p.close.resize(static_cast<Eigen::Index>(days), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.close.cols(); ++i) {
    double price = rng.uniform(5.0, 500.0);
    for (Eigen::Index t = 0; t < p.close.rows(); ++t) {
      p.close(t, i) = price;
      price *= 1.0 + rng.normal(0.0, vol);
    }
  }
  return p;
}

inline hybridcast::ReturnPanel random_returns(std::size_t days, std::size_t n, std::uint64_t seed) {
  return hybridcast::daily_returns(random_panel(days + 1, n, seed));
}

}  // namespace hctest
