#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace hybridcast {

/// Dense row-major real matrix used by every numeric module.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Calendar day. Ordered, hashable through its day count.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(std::chrono::sys_days days) : days_(days) {}

  /// Parses a strict ISO-8601 calendar day ("2005-01-03"). Throws std::invalid_argument.
  static Date parse(std::string_view text);
  static Date from_ymd(int year, unsigned month, unsigned day);

  std::string iso() const;
  std::chrono::sys_days days() const { return days_; }
  std::int64_t serial() const { return days_.time_since_epoch().count(); }

  Date next() const { return Date(days_ + std::chrono::days(1)); }

  friend constexpr auto operator<=>(const Date&, const Date&) = default;

 private:
  std::chrono::sys_days days_{};
};

/// Closed interval of calendar days.
struct DateRange {
  Date first;
  Date last;

  bool contains(Date d) const { return first <= d && d <= last; }
  bool empty() const { return last < first; }
};

/// Shortest round-trip decimal text for a double. Used by every CSV writer so
/// outputs are byte-stable.
std::string format_number(double value);

/// Base of all library errors. `code()` names the failure class (e.g.
/// "DuplicateDate") so callers and tests can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class GradError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class BacktestError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error("InvalidConfig", field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace hybridcast
