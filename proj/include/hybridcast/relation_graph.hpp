#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hybridcast/common.hpp"
#include "hybridcast/market_data.hpp"

namespace hybridcast {

struct CorrMatrix {
  std::vector<std::string> tickers;
  Matrix rho;
};

enum class Direction : std::uint8_t { Up, Down };

/// (ticker column, direction). Items order by ticker, then Up before Down.
struct Item {
  std::size_t ticker = 0;
  Direction direction = Direction::Up;

  friend auto operator<=>(const Item&, const Item&) = default;
};

/// Sorted, duplicate-free set of items.
using Itemset = std::vector<Item>;

struct TransactionDB {
  std::vector<std::string> tickers;
  std::vector<Itemset> transactions;
  double move_threshold = 0.0;
};

struct FrequentItemset {
  Itemset items;
  double support = 0.0;
  std::size_t count = 0;
};

struct Rule {
  Itemset antecedent;
  Itemset consequent;
  double support = 0.0;
  double confidence = 0.0;
  double lift = 0.0;
};

struct RuleSet {
  std::vector<Rule> rules;
  double min_support = 0.0;
  double min_confidence = 0.0;
  double min_lift = 0.0;
};

struct CorrEdge {
  std::size_t a = 0;
  std::size_t b = 0;  // a < b
  double abs_rho = 0.0;
};

enum Provenance : std::uint8_t { kCorrelation = 1, kAssociation = 2 };

struct Edge {
  std::size_t a = 0;  // a < b
  std::size_t b = 0;
  double weight = 0.0;
  std::uint8_t provenance = 0;
};

struct StockGraph {
  std::vector<std::string> tickers;
  std::vector<Edge> edges;  // sorted by (a, b)

  /// Symmetric weighted adjacency without self-loops.
  Matrix weights() const;
};

/// Every threshold the graph builder reads from configuration.
struct GraphConfig {
  double corr_threshold = 0.7;
  double min_support = 0.30;
  double min_confidence = 0.60;
  double min_lift = 1.7;
  double move_threshold = 0.001;
  double lift_cap = 3.0;
};

CorrMatrix pearson_matrix(const ReturnPanel& returns, DateRange range);

std::vector<CorrEdge> correlation_edges(const CorrMatrix& corr, double tau = 0.7);

TransactionDB co_movement_transactions(const ReturnPanel& returns, DateRange range, double delta);

/// Level-wise Apriori. Output is ordered by itemset size, then lexicographically.
std::vector<FrequentItemset> apriori_frequent(const TransactionDB& db, double min_support);

RuleSet mine_rules(const std::vector<FrequentItemset>& frequents, double min_confidence, double min_lift = 1.7);

StockGraph assemble_graph(const std::vector<CorrEdge>& corr_edges, const RuleSet& rules,
                          const std::vector<std::string>& tickers, double lift_cap = 3.0);

/// D^{-1/2} (W + I) D^{-1/2}, with D the degree matrix of W + I.
Matrix normalized_adjacency(const StockGraph& graph);

/// Result of the full pipeline over one date range.
struct GraphBuild {
  CorrMatrix corr;
  RuleSet rules;
  StockGraph graph;
  Matrix a_hat;
};

GraphBuild build_graph(const ReturnPanel& returns, DateRange range, const GraphConfig& config);

std::string item_label(const Item& item, const std::vector<std::string>& tickers);
std::string itemset_label(const Itemset& items, const std::vector<std::string>& tickers);

/// `ticker_a,ticker_b,weight,provenance` lines with a header; pairs are
/// written with the lexicographically smaller ticker first.
std::string format_edge_list(const StockGraph& graph);

/// `antecedent,consequent,support,confidence,lift` lines with a header.
std::string format_rules(const RuleSet& rules, const std::vector<std::string>& tickers);

}  // namespace hybridcast
