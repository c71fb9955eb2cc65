#include "hybridcast/relation_graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace hybridcast {

namespace {

std::pair<std::size_t, std::size_t> rows_in_range(const std::vector<Date>& dates, DateRange range) {
  const auto lo = std::lower_bound(dates.begin(), dates.end(), range.first);
  const auto hi = std::upper_bound(dates.begin(), dates.end(), range.last);
  if (lo >= hi) return {0, 0};
  return {static_cast<std::size_t>(lo - dates.begin()), static_cast<std::size_t>(hi - lo)};
}

bool contains_all(const Itemset& transaction, const Itemset& items) {
  return std::includes(transaction.begin(), transaction.end(), items.begin(), items.end());
}

}  // namespace

Matrix StockGraph::weights() const {
  const auto n = static_cast<Eigen::Index>(tickers.size());
  Matrix w = Matrix::Zero(n, n);
  for (const auto& e : edges) {
    w(static_cast<Eigen::Index>(e.a), static_cast<Eigen::Index>(e.b)) = e.weight;
    w(static_cast<Eigen::Index>(e.b), static_cast<Eigen::Index>(e.a)) = e.weight;
  }
  return w;
}

CorrMatrix pearson_matrix(const ReturnPanel& returns, DateRange range) {
  const auto [first, count] = rows_in_range(returns.dates, range);
  if (count < 3) {
    throw GraphError("RangeTooShort", "correlation needs at least 3 return days, range has " +
                                          std::to_string(count));
  }
  const Matrix block = returns.returns.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count));
  const Eigen::RowVectorXd mean = block.colwise().mean();
  const Matrix centered = block.rowwise() - mean;
  const Eigen::VectorXd ss = centered.colwise().squaredNorm().transpose();

  const auto n = block.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(ss(i) > 0.0)) {
      throw GraphError("ZeroVariance", returns.tickers[static_cast<std::size_t>(i)] +
                                           " has constant returns over the range");
    }
  }
  CorrMatrix out;
  out.tickers = returns.tickers;
  out.rho = Matrix::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double num = centered.col(i).dot(centered.col(j));
      const double r = std::clamp(num / (std::sqrt(ss(i)) * std::sqrt(ss(j))), -1.0, 1.0);
      out.rho(i, j) = r;
      out.rho(j, i) = r;
    }
  }
  return out;
}

std::vector<CorrEdge> correlation_edges(const CorrMatrix& corr, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw GraphError("InvalidThreshold", "correlation threshold must lie in (0, 1)");
  }
  std::vector<CorrEdge> out;
  const auto n = corr.rho.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double a = std::abs(corr.rho(i, j));
      if (a > tau) out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), a});
    }
  }
  return out;
}

TransactionDB co_movement_transactions(const ReturnPanel& returns, DateRange range, double delta) {
  if (!(delta >= 0.0)) {
    throw GraphError("InvalidThreshold", "move threshold must be non-negative");
  }
  TransactionDB db;
  db.tickers = returns.tickers;
  db.move_threshold = delta;
  const auto [first, count] = rows_in_range(returns.dates, range);
  for (std::size_t t = first; t < first + count; ++t) {
    Itemset tx;
    for (std::size_t i = 0; i < returns.tickers.size(); ++i) {
      const double r = returns.returns(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
      if (r > delta) {
        tx.push_back({i, Direction::Up});
      } else if (r < -delta) {
        tx.push_back({i, Direction::Down});
      }
    }
    db.transactions.push_back(std::move(tx));
  }
  return db;
}

std::vector<FrequentItemset> apriori_frequent(const TransactionDB& db, double min_support) {
  if (!(min_support > 0.0 && min_support <= 1.0)) {
    throw GraphError("InvalidThreshold", "min_support must lie in (0, 1]");
  }
  if (db.transactions.empty()) {
    throw GraphError("EmptyDatabase", "no transactions to mine");
  }
  const double total = static_cast<double>(db.transactions.size());
  std::vector<FrequentItemset> out;

  std::map<Item, std::size_t> singles;
  for (const auto& tx : db.transactions) {
    for (const auto& item : tx) ++singles[item];
  }
  std::vector<Itemset> level;
  for (const auto& [item, count] : singles) {
    const double support = static_cast<double>(count) / total;
    if (support >= min_support) {
      level.push_back({item});
      out.push_back({{item}, support, count});
    }
  }

  while (level.size() > 1) {
    // join step: prefixes of length k-1 agree, last items ordered
    std::vector<Itemset> candidates;
    for (std::size_t x = 0; x < level.size(); ++x) {
      for (std::size_t y = x + 1; y < level.size(); ++y) {
        const auto& a = level[x];
        const auto& b = level[y];
        if (!std::equal(a.begin(), a.end() - 1, b.begin())) break;
        Itemset c = a;
        c.push_back(b.back());
        // prune: every (k)-subset must be frequent
        bool keep = true;
        for (std::size_t drop = 0; drop + 2 < c.size() && keep; ++drop) {
          Itemset sub;
          for (std::size_t k = 0; k < c.size(); ++k) {
            if (k != drop) sub.push_back(c[k]);
          }
          keep = std::binary_search(level.begin(), level.end(), sub);
        }
        if (keep) candidates.push_back(std::move(c));
      }
    }
    std::vector<Itemset> next;
    for (auto& c : candidates) {
      std::size_t count = 0;
      for (const auto& tx : db.transactions) {
        if (contains_all(tx, c)) ++count;
      }
      const double support = static_cast<double>(count) / total;
      if (support >= min_support) {
        out.push_back({c, support, count});
        next.push_back(std::move(c));
      }
    }
    level = std::move(next);
  }
  return out;
}

RuleSet mine_rules(const std::vector<FrequentItemset>& frequents, double min_confidence, double min_lift) {
  RuleSet out;
  out.min_confidence = min_confidence;
  out.min_lift = min_lift;
  out.min_support = 1.0;
  // Ratios come from integer counts when every itemset carries one, so a lift
  // that is exactly the threshold on paper is exactly the threshold here.
  std::map<Itemset, std::pair<double, std::size_t>> table;
  bool counted = !frequents.empty();
  double transactions = 0.0;
  for (const auto& f : frequents) {
    table[f.items] = {f.support, f.count};
    out.min_support = std::min(out.min_support, f.support);
    if (f.count == 0 || !(f.support > 0.0)) counted = false;
    if (counted && transactions == 0.0) transactions = std::round(static_cast<double>(f.count) / f.support);
  }
  const auto lookup = [&](const Itemset& s) {
    const auto it = table.find(s);
    if (it == table.end()) {
      throw GraphError("IncompleteFrequents", "a subset of a frequent itemset is missing");
    }
    return it->second;
  };

  for (const auto& f : frequents) {
    const std::size_t k = f.items.size();
    if (k < 2) continue;
    const std::uint32_t full = (1u << k) - 1u;
    for (std::uint32_t mask = 1; mask < full; ++mask) {
      Itemset lhs;
      Itemset rhs;
      for (std::size_t b = 0; b < k; ++b) {
        ((mask >> b) & 1u ? lhs : rhs).push_back(f.items[b]);
      }
      const auto [supp_l, count_l] = lookup(lhs);
      const auto [supp_r, count_r] = lookup(rhs);
      double confidence = f.support / supp_l;
      double lift = confidence / supp_r;
      if (counted) {
        const double both = static_cast<double>(f.count);
        confidence = both / static_cast<double>(count_l);
        lift = both * transactions / (static_cast<double>(count_l) * static_cast<double>(count_r));
      }
      if (confidence >= min_confidence && lift > min_lift) {
        out.rules.push_back({std::move(lhs), std::move(rhs), f.support, confidence, lift});
      }
    }
  }
  return out;
}

StockGraph assemble_graph(const std::vector<CorrEdge>& corr_edges, const RuleSet& rules,
                          const std::vector<std::string>& tickers, double lift_cap) {
  if (!(lift_cap > 0.0)) {
    throw GraphError("InvalidThreshold", "lift_cap must be positive");
  }
  const std::size_t n = tickers.size();
  std::map<std::pair<std::size_t, std::size_t>, Edge> merged;
  const auto add = [&](std::size_t a, std::size_t b, double weight, std::uint8_t flag) {
    if (a >= n || b >= n) {
      throw GraphError("UnknownTicker", "edge endpoint outside the ticker list");
    }
    if (a == b) return;
    if (a > b) std::swap(a, b);
    auto [it, fresh] = merged.try_emplace({a, b}, Edge{a, b, weight, flag});
    if (!fresh) {
      it->second.weight = std::max(it->second.weight, weight);
      it->second.provenance |= flag;
    }
  };

  for (const auto& e : corr_edges) add(e.a, e.b, e.abs_rho, kCorrelation);
  for (const auto& rule : rules.rules) {
    const double w = std::min(1.0, rule.lift / lift_cap);
    for (const auto& l : rule.antecedent) {
      for (const auto& r : rule.consequent) {
        if (l.ticker >= n || r.ticker >= n) {
          throw GraphError("UnknownTicker", "rule references a ticker outside the list");
        }
        add(l.ticker, r.ticker, w, kAssociation);
      }
    }
  }

  StockGraph g;
  g.tickers = tickers;
  for (auto& [key, edge] : merged) g.edges.push_back(edge);
  return g;
}

Matrix normalized_adjacency(const StockGraph& graph) {
  const auto n = static_cast<Eigen::Index>(graph.tickers.size());
  const Matrix w = graph.weights() + Matrix::Identity(n, n);
  const Eigen::VectorXd inv_sqrt = w.rowwise().sum().array().rsqrt();
  Matrix out(n, n);
  // d_i * d_j is commutative, so the result is exactly symmetric.
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = w(i, j) * (inv_sqrt(i) * inv_sqrt(j));
  }
  return out;
}

GraphBuild build_graph(const ReturnPanel& returns, DateRange range, const GraphConfig& config) {
  GraphBuild out;
  out.corr = pearson_matrix(returns, range);
  const auto edges = correlation_edges(out.corr, config.corr_threshold);
  const auto db = co_movement_transactions(returns, range, config.move_threshold);
  const auto frequents = apriori_frequent(db, config.min_support);
  out.rules = mine_rules(frequents, config.min_confidence, config.min_lift);
  out.rules.min_support = config.min_support;
  out.graph = assemble_graph(edges, out.rules, returns.tickers, config.lift_cap);
  out.a_hat = normalized_adjacency(out.graph);
  return out;
}

std::string item_label(const Item& item, const std::vector<std::string>& tickers) {
  return tickers.at(item.ticker) + (item.direction == Direction::Up ? ":UP" : ":DOWN");
}

std::string itemset_label(const Itemset& items, const std::vector<std::string>& tickers) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += '|';
    out += item_label(item, tickers);
  }
  return out;
}

std::string format_edge_list(const StockGraph& graph) {
  std::vector<std::string> lines;
  for (const auto& e : graph.edges) {
    auto a = graph.tickers.at(e.a);
    auto b = graph.tickers.at(e.b);
    if (b < a) std::swap(a, b);
    const char* prov = e.provenance == (kCorrelation | kAssociation) ? "both"
                       : e.provenance == kCorrelation               ? "corr"
                                                                    : "assoc";
    lines.push_back(a + "," + b + "," + format_number(e.weight) + "," + prov + "\n");
  }
  std::sort(lines.begin(), lines.end());
  std::string out = "ticker_a,ticker_b,weight,provenance\n";
  for (const auto& l : lines) out += l;
  return out;
}

std::string format_rules(const RuleSet& rules, const std::vector<std::string>& tickers) {
  std::string out = "antecedent,consequent,support,confidence,lift\n";
  for (const auto& r : rules.rules) {
    out += itemset_label(r.antecedent, tickers) + "," + itemset_label(r.consequent, tickers) + "," +
           format_number(r.support) + "," + format_number(r.confidence) + "," + format_number(r.lift) + "\n";
  }
  return out;
}

}  // namespace hybridcast
