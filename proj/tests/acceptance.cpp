// Acceptance suite: one PASS/FAIL line per headline criterion, non-zero exit
// status when any criterion fails.
//
// HYBRIDCAST_REAL_DATA=<dir> enables the real-data check (ten <TICKER>.csv
// exports); without it that line reports SKIP.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Eigenvalues>

#include "hybridcast/backtest.hpp"
#include "hybridcast/reporting.hpp"

using namespace hybridcast;
using grad::Mode;
using grad::ParamStore;
using grad::Tape;
using grad::Var;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << " | " << detail << std::endl;
  if (!ok) ++failures;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

std::vector<const Matrix*> pointers(const std::vector<Matrix>& v) {
  std::vector<const Matrix*> out;
  for (const auto& m : v) out.push_back(&m);
  return out;
}

Matrix random_adjacency(std::size_t n, Rng& rng, double density) {
  StockGraph g;
  for (std::size_t i = 0; i < n; ++i) g.tickers.push_back("N" + std::to_string(i));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (rng.uniform() < density) g.edges.push_back({a, b, rng.uniform(0.05, 1.0), kCorrelation});
    }
  }
  return normalized_adjacency(g);
}

// ---------------------------------------------------------------------------

void gradient_correctness() {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst;
  const auto check = [&](const std::string& name, const grad::LossBuilder& build, ParamStore& p) {
    const double e = grad::gradient_check(build, p);
    worst[name] = std::max(worst[name], e);
  };
  for (std::uint64_t s = 1; s <= 20; ++s) {
    Rng rng(1000 + s);
    {
      ParamStore p;
      add_dense_params(p, "d", 5, 3, rng);
      const Matrix x = random_matrix(4, 5, rng), y = random_matrix(4, 3, rng);
      check("dense",
            [&](Tape& t, ParamStore& ps) {
              return grad::mse_loss(grad::relu(dense_layer(t, ps, "d", t.constant(x))), t.constant(y));
            },
            p);
    }
    {
      ParamStore p;
      add_lstm_params(p, "c", 3, 4, 1, rng);
      const Matrix x = random_matrix(2, 3, rng), y = random_matrix(2, 4, rng, -0.5, 0.5);
      check("lstm cell",
            [&](Tape& t, ParamStore& ps) {
              Rng r(0);
              return grad::mse_loss(lstm_forward(t, ps, "c", t.constant(x), 1, 1, 0.0, Mode::Eval, r),
                                    t.constant(y));
            },
            p);
    }
    {
      ParamStore p;
      add_gcn_params(p, "g", 3, 5, 2, rng);
      const Matrix a = random_adjacency(4, rng, 0.6);
      const Matrix x = random_matrix(4, 3, rng), y = random_matrix(4, 2, rng);
      check("gcn layer",
            [&](Tape& t, ParamStore& ps) {
              Rng r(s);
              return grad::mse_loss(gcn_forward(t, ps, "g", t.constant(x), a, 0.5, Mode::Train, r), t.constant(y));
            },
            p);
    }
    for (auto kind : {ModelKind::Cnn1d, ModelKind::Hybrid}) {
      ModelSpec spec;
      spec.kind = kind;
      spec.widths = {4, 2, 5, 3, 6, 6, 4, 3};
      spec.train.lookback = 5;
      const std::size_t n = 4;
      const Matrix a = random_adjacency(n, rng, 0.6);
      const auto net = make_network(spec, n, &a);
      ParamStore p = net->init_params(rng);
      std::vector<Matrix> w;
      for (int b = 0; b < 3; ++b) w.push_back(random_matrix(5, n, rng, 0.0, 1.0));
      const Matrix y = random_matrix(3, n, rng, 0.0, 1.0);
      check(kind == ModelKind::Cnn1d ? "cnn" : "hybrid fusion",
            [&](Tape& t, ParamStore& ps) {
              Rng r(s);
              const auto ptr = pointers(w);
              return grad::mse_loss(net->forward(t, ps, ptr, Mode::Train, r), t.constant(y));
            },
            p);
    }
  }
  double max_err = 0.0;
  std::string detail;
  for (const auto& [name, e] : worst) {
    max_err = std::max(max_err, e);
    detail += name + " " + num(e) + ", ";
  }
  const double secs = seconds_since(t0);
  report(max_err < 1e-4 && secs < 60.0, "gradient correctness",
         detail + "20 points each, h 1e-5, denominator floor " + num(grad::GradCheckOptions{}.floor) + ", " + num(secs) + " s (need < 1e-4, < 60 s)");
}

// ---------------------------------------------------------------------------

void apriori_oracle() {
  const auto t0 = Clock::now();
  std::size_t mismatches = 0, itemsets = 0, rules = 0;
  for (std::uint64_t s = 1; s <= 100; ++s) {
    Rng rng(2000 + s);
    const std::size_t items = 2 + rng.below(5);    // 2..6
    const std::size_t n = 1 + rng.below(50);       // 1..50
    const double density = rng.uniform(0.2, 0.8);
    const double min_support = rng.uniform(0.05, 0.5);
    const double min_confidence = rng.uniform(0.0, 0.8);
    const double min_lift = 1.7;
    std::vector<Item> universe;
    for (std::size_t k = 0; k < items; ++k) universe.push_back({k, rng.below(2) ? Direction::Up : Direction::Down});
    std::sort(universe.begin(), universe.end());
    TransactionDB db;
    for (std::size_t k = 0; k < items; ++k) db.tickers.push_back("I" + std::to_string(k));
    std::vector<std::uint32_t> masks;
    for (std::size_t t = 0; t < n; ++t) {
      std::uint32_t m = 0;
      Itemset tx;
      for (std::size_t k = 0; k < items; ++k) {
        if (rng.uniform() < density) {
          m |= 1u << k;
          tx.push_back(universe[k]);
        }
      }
      masks.push_back(m);
      db.transactions.push_back(tx);
    }

    // exhaustive enumeration
    const auto as_set = [&](std::uint32_t m) {
      Itemset out;
      for (std::size_t k = 0; k < items; ++k) {
        if ((m >> k) & 1u) out.push_back(universe[k]);
      }
      return out;
    };
    std::map<std::uint32_t, std::size_t> count;
    for (std::uint32_t m = 1; m < (1u << items); ++m) {
      std::size_t c = 0;
      for (auto tm : masks) c += (tm & m) == m;
      count[m] = c;
    }
    std::map<Itemset, std::pair<double, std::size_t>> expected;
    for (const auto& [m, c] : count) {
      const double support = static_cast<double>(c) / static_cast<double>(n);
      if (c > 0 && support >= min_support) expected[as_set(m)] = {support, c};
    }
    std::map<std::pair<Itemset, Itemset>, std::pair<double, double>> expected_rules;
    for (const auto& [m, c] : count) {
      if (!expected.count(as_set(m)) || std::popcount(m) < 2) continue;
      for (std::uint32_t lhs = (m - 1) & m; lhs > 0; lhs = (lhs - 1) & m) {
        const std::uint32_t rhs = m & ~lhs;
        const double conf = static_cast<double>(c) / static_cast<double>(count[lhs]);
        const double lift = static_cast<double>(c) * static_cast<double>(n) /
                            (static_cast<double>(count[lhs]) * static_cast<double>(count[rhs]));
        if (conf >= min_confidence && lift > min_lift) expected_rules[{as_set(lhs), as_set(rhs)}] = {conf, lift};
      }
    }

    const auto frequents = apriori_frequent(db, min_support);
    std::map<Itemset, std::pair<double, std::size_t>> got;
    for (const auto& f : frequents) got[f.items] = {f.support, f.count};
    if (got != expected) ++mismatches;
    const RuleSet mined = mine_rules(frequents, min_confidence, min_lift);
    std::map<std::pair<Itemset, Itemset>, std::pair<double, double>> got_rules;
    for (const auto& r : mined.rules) {
      got_rules[{r.antecedent, r.consequent}] = {r.confidence, r.lift};
      if (!(r.lift > 1.7)) ++mismatches;
    }
    if (got_rules != expected_rules) ++mismatches;
    itemsets += expected.size();
    rules += expected_rules.size();
  }
  const double secs = seconds_since(t0);
  report(mismatches == 0 && secs < 60.0, "apriori oracle equivalence",
         "100 databases, " + std::to_string(itemsets) + " frequent itemsets, " + std::to_string(rules) +
             " rules, " + std::to_string(mismatches) + " mismatches, " + num(secs) + " s");
}

// ---------------------------------------------------------------------------

void pearson_oracle() {
  double max_err = 0.0;
  bool invariants = true;
  for (std::uint64_t s = 1; s <= 100; ++s) {
    Rng rng(3000 + s);
    const auto T = static_cast<Eigen::Index>(3 + rng.below(250));
    const auto N = static_cast<Eigen::Index>(2 + rng.below(9));
    ReturnPanel r;
    r.returns = random_matrix(T, N, rng, -0.05, 0.05);
    // some correlated columns
    for (Eigen::Index j = 1; j < N; j += 2) r.returns.col(j) += rng.uniform(-2, 2) * r.returns.col(j - 1);
    for (Eigen::Index j = 0; j < N; ++j) r.tickers.push_back("S" + std::to_string(j));
    r.dates = business_days(Date::from_ymd(2020, 1, 1), static_cast<std::size_t>(T));
    const Matrix rho = pearson_matrix(r, {r.dates.front(), r.dates.back()}).rho;
    for (Eigen::Index i = 0; i < N; ++i) {
      for (Eigen::Index j = 0; j < N; ++j) {
        double mi = 0, mj = 0;
        for (Eigen::Index t = 0; t < T; ++t) {
          mi += r.returns(t, i);
          mj += r.returns(t, j);
        }
        mi /= static_cast<double>(T);
        mj /= static_cast<double>(T);
        double sij = 0, sii = 0, sjj = 0;
        for (Eigen::Index t = 0; t < T; ++t) {
          const double di = r.returns(t, i) - mi, dj = r.returns(t, j) - mj;
          sij += di * dj;
          sii += di * di;
          sjj += dj * dj;
        }
        max_err = std::max(max_err, std::abs(rho(i, j) - sij / std::sqrt(sii * sjj)));
        invariants = invariants && rho(i, j) == rho(j, i) && std::abs(rho(i, j)) <= 1.0;
      }
      invariants = invariants && std::abs(rho(i, i) - 1.0) < 1e-12;
    }
  }
  report(max_err < 1e-12 && invariants, "pearson oracle equivalence",
         "100 panels, max |diff| " + num(max_err) + ", symmetry/diagonal/range " + (invariants ? "ok" : "violated"));
}

// ---------------------------------------------------------------------------

void adjacency_spectrum() {
  double lo = 0.0, hi = 0.0;
  for (std::uint64_t s = 1; s <= 200; ++s) {
    Rng rng(4000 + s);
    const std::size_t n = 1 + rng.below(10);
    const Matrix a = random_adjacency(n, rng, rng.uniform(0.0, 1.0));
    const Eigen::MatrixXd dense = a;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense);
    lo = std::min(lo, eig.eigenvalues().minCoeff());
    hi = std::max(hi, eig.eigenvalues().maxCoeff());
  }
  report(lo >= -1.0 - 1e-9 && hi <= 1.0 + 1e-9, "normalized adjacency spectrum",
         "200 graphs, eigenvalues in [" + num(lo) + ", " + num(hi) + "]");
}

// ---------------------------------------------------------------------------

void expanding_window_protocol() {
  const PricePanel panel = align_panel(synthetic_market(SyntheticConfig{}));
  const WindowPlan plan = expanding_schedule(panel.dates, 504, 50);
  bool ok = panel.num_days() == 554 && plan.steps.size() == 50;
  for (std::size_t k = 0; ok && k < plan.steps.size(); ++k) {
    const auto& s = plan.steps[k];
    ok = s.train_first == 0 && s.train_days() == 504 + k && s.test_index == s.train_last + 1;
    if (k > 0) ok = ok && s.train.first == plan.steps[k - 1].train.first && s.train.last == plan.steps[k - 1].test_date;
  }
  std::size_t leaks = 0;
  const StepPredictor probe = [&](const StepContext& ctx) -> Vector {
    for (const auto& sample : ctx.dataset.samples) {
      if (sample.target_date > ctx.step.train.last) ++leaks;
    }
    if (!(ctx.scaler.fit_range().last == ctx.step.train.last)) ++leaks;
    return Vector::Zero(static_cast<Eigen::Index>(panel.num_tickers()));
  };
  const auto r = run_walk_forward("audit", panel, plan, GraphConfig{}, 11, true, 1, probe);
  for (const auto& a : r.audit) {
    if (!(a.train_last < a.test_date && a.scaler_fit_last == a.train_last && a.graph_last == a.train_last &&
          a.max_sample_date <= a.train_last && a.max_test_input_date < a.test_date)) {
      ++leaks;
    }
  }
  report(ok && leaks == 0 && r.per_day.size() == 50, "expanding-window protocol",
         std::to_string(plan.steps.size()) + " steps, nested +1 day per step " + (ok ? "ok" : "broken") +
             ", leakage findings " + std::to_string(leaks));
}

// ---------------------------------------------------------------------------

void scaling_and_returns() {
  double scale_err = 0.0, return_err = 0.0;
  for (std::uint64_t s = 1; s <= 1000; ++s) {
    Rng rng(5000 + s);
    const std::size_t T = 3 + rng.below(300);
    PricePanel p;
    p.tickers = {"X"};
    p.dates = business_days(Date::from_ymd(2019, 1, 1), T);
    p.close.resize(static_cast<Eigen::Index>(T), 1);
    double price = std::exp(rng.uniform(0.0, 8.0));
    for (std::size_t t = 0; t < T; ++t) {
      p.close(static_cast<Eigen::Index>(t), 0) = price;
      price *= 1.0 + rng.normal(0.0, 0.03);
      price = std::max(price, 1e-3);
    }
    const Scaler sc = fit_scaler(p, {p.dates.front(), p.dates.back()});
    const Matrix back = sc.invert(sc.scale(p), p.tickers);
    scale_err = std::max(scale_err, ((back - p.close).array().abs() / p.close.array().abs()).maxCoeff());
    const ReturnPanel r = daily_returns(p);
    for (Eigen::Index t = 0; t + 1 < p.close.rows(); ++t) {
      const double rebuilt = p.close(t, 0) * (1.0 + r.returns(t, 0));
      return_err = std::max(return_err, std::abs(rebuilt - p.close(t + 1, 0)) / p.close(t + 1, 0));
    }
  }
  report(scale_err < 1e-9 && return_err < 1e-12, "scaling round trip and return reconstruction",
         "1000 series, scaling rel err " + num(scale_err) + " (< 1e-9), reconstruction rel err " + num(return_err) +
             " (rounding only)");
}

// ---------------------------------------------------------------------------

void early_stopping() {
  const PricePanel panel = align_panel(synthetic_market(SyntheticConfig{4, 2, 120}));
  const Scaler sc = fit_scaler(panel, {panel.dates.front(), panel.dates.back()});
  const WindowDataset data = make_windows(sc.scale(panel), panel.dates, 5);
  bool ok = true;
  std::string detail;
  for (std::size_t best : {1u, 2u, 7u, 20u}) {
    ModelSpec spec;
    spec.kind = ModelKind::Lstm;
    spec.widths = {4, 1, 4, 2, 4, 4, 4, 3};
    spec.train.lookback = 5;
    spec.train.epochs = 40;
    spec.train.patience = 5;
    std::vector<ParamStore> snapshots;
    TrainHooks hooks;
    hooks.validation_override = [best](std::size_t epoch, double) {
      return epoch <= best ? 1.0 / static_cast<double>(epoch) : 1.0 + static_cast<double>(epoch);
    };
    hooks.on_epoch_end = [&](std::size_t, const ParamStore& p) { snapshots.push_back(p); };
    const TrainedModel m = train(spec, data, nullptr, hooks);
    bool same = m.history.size() == best + 5 && m.best_epoch == best && m.stopped_early;
    for (std::size_t k = 0; same && k < m.params.size(); ++k) {
      same = m.params.all()[k].value == snapshots[best - 1].all()[k].value;
    }
    ok = ok && same;
    detail += "best " + std::to_string(best) + " -> halted at " + std::to_string(m.history.size()) + "; ";
  }
  report(ok, "early stopping", detail + "best-epoch parameters returned " + (ok ? "yes" : "no"));
}

// ---------------------------------------------------------------------------

void directional_study() {
  const auto t0 = Clock::now();
  const std::size_t seeds = 10;
  std::vector<double> hybrid(seeds), lstm(seeds);
  const RunConfig defaults;
  parallel_for(seeds, workers(), [&](std::size_t k) {
    SyntheticConfig sc;
    sc.seed = k + 1;
    const PricePanel panel = align_panel(synthetic_market(sc));
    const WindowPlan plan = expanding_schedule(panel.dates, defaults.base_train_days, defaults.test_days);
    RunConfig c = defaults;
    c.seed = k + 1;
    const auto cmp = compare_models({c.spec_for(ModelKind::Hybrid), c.spec_for(ModelKind::Lstm)}, panel, c.graph, plan);
    hybrid[k] = cmp.rows[0].mean_mse;
    lstm[k] = cmp.rows[1].mean_mse;
  });
  std::size_t wins = 0;
  std::vector<double> improvement;
  for (std::size_t k = 0; k < seeds; ++k) {
    const double rel = (lstm[k] - hybrid[k]) / lstm[k];
    wins += hybrid[k] < lstm[k];
    improvement.push_back(rel);
    std::cout << "    seed " << k + 1 << ": hybrid " << num(hybrid[k]) << ", lstm " << num(lstm[k])
              << ", improvement " << num(100.0 * rel) << "%" << std::endl;
  }
  std::sort(improvement.begin(), improvement.end());
  const double median = 0.5 * (improvement[seeds / 2 - 1] + improvement[seeds / 2]);
  report(wins >= 7 && median > 0.0, "directional synthetic study",
         "hybrid beats lstm in " + std::to_string(wins) + "/10 seeds (need >= 7), median improvement " +
             num(100.0 * median) + "% (need > 0), " + num(seconds_since(t0) / 60.0) + " min on " +
             std::to_string(workers()) + " threads");
}

// ---------------------------------------------------------------------------

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hybridcast_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void determinism() {
  const fs::path root = scratch("determinism");
  RunConfig c;
  c.data_dir = root / "data";
  c.models = {"hybrid", "lstm", "linreg", "dense", "cnn1d"};
  c.test_days = 3;
  c.price_space = true;
  write_outputs(c.data_dir, cmd_synth(c, 554));
  c.out_dir = root / "a";
  c.jobs = 1;
  write_outputs(c.out_dir, cmd_backtest(c));
  c.out_dir = root / "b";
  c.jobs = std::max<std::size_t>(2, workers());
  write_outputs(c.out_dir, cmd_backtest(c));
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    const auto name = entry.path().filename();
    if (name.extension() != ".csv") continue;
    ++compared;
    if (slurp(entry.path()) != slurp(root / "b" / name)) ++differing;
  }
  report(compared >= 5 && differing == 0, "determinism",
         std::to_string(compared) + " CSVs from five-model reruns (1 vs " + std::to_string(c.jobs) +
             " threads), " + std::to_string(differing) + " differ");
}

// ---------------------------------------------------------------------------

void real_data() {
  const char* dir = std::getenv("HYBRIDCAST_REAL_DATA");
  if (dir == nullptr || *dir == '\0') {
    std::cout << "SKIP real-data check | set HYBRIDCAST_REAL_DATA to a directory of the ten ticker CSVs" << std::endl;
    return;
  }
  const auto t0 = Clock::now();
  RunConfig c;
  c.data_dir = dir;
  c.models = {"hybrid", "lstm", "linreg", "dense", "cnn1d"};
  c.jobs = workers();
  const PricePanel panel = load_panel(c);
  const WindowPlan plan = expanding_schedule(panel.dates, c.base_train_days, c.test_days);
  bool in_range = true;
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    c.seed = seed;
    const auto cmp = compare_models(c.model_specs(), panel, c.graph, plan, c.jobs);
    for (const auto& row : cmp.rows) in_range = in_range && row.mean_mse > 0.0 && row.mean_mse < 0.02;
    wins += cmp.rows[0].mean_mse < cmp.rows[1].mean_mse;
    detail += "seed " + std::to_string(seed) + " hybrid " + num(cmp.rows[0].mean_mse) + " lstm " +
              num(cmp.rows[1].mean_mse) + "; ";
  }
  report(in_range && wins >= 3, "real-data check (best effort)",
         detail + "all MSEs in (0, 0.02) " + (in_range ? "yes" : "no") + ", hybrid wins " + std::to_string(wins) +
             "/5, " + num(seconds_since(t0) / 60.0) + " min");
}

// ---------------------------------------------------------------------------

void end_to_end_runtime() {
  const fs::path root = scratch("runtime");
  RunConfig c;
  c.data_dir = root / "data";
  c.out_dir = root / "out";
  write_outputs(c.data_dir, cmd_synth(c, 554));
  const auto t0 = Clock::now();
  const OutputFiles files = cmd_backtest(c);
  write_outputs(c.out_dir, files);
  const double minutes = seconds_since(t0) / 60.0;
  std::size_t rows = 0;
  for (char ch : files.at("per_day_mse.csv")) rows += ch == '\n';
  report(minutes < 15.0 && rows == 51, "end-to-end runtime",
         "default hybrid backtest, 50 retraining steps, 10 stocks: " + num(minutes) + " min (need < 15)");
}

}  // namespace

int main() {
  std::cout << "hybridcast " << HYBRIDCAST_VERSION << " acceptance, " << workers() << " hardware threads" << std::endl;
  const auto run = [](const char* name, void (*fn)()) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(false, name, std::string("exception: ") + e.what());
    }
  };
  run("gradient correctness", gradient_correctness);
  run("apriori oracle equivalence", apriori_oracle);
  run("pearson oracle equivalence", pearson_oracle);
  run("normalized adjacency spectrum", adjacency_spectrum);
  run("expanding-window protocol", expanding_window_protocol);
  run("scaling round trip and return reconstruction", scaling_and_returns);
  run("early stopping", early_stopping);
  run("determinism", determinism);
  run("end-to-end runtime", end_to_end_runtime);
  run("real-data check (best effort)", real_data);
  run("directional synthetic study", directional_study);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
