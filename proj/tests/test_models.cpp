#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "hybridcast/models.hpp"
#include "hybridcast/relation_graph.hpp"
#include "support.hpp"

using namespace hybridcast;
using grad::Mode;
using grad::ParamStore;
using grad::Tape;
using grad::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

ModelSpec small_spec(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  s.widths = {4, 2, 5, 3, 6, 6, 4, 3};
  s.train.lookback = 4;
  s.train.epochs = 10;
  s.train.batch_size = 8;
  return s;
}

Matrix ring_adjacency(std::size_t n) {
  StockGraph g;
  g.tickers = hctest::tickers(n);
  for (std::size_t i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1, 0.5 + 0.1 * static_cast<double>(i), kCorrelation});
  return normalized_adjacency(g);
}

std::vector<Matrix> random_windows(std::size_t count, Eigen::Index L, Eigen::Index N, Rng& rng) {
  std::vector<Matrix> w;
  for (std::size_t k = 0; k < count; ++k) w.push_back(random_matrix(L, N, rng).cwiseAbs());
  return w;
}

std::vector<const Matrix*> pointers(const std::vector<Matrix>& w) {
  std::vector<const Matrix*> p;
  for (const auto& m : w) p.push_back(&m);
  return p;
}

Matrix predict(const Network& net, ParamStore& params, const std::vector<Matrix>& windows) {
  Tape t;
  Rng rng(0);
  const auto ptr = pointers(windows);
  return net.forward(t, params, ptr, Mode::Eval, rng).value();
}

WindowDataset toy_dataset(std::size_t days, std::size_t n, std::size_t lookback, std::uint64_t seed) {
  auto p = hctest::random_panel(days, n, seed);
  const Scaler s = fit_scaler(p, {p.dates.front(), p.dates.back()});
  return make_windows(s.scale(p), p.dates, lookback);
}

}  // namespace

TEST_CASE("model kinds parse") {
  CHECK(parse_model_kind("hybrid") == ModelKind::Hybrid);
  CHECK(parse_model_kind("cnn1d") == ModelKind::Cnn1d);
  CHECK(model_kind_name(ModelKind::LinReg) == "linreg");
  CHECK_THROWS_AS(parse_model_kind("transformer"), ConfigError);
}

TEST_CASE("train config validation names the field") {
  TrainConfig c;
  c.learning_rate = 0.0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "learning_rate");
  }
  TrainConfig d;
  d.dropout = 1.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  TrainConfig p;
  p.patience = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("lstm zero weights give zero state") {
  Rng rng(1);
  ParamStore p;
  add_lstm_params(p, "lstm", 2, 4, 2, rng);
  for (auto& q : p.all()) q.value.setZero();
  Tape t;
  const Var x = t.constant(random_matrix(3 * 5, 2, rng));
  const Var h = lstm_forward(t, p, "lstm", x, 3, 2, 0.5, Mode::Eval, rng);
  CHECK(h.rows() == 5);
  CHECK(h.value() == Matrix::Zero(5, 4));
}

TEST_CASE("lstm gradient check, one layer, L=3, d=2, H=4") {
  Rng rng(2);
  ParamStore p;
  add_lstm_params(p, "lstm", 2, 4, 1, rng);
  const Matrix x = random_matrix(3 * 2, 2, rng);
  const Matrix target = random_matrix(2, 4, rng, 0.5);
  const auto build = [&](Tape& t, ParamStore& ps) {
    Rng local(0);
    const Var h = lstm_forward(t, ps, "lstm", t.constant(x), 3, 1, 0.0, Mode::Train, local);
    return grad::mse_loss(h, t.constant(target));
  };
  CHECK(grad::gradient_check(build, p) < 1e-4);
}

TEST_CASE("gcn isolation, symmetry and gradients") {
  Rng rng(3);
  ParamStore p;
  add_gcn_params(p, "gcn", 3, 5, 2, rng);
  const Matrix eye = Matrix::Identity(4, 4);
  Matrix x = random_matrix(4, 3, rng);
  const auto run = [&](const Matrix& a, const Matrix& feats) {
    Tape t;
    Rng r(0);
    return gcn_forward(t, p, "gcn", t.constant(feats), a, 0.5, Mode::Eval, r).value();
  };
  const Matrix base = run(eye, x);
  Matrix moved = x;
  moved.row(2) *= 3.0;
  const Matrix after = run(eye, moved);
  CHECK(after.row(0) == base.row(0));
  CHECK(after.row(1) == base.row(1));

  Matrix two(2, 2);
  two << 0.5, 0.5, 0.5, 0.5;
  Matrix same(2, 3);
  same.row(0) = x.row(0);
  same.row(1) = x.row(0);
  const Matrix emb = run(two, same);
  CHECK(emb.row(0) == emb.row(1));

  const Matrix a = ring_adjacency(4);
  const Matrix target = random_matrix(4, 2, rng);
  const auto build = [&](Tape& t, ParamStore& ps) {
    Rng r(5);
    return grad::mse_loss(gcn_forward(t, ps, "gcn", t.constant(x), a, 0.5, Mode::Train, r), t.constant(target));
  };
  CHECK(grad::gradient_check(build, p) < 1e-4);
}

TEST_CASE("every network passes the gradient check") {
  const std::size_t N = 4;
  const Matrix a = ring_adjacency(N);
  for (auto kind : {ModelKind::Hybrid, ModelKind::Lstm, ModelKind::Dense, ModelKind::Cnn1d}) {
    CAPTURE(model_kind_name(kind));
    const ModelSpec spec = small_spec(kind);
    const auto net = make_network(spec, N, &a);
    Rng rng(7);
    ParamStore p = net->init_params(rng);
    const auto windows = random_windows(3, 4, N, rng);
    const Matrix target = random_matrix(3, N, rng).cwiseAbs();
    const auto build = [&](Tape& t, ParamStore& ps) {
      Rng r(11);
      const auto ptr = pointers(windows);
      return grad::mse_loss(net->forward(t, ps, ptr, Mode::Train, r), t.constant(target));
    };
    CHECK(grad::gradient_check(build, p) < 1e-4);
  }
}

TEST_CASE("hybrid shape, isolation and determinism") {
  const std::size_t N = 10;
  ModelSpec spec = small_spec(ModelKind::Hybrid);
  const Matrix eye = Matrix::Identity(N, N);
  const auto net = make_network(spec, N, &eye);
  Rng rng(3);
  ParamStore p = net->init_params(rng);
  auto windows = random_windows(1, 4, N, rng);
  const Matrix base = predict(*net, p, windows);
  CHECK(base.cols() == static_cast<Eigen::Index>(N));
  CHECK(base == predict(*net, p, windows));
  windows[0].col(4) *= 2.0;
  const Matrix after = predict(*net, p, windows);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(N); ++i) {
    if (i != 4) CHECK(after(0, i) == base(0, i));
  }
  CHECK(after(0, 4) != base(0, 4));
  CHECK_THROWS_AS(make_network(spec, N, nullptr), ModelError);
}

TEST_CASE("hybrid is permutation equivariant") {
  const std::size_t N = 5;
  ModelSpec spec = small_spec(ModelKind::Hybrid);
  const Matrix a = ring_adjacency(N);
  const std::vector<Eigen::Index> perm{3, 0, 4, 1, 2};
  Matrix pa(N, N);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) pa(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(perm[i], perm[j]);
  }
  const auto net = make_network(spec, N, &a);
  const auto pnet = make_network(spec, N, &pa);
  Rng rng(4);
  ParamStore p = net->init_params(rng);
  const auto windows = random_windows(2, 4, N, rng);
  std::vector<Matrix> pw;
  for (const auto& w : windows) {
    Matrix m(w.rows(), w.cols());
    for (std::size_t i = 0; i < N; ++i) m.col(static_cast<Eigen::Index>(i)) = w.col(perm[i]);
    pw.push_back(m);
  }
  const Matrix out = predict(*net, p, windows);
  const Matrix pout = predict(*pnet, p, pw);
  for (std::size_t i = 0; i < N; ++i) {
    CHECK((pout.col(static_cast<Eigen::Index>(i)) - out.col(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("zero-weight baselines return their bias") {
  const std::size_t N = 3;
  for (auto kind : {ModelKind::Dense, ModelKind::Cnn1d}) {
    const ModelSpec spec = small_spec(kind);
    const auto net = make_network(spec, N, nullptr);
    Rng rng(5);
    ParamStore p = net->init_params(rng);
    for (auto& q : p.all()) q.value.setZero();
    const std::string out_bias = kind == ModelKind::Dense ? "dense.out.b" : "cnn.out.b";
    p.at(out_bias).value.setConstant(0.25);
    const auto windows = random_windows(2, 4, N, rng);
    CHECK(predict(*net, p, windows) == Matrix::Constant(2, N, 0.25));
  }
}

TEST_CASE("cnn output width does not depend on the lookback") {
  for (Eigen::Index L : {3, 7, 21}) {
    ModelSpec spec = small_spec(ModelKind::Cnn1d);
    spec.train.lookback = static_cast<std::size_t>(L);
    const auto net = make_network(spec, 6, nullptr);
    Rng rng(6);
    ParamStore p = net->init_params(rng);
    CHECK(predict(*net, p, random_windows(1, L, 6, rng)).cols() == 6);
  }
}

TEST_CASE("least squares recovers an exact line and a constant") {
  Matrix design(5, 2);
  Vector y(5);
  for (int k = 0; k < 5; ++k) {
    design(k, 0) = 1.0;
    design(k, 1) = k * 0.7 - 1.0;
    y(k) = 2.0 * design(k, 1) + 1.0;
  }
  const Vector beta = least_squares(design, y);
  CHECK(std::abs(beta(0) - 1.0) < 1e-9);
  CHECK(std::abs(beta(1) - 2.0) < 1e-9);

  const Vector flat = least_squares(design, Vector::Constant(5, 0.3));
  CHECK(std::abs(flat(0) - 0.3) < 1e-9);
  CHECK(std::abs(flat(1)) < 1e-9);

  Matrix dup(4, 2);
  dup << 1, 1, 2, 2, 3, 3, 4, 4;
  const Vector r = least_squares(dup, Vector::LinSpaced(4, 1, 4));
  CHECK(std::abs(r(0) + r(1) - 1.0) < 1e-6);
}

TEST_CASE("least squares matches a gradient-descent oracle") {
  Rng rng(12);
  const Matrix design = random_matrix(40, 4, rng);
  const Vector y = Vector::NullaryExpr(40, [&](Eigen::Index) { return rng.uniform(-1, 1); });
  const Vector beta = least_squares(design, y);
  const Matrix gram = design.transpose() * design / 40.0;
  const Vector rhs = design.transpose() * y / 40.0;
  const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Matrix>(gram).eigenvalues().maxCoeff();
  Vector w = Vector::Zero(4);
  for (int k = 0; k < 5000; ++k) w -= step * (gram * w - rhs);
  CHECK((w - beta).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("linreg fit and predict on lagged data") {
  const WindowDataset d = toy_dataset(60, 3, 4, 13);
  const Matrix coef = linreg_fit(d);
  CHECK(coef.rows() == 3);
  CHECK(coef.cols() == 5);
  const Vector pred = linreg_predict(coef, d.samples[0].input);
  Vector manual(3);
  for (Eigen::Index i = 0; i < 3; ++i) manual(i) = coef(i, 0) + coef.row(i).tail(4).dot(d.samples[0].input.col(i).transpose());
  CHECK((pred - manual).cwiseAbs().maxCoeff() < 1e-15);
  WindowDataset tiny = d;
  tiny.samples.resize(5);
  CHECK_THROWS_AS(linreg_fit(tiny), ModelError);
}

TEST_CASE("early stopping rule") {
  EarlyStopping s(5, 1e-6);
  const std::vector<double> seq{1.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1};
  std::size_t stopped = 0;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    s.observe(seq[k]);
    if (s.should_stop()) {
      stopped = k + 1;
      break;
    }
  }
  CHECK(stopped == 7);
  CHECK(s.best_epoch() == 2);
  EarlyStopping tiny(2, 0.1);
  tiny.observe(1.0);
  CHECK_FALSE(tiny.observe(0.95));
}

TEST_CASE("training halts after patience and returns best-epoch parameters") {
  const WindowDataset d = toy_dataset(80, 3, 4, 14);
  ModelSpec spec = small_spec(ModelKind::Lstm);
  spec.train.epochs = 40;
  std::vector<ParamStore> snapshots;
  TrainHooks hooks;
  hooks.validation_override = [](std::size_t epoch, double) { return epoch <= 2 ? 1.0 / static_cast<double>(epoch) : static_cast<double>(epoch); };
  hooks.on_epoch_end = [&](std::size_t, const ParamStore& p) { snapshots.push_back(p); };
  const TrainedModel m = train(spec, d, nullptr, hooks);
  CHECK(m.history.size() == 7);
  CHECK(m.best_epoch == 2);
  CHECK(m.stopped_early);
  for (std::size_t k = 0; k < m.params.size(); ++k) CHECK(m.params.all()[k].value == snapshots[1].all()[k].value);

  TrainHooks improving;
  improving.validation_override = [](std::size_t epoch, double) { return 1.0 / static_cast<double>(epoch); };
  const TrainedModel full = train(spec, d, nullptr, improving);
  CHECK(full.history.size() == 40);
  CHECK_FALSE(full.stopped_early);
}

TEST_CASE("training is deterministic and linreg is closed form") {
  const WindowDataset d = toy_dataset(70, 3, 4, 15);
  const Matrix a = ring_adjacency(3);
  ModelSpec spec = small_spec(ModelKind::Hybrid);
  const TrainedModel m1 = train(spec, d, &a);
  const TrainedModel m2 = train(spec, d, &a);
  REQUIRE(m1.history.size() == m2.history.size());
  for (std::size_t k = 0; k < m1.history.size(); ++k) {
    CHECK(m1.history[k].train_loss == m2.history[k].train_loss);
    CHECK(m1.history[k].validation_loss == m2.history[k].validation_loss);
  }
  for (std::size_t k = 0; k < m1.params.size(); ++k) CHECK(m1.params.all()[k].value == m2.params.all()[k].value);
  for (const auto& h : m1.history) CHECK(m1.history[m1.best_epoch - 1].validation_loss <= h.validation_loss);

  const TrainedModel lr = train(small_spec(ModelKind::LinReg), d, nullptr);
  CHECK(lr.history.size() == 1);
  CHECK_THROWS_AS(train(spec, d, nullptr), ModelError);
  CHECK_THROWS_AS(train(spec, WindowDataset{4, 3, {}}, &a), ModelError);
}

TEST_CASE("model save and load round trip") {
  const WindowDataset d = toy_dataset(70, 3, 4, 16);
  const Matrix a = ring_adjacency(3);
  const TrainedModel m = train(small_spec(ModelKind::Hybrid), d, &a);
  std::stringstream buffer;
  save_model(m, buffer);
  const TrainedModel back = load_model(buffer);
  CHECK(back.spec.kind == ModelKind::Hybrid);
  CHECK(back.best_epoch == m.best_epoch);
  CHECK(back.a_hat == m.a_hat);
  CHECK(back.predict(d.samples[3].input) == m.predict(d.samples[3].input));

  std::stringstream bad("hybridcast-model 99\n");
  CHECK_THROWS_AS(load_model(bad), ModelError);
  std::stringstream garbage("not a model\n");
  CHECK_THROWS_AS(load_model(garbage), ModelError);
}
