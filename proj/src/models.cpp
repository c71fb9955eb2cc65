#include "hybridcast/models.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace hybridcast {

using grad::Mode;
using grad::ParamStore;
using grad::Tape;
using grad::Var;

namespace {

std::string join_name(std::string_view prefix, std::string_view leaf) {
  std::string out(prefix);
  out += '.';
  out += leaf;
  return out;
}

Var param_var(Tape& tape, ParamStore& params, const std::string& name) { return tape.param(params.at(name)); }

}  // namespace

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Hybrid: return "hybrid";
    case ModelKind::Lstm: return "lstm";
    case ModelKind::LinReg: return "linreg";
    case ModelKind::Dense: return "dense";
    case ModelKind::Cnn1d: return "cnn1d";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  for (auto kind : {ModelKind::Hybrid, ModelKind::Lstm, ModelKind::LinReg, ModelKind::Dense, ModelKind::Cnn1d}) {
    if (model_kind_name(kind) == name) return kind;
  }
  throw ConfigError("model", "unknown model kind '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate", "must be positive");
  }
  if (lookback < 1) throw ConfigError("lookback", "must be at least 1");
  if (epochs < 1) throw ConfigError("epochs", "must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (patience < 1) throw ConfigError("patience", "must be at least 1");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta", "must be non-negative");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction", "must lie in [0, 1)");
  }
}

void ModelWidths::validate() const {
  const std::pair<const char*, std::size_t> fields[] = {
      {"lstm_hidden", lstm_hidden},     {"lstm_layers", lstm_layers},   {"gcn_hidden", gcn_hidden},
      {"gcn_out", gcn_out},             {"fusion_hidden", fusion_hidden}, {"dense_hidden", dense_hidden},
      {"cnn_channels", cnn_channels}, {"cnn_kernel", cnn_kernel}};
  for (const auto& [name, value] : fields) {
    if (value < 1) throw ConfigError(name, "must be at least 1");
  }
}

void ModelSpec::validate() const {
  train.validate();
  widths.validate();
  if (kind == ModelKind::Cnn1d && train.lookback < widths.cnn_kernel) {
    throw ConfigError("lookback", "cnn1d needs lookback >= cnn_kernel");
  }
}

// --- layers ---------------------------------------------------------------------

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-bound, bound);
  return m;
}

void add_lstm_params(ParamStore& params, std::string_view prefix, std::size_t input_size, std::size_t hidden,
                     std::size_t layers, Rng& rng) {
  const auto H = static_cast<Eigen::Index>(hidden);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input_size : hidden;
    const std::size_t fan_in = in + hidden;
    const std::string base = join_name(prefix, "l" + std::to_string(l));
    params.add(join_name(base, "w_x"), uniform_init(static_cast<Eigen::Index>(in), 4 * H, fan_in, rng));
    params.add(join_name(base, "w_h"), uniform_init(H, 4 * H, fan_in, rng));
    params.add(join_name(base, "b"), uniform_init(1, 4 * H, fan_in, rng));
  }
}

Var lstm_forward(Tape& tape, ParamStore& params, std::string_view prefix, Var sequence, Eigen::Index steps,
                 std::size_t layers, double dropout, Mode mode, Rng& rng) {
  if (steps <= 0) throw GradError("ShapeMismatch", "LSTM needs at least one time step");
  Var x = sequence;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = join_name(prefix, "l" + std::to_string(l));
    if (l > 0) x = grad::dropout(x, dropout, mode, rng);
    x = grad::lstm_layer(x, param_var(tape, params, join_name(base, "w_x")),
                         param_var(tape, params, join_name(base, "w_h")), param_var(tape, params, join_name(base, "b")),
                         steps);
  }
  const auto rows = x.rows() / steps;
  return grad::slice_rows(x, (steps - 1) * rows, rows);
}

void add_gcn_params(ParamStore& params, std::string_view prefix, std::size_t in, std::size_t hidden,
                    std::size_t out, Rng& rng) {
  add_dense_params(params, join_name(prefix, "1"), in, hidden, rng);
  add_dense_params(params, join_name(prefix, "2"), hidden, out, rng);
}

Var gcn_forward(Tape& tape, ParamStore& params, std::string_view prefix, Var features, const Matrix& a_hat,
                double dropout, Mode mode, Rng& rng) {
  if (a_hat.rows() == 0 || features.rows() % a_hat.rows() != 0) {
    throw GradError("ShapeMismatch", "feature rows " + std::to_string(features.rows()) +
                                         " are not a multiple of the graph size " + std::to_string(a_hat.rows()));
  }
  Var h = grad::relu(dense_layer(tape, params, join_name(prefix, "1"), grad::block_matmul(a_hat, features)));
  h = grad::dropout(h, dropout, mode, rng);
  return grad::relu(dense_layer(tape, params, join_name(prefix, "2"), grad::block_matmul(a_hat, h)));
}

void add_dense_params(ParamStore& params, std::string_view prefix, std::size_t in, std::size_t out, Rng& rng) {
  params.add(join_name(prefix, "w"),
             uniform_init(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out), in, rng));
  params.add(join_name(prefix, "b"), uniform_init(1, static_cast<Eigen::Index>(out), in, rng));
}

Var dense_layer(Tape& tape, ParamStore& params, std::string_view prefix, Var x) {
  return add(matmul(x, param_var(tape, params, join_name(prefix, "w"))),
             param_var(tape, params, join_name(prefix, "b")));
}

Var stock_sequences(Tape& tape, std::span<const Matrix* const> windows) {
  if (windows.empty()) throw GradError("ShapeMismatch", "empty batch");
  const auto L = windows.front()->rows();
  const auto N = windows.front()->cols();
  const auto B = static_cast<Eigen::Index>(windows.size());
  Matrix x(L * B * N, 1);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Matrix& w = *windows[static_cast<std::size_t>(b)];
    if (w.rows() != L || w.cols() != N) throw GradError("ShapeMismatch", "ragged window batch");
    for (Eigen::Index t = 0; t < L; ++t) x.middleRows(t * B * N + b * N, N) = w.row(t).transpose();
  }
  return tape.constant(std::move(x));
}

// --- architectures ---------------------------------------------------------------

namespace {

class HybridNetwork final : public Network {
 public:
  HybridNetwork(const ModelSpec& spec, std::size_t n, Matrix a_hat) : spec_(spec), n_(n), a_hat_(std::move(a_hat)) {
    if (static_cast<std::size_t>(a_hat_.rows()) != n_ || a_hat_.cols() != a_hat_.rows()) {
      throw GradError("ShapeMismatch", "graph has " + std::to_string(a_hat_.rows()) + " nodes for " +
                                           std::to_string(n_) + " stocks");
    }
  }

  ParamStore init_params(Rng& rng) const override {
    const auto& w = spec_.widths;
    ParamStore p;
    add_lstm_params(p, "lstm", 1, w.lstm_hidden, w.lstm_layers, rng);
    add_gcn_params(p, "gcn", w.lstm_hidden, w.gcn_hidden, w.gcn_out, rng);
    add_dense_params(p, "fusion.hidden", w.lstm_hidden + w.gcn_out, w.fusion_hidden, rng);
    add_dense_params(p, "fusion.out", w.fusion_hidden, 1, rng);
    return p;
  }

  Var forward(Tape& tape, ParamStore& params, std::span<const Matrix* const> windows, Mode mode,
              Rng& rng) const override {
    check_width(windows);
    const Var seq = stock_sequences(tape, windows);
    const double rate = spec_.train.dropout;
    const auto L = windows.front()->rows();
    const Var temporal = lstm_forward(tape, params, "lstm", seq, L, spec_.widths.lstm_layers, rate, mode, rng);
    const Var relational = gcn_forward(tape, params, "gcn", temporal, a_hat_, rate, mode, rng);
    Var z = grad::relu(dense_layer(tape, params, "fusion.hidden", concat(temporal, relational)));
    z = dense_layer(tape, params, "fusion.out", z);
    return grad::reshape(z, static_cast<Eigen::Index>(windows.size()), static_cast<Eigen::Index>(n_));
  }

 private:
  void check_width(std::span<const Matrix* const> windows) const {
    if (windows.empty() || static_cast<std::size_t>(windows.front()->cols()) != n_) {
      throw GradError("ShapeMismatch", "window width does not match the graph");
    }
  }

  ModelSpec spec_;
  std::size_t n_;
  Matrix a_hat_;
};

class LstmNetwork final : public Network {
 public:
  LstmNetwork(const ModelSpec& spec, std::size_t n) : spec_(spec), n_(n) {}

  ParamStore init_params(Rng& rng) const override {
    const auto& w = spec_.widths;
    ParamStore p;
    add_lstm_params(p, "lstm", 1, w.lstm_hidden, w.lstm_layers, rng);
    add_dense_params(p, "head.hidden", w.lstm_hidden, w.fusion_hidden, rng);
    add_dense_params(p, "head.out", w.fusion_hidden, 1, rng);
    return p;
  }

  Var forward(Tape& tape, ParamStore& params, std::span<const Matrix* const> windows, Mode mode,
              Rng& rng) const override {
    if (windows.empty() || static_cast<std::size_t>(windows.front()->cols()) != n_) {
      throw GradError("ShapeMismatch", "window width does not match the model");
    }
    const Var seq = stock_sequences(tape, windows);
    const Var h = lstm_forward(tape, params, "lstm", seq, windows.front()->rows(), spec_.widths.lstm_layers,
                               spec_.train.dropout, mode, rng);
    Var z = grad::relu(dense_layer(tape, params, "head.hidden", h));
    z = dense_layer(tape, params, "head.out", z);
    return grad::reshape(z, static_cast<Eigen::Index>(windows.size()), static_cast<Eigen::Index>(n_));
  }

 private:
  ModelSpec spec_;
  std::size_t n_;
};

class DenseNetwork final : public Network {
 public:
  DenseNetwork(const ModelSpec& spec, std::size_t n) : spec_(spec), n_(n) {}

  ParamStore init_params(Rng& rng) const override {
    const auto& w = spec_.widths;
    ParamStore p;
    add_dense_params(p, "dense.h1", spec_.train.lookback * n_, w.dense_hidden, rng);
    add_dense_params(p, "dense.h2", w.dense_hidden, w.dense_hidden, rng);
    add_dense_params(p, "dense.out", w.dense_hidden, n_, rng);
    return p;
  }

  Var forward(Tape& tape, ParamStore& params, std::span<const Matrix* const> windows, Mode,
              Rng&) const override {
    const auto L = static_cast<Eigen::Index>(spec_.train.lookback);
    const auto N = static_cast<Eigen::Index>(n_);
    Matrix x(static_cast<Eigen::Index>(windows.size()), L * N);
    for (std::size_t b = 0; b < windows.size(); ++b) {
      const Matrix& w = *windows[b];
      if (w.rows() != L || w.cols() != N) throw GradError("ShapeMismatch", "window shape does not match the model");
      x.row(static_cast<Eigen::Index>(b)) = Eigen::Map<const Eigen::RowVectorXd>(w.data(), L * N);
    }
    Var z = tape.constant(std::move(x));
    z = grad::relu(dense_layer(tape, params, "dense.h1", z));
    z = grad::relu(dense_layer(tape, params, "dense.h2", z));
    return dense_layer(tape, params, "dense.out", z);
  }

 private:
  ModelSpec spec_;
  std::size_t n_;
};

class CnnNetwork final : public Network {
 public:
  CnnNetwork(const ModelSpec& spec, std::size_t n) : spec_(spec), n_(n) {}

  ParamStore init_params(Rng& rng) const override {
    const auto& w = spec_.widths;
    ParamStore p;
    add_dense_params(p, "cnn.conv", w.cnn_kernel, w.cnn_channels, rng);
    add_dense_params(p, "cnn.out", w.cnn_channels, 1, rng);
    return p;
  }

  Var forward(Tape& tape, ParamStore& params, std::span<const Matrix* const> windows, Mode,
              Rng&) const override {
    if (windows.empty()) throw GradError("ShapeMismatch", "empty batch");
    const auto L = windows.front()->rows();
    const auto N = static_cast<Eigen::Index>(n_);
    const auto K = static_cast<Eigen::Index>(spec_.widths.cnn_kernel);
    if (L < K) throw GradError("ShapeMismatch", "window shorter than the convolution kernel");
    const auto B = static_cast<Eigen::Index>(windows.size());
    Matrix series(B * N, L);
    for (Eigen::Index b = 0; b < B; ++b) {
      const Matrix& w = *windows[static_cast<std::size_t>(b)];
      if (w.rows() != L || w.cols() != N) throw GradError("ShapeMismatch", "window shape does not match the model");
      series.middleRows(b * N, N) = w.transpose();
    }
    const Eigen::Index positions = L - K + 1;
    Var pooled;
    for (Eigen::Index p = 0; p < positions; ++p) {
      const Var patch = tape.constant(series.middleCols(p, K));
      const Var act = grad::relu(dense_layer(tape, params, "cnn.conv", patch));
      pooled = p == 0 ? act : add(pooled, act);
    }
    pooled = grad::scale(pooled, 1.0 / static_cast<double>(positions));
    const Var out = dense_layer(tape, params, "cnn.out", pooled);
    return grad::reshape(out, B, N);
  }

 private:
  ModelSpec spec_;
  std::size_t n_;
};

}  // namespace

std::unique_ptr<Network> make_network(const ModelSpec& spec, std::size_t num_tickers, const Matrix* a_hat) {
  switch (spec.kind) {
    case ModelKind::Hybrid:
      if (a_hat == nullptr) throw ModelError("MissingGraph", "the hybrid model needs a normalized adjacency");
      return std::make_unique<HybridNetwork>(spec, num_tickers, *a_hat);
    case ModelKind::Lstm: return std::make_unique<LstmNetwork>(spec, num_tickers);
    case ModelKind::Dense: return std::make_unique<DenseNetwork>(spec, num_tickers);
    case ModelKind::Cnn1d: return std::make_unique<CnnNetwork>(spec, num_tickers);
    case ModelKind::LinReg: break;
  }
  throw ModelError("NotANetwork", "linreg is fitted in closed form");
}

// --- linear regression --------------------------------------------------------------

Vector least_squares(const Matrix& design, const Vector& target) {
  const Matrix gram = design.transpose() * design;
  const Vector rhs = design.transpose() * target;
  Eigen::LDLT<Matrix> ldlt(gram);
  const bool healthy = ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-13;
  if (healthy) {
    Vector beta = ldlt.solve(rhs);
    if (beta.allFinite()) return beta;
  }
  const Matrix ridged = gram + 1e-8 * Matrix::Identity(gram.rows(), gram.cols());
  Eigen::LDLT<Matrix> fallback(ridged);
  if (fallback.info() != Eigen::Success || !fallback.isPositive()) {
    throw ModelError("SingularSystem", "normal equations are singular even with ridge");
  }
  Vector beta = fallback.solve(rhs);
  if (!beta.allFinite()) throw ModelError("SingularSystem", "ridge solution is not finite");
  return beta;
}

Matrix linreg_fit(const WindowDataset& data) {
  const auto L = static_cast<Eigen::Index>(data.lookback);
  const auto n = static_cast<Eigen::Index>(data.size());
  if (n <= L + 1) {
    throw ModelError("TooFewSamples", std::to_string(n) + " samples cannot fit " + std::to_string(L + 1) +
                                          " coefficients");
  }
  const auto N = static_cast<Eigen::Index>(data.num_tickers);
  Matrix coef(N, L + 1);
  Matrix design(n, L + 1);
  Vector target(n);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index s = 0; s < n; ++s) {
      const auto& sample = data.samples[static_cast<std::size_t>(s)];
      design(s, 0) = 1.0;
      design.row(s).tail(L) = sample.input.col(i).transpose();
      target(s) = sample.target(i);
    }
    coef.row(i) = least_squares(design, target).transpose();
  }
  return coef;
}

Vector linreg_predict(const Matrix& coefficients, const Matrix& window) {
  const auto N = coefficients.rows();
  const auto L = coefficients.cols() - 1;
  if (window.cols() != N || window.rows() != L) {
    throw GradError("ShapeMismatch", "window does not match the regression coefficients");
  }
  Vector out(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    out(i) = coefficients(i, 0) + coefficients.row(i).tail(L).dot(window.col(i).transpose());
  }
  return out;
}

// --- training --------------------------------------------------------------------------

bool EarlyStopping::observe(double loss) {
  ++epoch_;
  if (best_epoch_ == 0 || loss < best_ - min_delta_) {
    best_ = loss;
    best_epoch_ = epoch_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

namespace {

constexpr std::size_t kEvalChunk = 256;

Matrix targets_of(const WindowDataset& data, std::span<const std::size_t> idx) {
  Matrix y(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(data.num_tickers));
  for (std::size_t k = 0; k < idx.size(); ++k) y.row(static_cast<Eigen::Index>(k)) = data.samples[idx[k]].target.transpose();
  return y;
}

std::vector<const Matrix*> windows_of(const WindowDataset& data, std::span<const std::size_t> idx) {
  std::vector<const Matrix*> w;
  w.reserve(idx.size());
  for (auto k : idx) w.push_back(&data.samples[k].input);
  return w;
}

double evaluate(const Network& net, ParamStore& params, const WindowDataset& data, std::span<const std::size_t> idx,
                Rng& rng) {
  double sum = 0.0;
  for (std::size_t first = 0; first < idx.size(); first += kEvalChunk) {
    const auto chunk = idx.subspan(first, std::min(kEvalChunk, idx.size() - first));
    Tape tape;
    const auto windows = windows_of(data, chunk);
    const Var pred = net.forward(tape, params, windows, Mode::Eval, rng);
    sum += (pred.value() - targets_of(data, chunk)).squaredNorm();
  }
  return sum / static_cast<double>(idx.size() * data.num_tickers);
}

}  // namespace

TrainedModel train(const ModelSpec& spec, const WindowDataset& data, const Matrix* a_hat, const TrainHooks& hooks,
                   const ParamStore* warm_start) {
  spec.validate();
  if (data.empty()) throw ModelError("EmptyDataset", "no training windows");
  if (data.lookback != spec.train.lookback) {
    throw ModelError("LookbackMismatch", "dataset lookback " + std::to_string(data.lookback) +
                                             " differs from the spec's " + std::to_string(spec.train.lookback));
  }

  TrainedModel model;
  model.spec = spec;
  model.num_tickers = data.num_tickers;

  if (spec.kind == ModelKind::LinReg) {
    model.params.add("linreg.coef", linreg_fit(data));
    double sse = 0.0;
    for (const auto& s : data.samples) {
      sse += (linreg_predict(model.params.at("linreg.coef").value, s.input) - s.target).squaredNorm();
    }
    const double mse = sse / static_cast<double>(data.size() * data.num_tickers);
    model.history.push_back({mse, mse});
    model.best_epoch = 1;
    return model;
  }

  if (spec.uses_graph()) {
    if (a_hat == nullptr) throw ModelError("MissingGraph", "the hybrid model needs a normalized adjacency");
    model.a_hat = *a_hat;
  }
  const auto net = make_network(spec, data.num_tickers, spec.uses_graph() ? &model.a_hat : nullptr);
  Rng rng(spec.train.seed);
  model.params = net->init_params(rng);
  if (warm_start != nullptr) model.params.assign_values(*warm_start);

  const std::size_t n = data.size();
  std::size_t n_val = 0;
  if (spec.train.validation_fraction > 0.0 && n >= 2) {
    n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(spec.train.validation_fraction * static_cast<double>(n))), 1, n - 1);
  }
  const std::size_t n_train = n - n_val;
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> val_idx(n_val);
  std::iota(val_idx.begin(), val_idx.end(), n_train);
  const std::size_t batch = spec.train.batch_size == 0 ? n_train : std::min(spec.train.batch_size, n_train);

  auto adam = grad::make_adam_state(model.params, {spec.train.learning_rate, 0.9, 0.999, 1e-8});
  EarlyStopping stopper(spec.train.patience, spec.train.min_delta);
  std::vector<Matrix> best;

  try {
    for (std::size_t epoch = 1; epoch <= spec.train.epochs; ++epoch) {
      for (std::size_t k = n_train; k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
      double train_sum = 0.0;
      for (std::size_t first = 0; first < n_train; first += batch) {
        const auto idx = std::span<const std::size_t>(order).subspan(first, std::min(batch, n_train - first));
        Tape tape;
        const auto windows = windows_of(data, idx);
        const Var pred = net->forward(tape, model.params, windows, Mode::Train, rng);
        const Var loss = grad::mse_loss(pred, tape.constant(targets_of(data, idx)));
        tape.backward(loss);
        grad::adam_step(model.params, adam);
        model.params.zero_grad();
        train_sum += loss.value()(0, 0) * static_cast<double>(idx.size());
      }
      const double train_loss = train_sum / static_cast<double>(n_train);
      double val_loss = n_val > 0 ? evaluate(*net, model.params, data, val_idx, rng) : train_loss;
      if (hooks.validation_override) val_loss = hooks.validation_override(epoch, val_loss);
      if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
        throw ModelError("DivergedLoss", "loss became non-finite at epoch " + std::to_string(epoch));
      }
      model.history.push_back({train_loss, val_loss});
      if (stopper.observe(val_loss)) {
        best.clear();
        for (const auto& p : model.params.all()) best.push_back(p.value);
      }
      if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model.params);
      if (stopper.should_stop()) {
        model.stopped_early = true;
        break;
      }
    }
  } catch (const GradError& e) {
    if (e.code() == "NonFinite") throw ModelError("DivergedLoss", e.what());
    throw;
  }

  for (std::size_t k = 0; k < best.size(); ++k) model.params.all()[k].value = best[k];
  model.best_epoch = stopper.best_epoch();
  return model;
}

Vector TrainedModel::predict(const Matrix& window) const {
  const Matrix* w = &window;
  return predict_batch(std::span<const Matrix* const>(&w, 1)).row(0).transpose();
}

Matrix TrainedModel::predict_batch(std::span<const Matrix* const> windows) const {
  const auto N = static_cast<Eigen::Index>(num_tickers);
  Matrix out(static_cast<Eigen::Index>(windows.size()), N);
  if (spec.kind == ModelKind::LinReg) {
    const Matrix& coef = params.at("linreg.coef").value;
    for (std::size_t b = 0; b < windows.size(); ++b) {
      out.row(static_cast<Eigen::Index>(b)) = linreg_predict(coef, *windows[b]).transpose();
    }
    return out;
  }
  const auto net = make_network(spec, num_tickers, spec.uses_graph() ? &a_hat : nullptr);
  ParamStore local = params;
  Rng rng(0);
  for (std::size_t first = 0; first < windows.size(); first += kEvalChunk) {
    const auto chunk = windows.subspan(first, std::min(kEvalChunk, windows.size() - first));
    Tape tape;
    out.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(chunk.size())) =
        net->forward(tape, local, chunk, Mode::Eval, rng).value();
  }
  return out;
}

// --- persistence --------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "hybridcast-model";
constexpr int kFormatVersion = 1;

void write_matrix(std::ostream& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ' ';
      out << format_number(m(r, c));
    }
    out << '\n';
  }
}

Matrix read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    std::string token;
    if (!(in >> token)) throw ModelError("CorruptModel", "truncated array");
    try {
      std::size_t used = 0;
      m.data()[k] = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ModelError("CorruptModel", "bad number '" + token + "'");
    }
  }
  return m;
}

template <typename T>
T expect_field(std::istream& in, std::string_view key) {
  std::string name;
  T value{};
  if (!(in >> name) || name != key || !(in >> value)) {
    throw ModelError("CorruptModel", "expected field '" + std::string(key) + "'");
  }
  return value;
}

double expect_number(std::istream& in, std::string_view key) {
  const auto text = expect_field<std::string>(in, key);
  try {
    return std::stod(text);
  } catch (const std::exception&) {
    throw ModelError("CorruptModel", "field '" + std::string(key) + "' is not a number");
  }
}

}  // namespace

void save_model(const TrainedModel& model, std::ostream& out) {
  const auto& w = model.spec.widths;
  const auto& t = model.spec.train;
  out << kMagic << ' ' << kFormatVersion << '\n';
  out << "kind " << model_kind_name(model.spec.kind) << '\n';
  out << "num_tickers " << model.num_tickers << '\n';
  out << "lstm_hidden " << w.lstm_hidden << "\nlstm_layers " << w.lstm_layers << "\ngcn_hidden " << w.gcn_hidden
      << "\ngcn_out " << w.gcn_out << "\nfusion_hidden " << w.fusion_hidden << "\ndense_hidden " << w.dense_hidden
      << "\ncnn_channels " << w.cnn_channels << "\ncnn_kernel " << w.cnn_kernel << '\n';
  out << "learning_rate " << format_number(t.learning_rate) << "\nlookback " << t.lookback << "\nepochs "
      << t.epochs << "\nbatch_size " << t.batch_size << "\ndropout " << format_number(t.dropout) << "\npatience "
      << t.patience << "\nmin_delta " << format_number(t.min_delta) << "\nvalidation_fraction "
      << format_number(t.validation_fraction) << "\nseed " << t.seed << '\n';
  out << "best_epoch " << model.best_epoch << "\nstopped_early " << (model.stopped_early ? 1 : 0) << '\n';
  out << "history " << model.history.size() << '\n';
  for (const auto& h : model.history) out << format_number(h.train_loss) << ' ' << format_number(h.validation_loss) << '\n';
  out << "a_hat " << model.a_hat.rows() << ' ' << model.a_hat.cols() << '\n';
  write_matrix(out, model.a_hat);
  out << "params " << model.params.size() << '\n';
  for (const auto& p : model.params.all()) {
    out << "param " << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << '\n';
    write_matrix(out, p.value);
  }
  out << "end\n";
}

TrainedModel load_model(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic) throw ModelError("CorruptModel", "not a hybridcast model");
  if (version != kFormatVersion) {
    throw ModelError("UnsupportedVersion", "model format version " + std::to_string(version));
  }
  TrainedModel m;
  try {
    m.spec.kind = parse_model_kind(expect_field<std::string>(in, "kind"));
  } catch (const ConfigError& e) {
    throw ModelError("CorruptModel", e.what());
  }
  m.num_tickers = expect_field<std::size_t>(in, "num_tickers");
  auto& w = m.spec.widths;
  w.lstm_hidden = expect_field<std::size_t>(in, "lstm_hidden");
  w.lstm_layers = expect_field<std::size_t>(in, "lstm_layers");
  w.gcn_hidden = expect_field<std::size_t>(in, "gcn_hidden");
  w.gcn_out = expect_field<std::size_t>(in, "gcn_out");
  w.fusion_hidden = expect_field<std::size_t>(in, "fusion_hidden");
  w.dense_hidden = expect_field<std::size_t>(in, "dense_hidden");
  w.cnn_channels = expect_field<std::size_t>(in, "cnn_channels");
  w.cnn_kernel = expect_field<std::size_t>(in, "cnn_kernel");
  auto& t = m.spec.train;
  t.learning_rate = expect_number(in, "learning_rate");
  t.lookback = expect_field<std::size_t>(in, "lookback");
  t.epochs = expect_field<std::size_t>(in, "epochs");
  t.batch_size = expect_field<std::size_t>(in, "batch_size");
  t.dropout = expect_number(in, "dropout");
  t.patience = expect_field<std::size_t>(in, "patience");
  t.min_delta = expect_number(in, "min_delta");
  t.validation_fraction = expect_number(in, "validation_fraction");
  t.seed = expect_field<std::uint64_t>(in, "seed");
  m.best_epoch = expect_field<std::size_t>(in, "best_epoch");
  m.stopped_early = expect_field<int>(in, "stopped_early") != 0;
  const auto epochs = expect_field<std::size_t>(in, "history");
  const Matrix hist = read_matrix(in, static_cast<Eigen::Index>(epochs), 2);
  for (Eigen::Index r = 0; r < hist.rows(); ++r) m.history.push_back({hist(r, 0), hist(r, 1)});
  const auto rows = expect_field<Eigen::Index>(in, "a_hat");
  Eigen::Index cols = 0;
  if (!(in >> cols)) throw ModelError("CorruptModel", "a_hat shape");
  m.a_hat = read_matrix(in, rows, cols);
  const auto count = expect_field<std::size_t>(in, "params");
  for (std::size_t k = 0; k < count; ++k) {
    const auto name = expect_field<std::string>(in, "param");
    Eigen::Index r = 0, c = 0;
    if (!(in >> r >> c) || r < 0 || c < 0) throw ModelError("CorruptModel", "shape of " + name);
    m.params.add(name, read_matrix(in, r, c));
  }
  std::string tail;
  if (!(in >> tail) || tail != "end") throw ModelError("CorruptModel", "missing end marker");
  m.spec.validate();
  return m;
}

}  // namespace hybridcast
