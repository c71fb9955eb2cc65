#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hybridcast/common.hpp"
#include "hybridcast/grad_core.hpp"
#include "hybridcast/market_data.hpp"
#include "hybridcast/random.hpp"

namespace hybridcast {

enum class ModelKind { Hybrid, Lstm, LinReg, Dense, Cnn1d };

std::string_view model_kind_name(ModelKind kind);
/// Accepts hybrid, lstm, linreg, dense, cnn1d.
ModelKind parse_model_kind(std::string_view name);

struct TrainConfig {
  double learning_rate = 0.005;
  std::size_t lookback = 11;
  std::size_t epochs = 40;
  /// Samples per Adam step; 0 means the whole training split.
  std::size_t batch_size = 11;
  double dropout = 0.5;
  std::size_t patience = 5;
  double min_delta = 1e-6;
  double validation_fraction = 0.1;
  std::uint64_t seed = 42;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct ModelWidths {
  std::size_t lstm_hidden = 32;
  std::size_t lstm_layers = 2;
  std::size_t gcn_hidden = 32;
  std::size_t gcn_out = 16;
  std::size_t fusion_hidden = 32;
  std::size_t dense_hidden = 32;
  std::size_t cnn_channels = 16;
  std::size_t cnn_kernel = 3;

  void validate() const;
};

struct ModelSpec {
  ModelKind kind = ModelKind::Hybrid;
  ModelWidths widths;
  TrainConfig train;

  void validate() const;
  bool uses_graph() const { return kind == ModelKind::Hybrid; }
};

// ---------------------------------------------------------------------------
// Layers. Parameters live in a caller-owned ParamStore under fixed names so a
// trained store can be saved and reloaded.

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, std::size_t fan_in, Rng& rng);

/// Per layer l: `<prefix>.l<l>.w_x` (in x 4H), `.w_h` (H x 4H), `.b` (1 x 4H).
/// Gate column blocks are ordered forget, input, output, candidate.
void add_lstm_params(grad::ParamStore& params, std::string_view prefix, std::size_t input_size,
                     std::size_t hidden, std::size_t layers, Rng& rng);

/// Stacked LSTM over a time-major sequence of `steps` blocks of R rows each
/// (oldest first). Returns the last layer's final hidden state, R x H.
/// Dropout sits between layers.
grad::Var lstm_forward(grad::Tape& tape, grad::ParamStore& params, std::string_view prefix, grad::Var sequence,
                       Eigen::Index steps, std::size_t layers, double dropout, grad::Mode mode, Rng& rng);

/// `<prefix>.w1` (F0 x F1), `.b1`, `.w2` (F1 x F2), `.b2`.
void add_gcn_params(grad::ParamStore& params, std::string_view prefix, std::size_t in, std::size_t hidden,
                    std::size_t out, Rng& rng);

/// Two graph-convolution layers, ReLU(A X W + b) each, over features stacked as
/// blocks of a_hat.rows() nodes.
grad::Var gcn_forward(grad::Tape& tape, grad::ParamStore& params, std::string_view prefix, grad::Var features,
                      const Matrix& a_hat, double dropout, grad::Mode mode, Rng& rng);

/// `<prefix>.w` (in x out) and `<prefix>.b` (1 x out).
void add_dense_params(grad::ParamStore& params, std::string_view prefix, std::size_t in, std::size_t out,
                      Rng& rng);
grad::Var dense_layer(grad::Tape& tape, grad::ParamStore& params, std::string_view prefix, grad::Var x);

// ---------------------------------------------------------------------------
// Architectures. Each maps a batch of B windows (L x N each) to a B x N tensor
// of next-day scaled closes.

class Network {
 public:
  virtual ~Network() = default;
  virtual grad::ParamStore init_params(Rng& rng) const = 0;
  virtual grad::Var forward(grad::Tape& tape, grad::ParamStore& params, std::span<const Matrix* const> windows,
                            grad::Mode mode, Rng& rng) const = 0;
};

/// Network for a gradient-trained kind. Hybrid requires `a_hat`.
std::unique_ptr<Network> make_network(const ModelSpec& spec, std::size_t num_tickers, const Matrix* a_hat);

/// Time-major input for shared per-stock recurrences, (L*B*N) x 1: row
/// t*B*N + b*N + i holds windows[b](t, i).
grad::Var stock_sequences(grad::Tape& tape, std::span<const Matrix* const> windows);

// ---------------------------------------------------------------------------
// Linear regression baseline

/// Per-stock OLS of the next scaled close on the stock's own L lags plus an
/// intercept. Row i of the result is (intercept, lag coefficients oldest first).
Matrix linreg_fit(const WindowDataset& data);
Vector linreg_predict(const Matrix& coefficients, const Matrix& window);

/// Normal-equation least squares with a 1e-8 ridge fallback. Throws
/// ModelError("SingularSystem").
Vector least_squares(const Matrix& design, const Vector& target);

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

/// Patience rule: an epoch improves when its loss is below best - min_delta.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Feeds one epoch's validation loss; returns true when it is the new best.
  bool observe(double loss);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any epoch
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = 0.0;
  std::size_t best_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::size_t stale_ = 0;
};

struct TrainHooks {
  /// Replaces the measured validation loss of an epoch (1-based).
  std::function<double(std::size_t epoch, double measured)> validation_override;
  std::function<void(std::size_t epoch, const grad::ParamStore& params)> on_epoch_end;
};

struct TrainedModel {
  ModelSpec spec;
  std::size_t num_tickers = 0;
  Matrix a_hat;  // empty unless the model uses a graph
  grad::ParamStore params;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  /// N next-day scaled closes for one L x N window.
  Vector predict(const Matrix& window) const;
  Matrix predict_batch(std::span<const Matrix* const> windows) const;
};

/// Chronological tail of `data` is held out for early stopping; the rest is
/// trained with Adam. Returns the best-validation parameters.
/// Throws ModelError("EmptyDataset") or ModelError("DivergedLoss").
TrainedModel train(const ModelSpec& spec, const WindowDataset& data, const Matrix* a_hat,
                   const TrainHooks& hooks = {}, const grad::ParamStore* warm_start = nullptr);

// ---------------------------------------------------------------------------
// Persistence (text format documented in README)

void save_model(const TrainedModel& model, std::ostream& out);
TrainedModel load_model(std::istream& in);

}  // namespace hybridcast
