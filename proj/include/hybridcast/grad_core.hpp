#pragma once

#include <cstddef>
#include <functional>
#include <deque>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hybridcast/common.hpp"
#include "hybridcast/random.hpp"

// Reverse-mode differentiation over dense 2-D arrays.
//
// A Tape records every operation of one forward pass in execution order, so
// the recorded list is already a topological order. backward() walks it in
// reverse. Every tensor is a rows x cols matrix; a scalar is 1 x 1 and a
// vector is a single row. A tape belongs to one thread.

namespace hybridcast::grad {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool tracked() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Named trainable arrays with their accumulated gradients. Iteration order is
/// insertion order.
class ParamStore {
 public:
  struct Param {
    std::string name;
    Matrix value;
    Matrix grad;
  };

  Param& add(std::string name, Matrix init);
  Param& at(std::string_view name);
  const Param& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const;

  void zero_grad();

  /// Copies values from `other`, which must hold the same names and shapes.
  void assign_values(const ParamStore& other);

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var leaf(Matrix value);
  /// Tracked leaf bound to `param`; backward() adds its gradient into param.grad.
  Var param(ParamStore::Param& param);

  /// Records an op result. `tracked` says whether any input needs a gradient.
  Var record(Matrix value, bool tracked, Backprop backprop);

  /// Propagates d(loss)/d(node) to every tracked node. Leaves never reached
  /// get zero gradients.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }
  const Matrix& grad(Var v) const;

  /// Adds `g` to the gradient of node `id` (no-op for untracked nodes).
  void accumulate(std::size_t id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.tracked) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool tracked = false;
    Backprop backprop;
    ParamStore::Param* param = nullptr;
  };
  std::deque<Node> nodes_;  // deque keeps value references stable
};

enum class Mode { Train, Eval };

// Forward ops. Every op throws GradError("ShapeMismatch") on incompatible
// shapes and GradError("NonFinite") when it would produce NaN or Inf.

Var matmul(Var a, Var b);
/// Same-shape sum, or a (1 x n) row `b` broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var sigmoid(Var x);
Var tanh(Var x);
/// Subgradient 0 at exactly 0.
Var relu(Var x);
/// Concatenation along the feature (column) axis.
Var concat(Var a, Var b);
Var slice_cols(Var x, Eigen::Index first, Eigen::Index count);
Var slice_rows(Var x, Eigen::Index first, Eigen::Index count);
/// Row-major reinterpretation to rows x cols.
Var reshape(Var x, Eigen::Index rows, Eigen::Index cols);
/// Treats `x` as stacked blocks of a.rows() rows and left-multiplies each
/// block by the constant `a`. Used for per-sample graph propagation.
Var block_matmul(const Matrix& a, Var x);
/// Mean over all elements of (pred - target)^2, as a 1 x 1 tensor.
Var mse_loss(Var pred, Var target);
/// One LSTM layer unrolled over `steps` time steps. `x` stacks the steps
/// time-major (step t owns rows [t*R, (t+1)*R)); the result stacks the hidden
/// states the same way. Gate columns of w_x (in x 4H), w_h (H x 4H) and
/// b (1 x 4H) are ordered forget, input, output, candidate. Zero initial state.
Var lstm_layer(Var x, Var w_x, Var w_h, Var b, Eigen::Index steps);
/// Inverted dropout. Eval mode and rate 0 return `x` unchanged.
Var dropout(Var x, double rate, Mode mode, Rng& rng);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

AdamState make_adam_state(const ParamStore& params, AdamConfig config);

/// One bias-corrected Adam update using params' accumulated gradients.
void adam_step(ParamStore& params, AdamState& state);

// ---------------------------------------------------------------------------
// Finite-difference verification

using LossBuilder = std::function<Var(Tape&, ParamStore&)>;

struct GradCheckOptions {
  double h = 1e-5;
  /// Coordinates checked per parameter; 0 checks every coordinate.
  std::size_t coords_per_param = 0;
  std::uint64_t seed = 0;
  /// Smallest denominator. Below it the central difference is mostly rounding error
  /// (about eps * |loss| / h), so tiny components are compared on an absolute scale.
  double floor = 1e-6;
};

/// Max over checked coordinates of |analytic - central| / max(|analytic|, |central|, floor).
/// `build` must be deterministic; it is re-run on a fresh tape per probe.
double gradient_check(const LossBuilder& build, ParamStore& params, const GradCheckOptions& options = {});

}  // namespace hybridcast::grad
