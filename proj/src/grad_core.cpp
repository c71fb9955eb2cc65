#include "hybridcast/grad_core.hpp"

#include <memory>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace hybridcast::grad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw GradError("ShapeMismatch", std::string(op) + " of " + shape_str(a) + " and " + shape_str(b));
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw GradError("DetachedGraph", "variable is not on a tape");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw GradError("DetachedGraph", "operands live on different tapes");
  return tape_of(a);
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::tracked() const { return tape_->tracked(id_); }

// --- ParamStore --------------------------------------------------------------

ParamStore::Param& ParamStore::add(std::string name, Matrix init) {
  if (index_.count(name) != 0) {
    throw GradError("DuplicateParam", name);
  }
  index_.emplace(name, params_.size());
  Matrix zeros = Matrix::Zero(init.rows(), init.cols());
  params_.push_back({std::move(name), std::move(init), std::move(zeros)});
  return params_.back();
}

ParamStore::Param& ParamStore::at(std::string_view name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw GradError("UnknownParam", std::string(name));
  return params_[it->second];
}

const ParamStore::Param& ParamStore::at(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw GradError("UnknownParam", std::string(name));
  return params_[it->second];
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

void ParamStore::assign_values(const ParamStore& other) {
  if (other.params_.size() != params_.size()) {
    throw GradError("ShapeMismatch", "parameter stores differ in size");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& src = other.params_[k];
    auto& dst = params_[k];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols()) {
      throw GradError("ShapeMismatch", "parameter " + dst.name + " differs");
    }
    dst.value = src.value;
  }
}

// --- Tape ---------------------------------------------------------------------

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value) {
  if (!value.allFinite()) throw GradError("NonFinite", "leaf value");
  nodes_.push_back({std::move(value), Matrix(), true, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamStore::Param& param) {
  Var v = leaf(param.value);
  nodes_.back().param = &param;
  return v;
}

Var Tape::record(Matrix value, bool tracked, Backprop backprop) {
  if (!value.allFinite()) {
    throw GradError("NonFinite", "operation produced NaN or Inf");
  }
  nodes_.push_back({std::move(value), Matrix(), tracked, tracked ? std::move(backprop) : Backprop{}, nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& g) { accumulate_expr(id, g); }

const Matrix& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) {
    // never reached: expose an explicit zero of the right shape
    auto& mutable_node = const_cast<Node&>(n);
    mutable_node.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw GradError("DetachedGraph", "loss belongs to another tape");
  Node& root = nodes_[loss.id()];
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw GradError("NotScalarLoss", "loss has shape " + shape_str(root.value));
  }
  if (!root.tracked) {
    throw GradError("DetachedGraph", "loss does not depend on any tracked leaf");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  root.grad = Matrix::Ones(1, 1);

  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.tracked || n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (!n.tracked) continue;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    if (!n.grad.allFinite()) throw GradError("NonFinite", "gradient contains NaN or Inf");
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// --- ops ----------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_mismatch("matmul", av, bv);
  Matrix out = av * bv;
  const auto ia = a.id();
  const auto ib = b.id();
  return t.record(std::move(out), a.tracked() || b.tracked(), [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.tracked(ia)) tp.accumulate_expr(ia, g * tp.value(ib).transpose());
    if (tp.tracked(ib)) tp.accumulate_expr(ib, tp.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const auto ia = a.id();
  const auto ib = b.id();
  const bool tracked = a.tracked() || b.tracked();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return t.record(av + bv, tracked, [ia, ib](Tape& tp, const Matrix& g) {
      tp.accumulate(ia, g);
      tp.accumulate(ib, g);
    });
  }
  if (bv.rows() == 1 && bv.cols() == av.cols()) {
    Matrix out = av.rowwise() + bv.row(0);
    return t.record(std::move(out), tracked, [ia, ib](Tape& tp, const Matrix& g) {
      tp.accumulate(ia, g);
      if (tp.tracked(ib)) tp.accumulate_expr(ib, g.colwise().sum());
    });
  }
  shape_mismatch("add", av, bv);
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_mismatch("sub", av, bv);
  const auto ia = a.id();
  const auto ib = b.id();
  return t.record(av - bv, a.tracked() || b.tracked(), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.tracked(ib)) tp.accumulate_expr(ib, -g);
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_mismatch("hadamard", av, bv);
  const auto ia = a.id();
  const auto ib = b.id();
  return t.record(av.cwiseProduct(bv), a.tracked() || b.tracked(), [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.tracked(ia)) tp.accumulate_expr(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.tracked(ib)) tp.accumulate_expr(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  return t.record(a.value() * factor, a.tracked(),
                  [ia, factor](Tape& tp, const Matrix& g) { tp.accumulate_expr(ia, g * factor); });
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  const auto ix = x.id();
  const auto io = t.size();  // id the result will receive
  Matrix out = (1.0 + (-x.value().array()).exp()).inverse().matrix();
  return t.record(std::move(out), x.tracked(), [ix, io](Tape& tp, const Matrix& g) {
    const auto s = tp.value(io).array();
    tp.accumulate_expr(ix, (g.array() * s * (1.0 - s)).matrix());
  });
}

Var tanh(Var x) {
  Tape& t = tape_of(x);
  const auto ix = x.id();
  const auto io = t.size();
  Matrix out = x.value().array().tanh().matrix();
  return t.record(std::move(out), x.tracked(), [ix, io](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ix, (g.array() * (1.0 - tp.value(io).array().square())).matrix());
  });
}

Var relu(Var x) {
  Tape& t = tape_of(x);
  const auto ix = x.id();
  Matrix out = x.value().cwiseMax(0.0);
  return t.record(std::move(out), x.tracked(), [ix](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ix, (tp.value(ix).array() > 0.0).select(g, 0.0).matrix());
  });
}

Var concat(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) shape_mismatch("concat", av, bv);
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const auto ia = a.id();
  const auto ib = b.id();
  const auto ca = av.cols();
  const auto cb = bv.cols();
  return t.record(std::move(out), a.tracked() || b.tracked(), [ia, ib, ca, cb](Tape& tp, const Matrix& g) {
    if (tp.tracked(ia)) tp.accumulate_expr(ia, g.leftCols(ca));
    if (tp.tracked(ib)) tp.accumulate_expr(ib, g.rightCols(cb));
  });
}

Var slice_cols(Var x, Eigen::Index first, Eigen::Index count) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  if (first < 0 || count < 0 || first + count > xv.cols()) {
    throw GradError("ShapeMismatch", "slice of columns [" + std::to_string(first) + ", " +
                                         std::to_string(first + count) + ") from " + shape_str(xv));
  }
  const auto ix = x.id();
  const auto rows = xv.rows();
  const auto cols = xv.cols();
  return t.record(xv.middleCols(first, count), x.tracked(), [ix, first, count, rows, cols](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full.middleCols(first, count) = g;
    tp.accumulate(ix, full);
  });
}

Var slice_rows(Var x, Eigen::Index first, Eigen::Index count) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  if (first < 0 || count < 0 || first + count > xv.rows()) {
    throw GradError("ShapeMismatch", "slice of rows [" + std::to_string(first) + ", " +
                                         std::to_string(first + count) + ") from " + shape_str(xv));
  }
  const auto ix = x.id();
  const auto rows = xv.rows();
  const auto cols = xv.cols();
  return t.record(xv.middleRows(first, count), x.tracked(), [ix, first, count, rows, cols](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full.middleRows(first, count) = g;
    tp.accumulate(ix, full);
  });
}

namespace {

struct LstmTrace {
  Matrix gates;  // activated f, i, o, g per row
  Matrix cell;
  Matrix cell_tanh;
};

}  // namespace

Var lstm_layer(Var x, Var w_x, Var w_h, Var b, Eigen::Index steps) {
  Tape& t = tape_of(x, w_x);
  tape_of(w_h, b);
  tape_of(x, w_h);
  const Matrix& xv = x.value();
  const Matrix& wx = w_x.value();
  const Matrix& wh = w_h.value();
  const Matrix& bv = b.value();
  const auto H = wh.rows();
  if (steps <= 0 || xv.rows() % steps != 0) {
    throw GradError("ShapeMismatch", "LSTM input of " + shape_str(xv) + " does not split into " +
                                         std::to_string(steps) + " steps");
  }
  if (wx.rows() != xv.cols()) shape_mismatch("lstm_layer", xv, wx);
  if (wx.cols() != 4 * H || wh.cols() != 4 * H) shape_mismatch("lstm_layer", wx, wh);
  if (bv.rows() != 1 || bv.cols() != 4 * H) shape_mismatch("lstm_layer", wh, bv);
  const Eigen::Index R = xv.rows() / steps;

  auto trace = std::make_shared<LstmTrace>();
  Matrix& gates = trace->gates;
  gates.noalias() = xv * wx;
  gates.rowwise() += bv.row(0);
  trace->cell.resize(xv.rows(), H);
  trace->cell_tanh.resize(xv.rows(), H);
  Matrix out(xv.rows(), H);
  for (Eigen::Index s = 0; s < steps; ++s) {
    auto z = gates.middleRows(s * R, R);
    if (s > 0) z.noalias() += out.middleRows((s - 1) * R, R) * wh;
    auto sig = z.leftCols(3 * H).array();
    sig = 1.0 / (1.0 + (-sig).exp());
    z.rightCols(H) = z.rightCols(H).array().tanh().matrix();
    auto c = trace->cell.middleRows(s * R, R);
    c = z.middleCols(H, H).cwiseProduct(z.rightCols(H));
    if (s > 0) c += z.leftCols(H).cwiseProduct(trace->cell.middleRows((s - 1) * R, R));
    trace->cell_tanh.middleRows(s * R, R) = c.array().tanh().matrix();
    out.middleRows(s * R, R) = z.middleCols(2 * H, H).cwiseProduct(trace->cell_tanh.middleRows(s * R, R));
  }

  const auto ix = x.id();
  const auto iwx = w_x.id();
  const auto iwh = w_h.id();
  const auto ib = b.id();
  const auto io = t.size();
  const bool tracked = x.tracked() || w_x.tracked() || w_h.tracked() || b.tracked();
  return t.record(std::move(out), tracked, [=](Tape& tp, const Matrix& g) {
    const Matrix& hs = tp.value(io);
    const Matrix& whv = tp.value(iwh);
    const Matrix& gt = trace->gates;
    Matrix dz(gt.rows(), gt.cols());
    Matrix dh_next = Matrix::Zero(R, H);
    Matrix dc_next = Matrix::Zero(R, H);
    for (Eigen::Index s = steps; s-- > 0;) {
      const auto rows = [&](const Matrix& m) { return m.middleRows(s * R, R); };
      const auto gs = rows(gt);
      const auto f = gs.leftCols(H).array();
      const auto i = gs.middleCols(H, H).array();
      const auto o = gs.middleCols(2 * H, H).array();
      const auto cand = gs.rightCols(H).array();
      const auto tc = rows(trace->cell_tanh).array();
      const Matrix dh = rows(g) + dh_next;
      const Matrix dc = (dh.array() * o * (1.0 - tc.square())).matrix() + dc_next;
      auto d = dz.middleRows(s * R, R);
      if (s > 0) {
        d.leftCols(H) = (dc.array() * trace->cell.middleRows((s - 1) * R, R).array() * f * (1.0 - f)).matrix();
      } else {
        d.leftCols(H).setZero();
      }
      d.middleCols(H, H) = (dc.array() * cand * i * (1.0 - i)).matrix();
      d.middleCols(2 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
      d.rightCols(H) = (dc.array() * i * (1.0 - cand.square())).matrix();
      dc_next = (dc.array() * f).matrix();
      if (s > 0) dh_next.noalias() = d * whv.transpose();
    }
    if (tp.tracked(ix)) tp.accumulate_expr(ix, dz * tp.value(iwx).transpose());
    if (tp.tracked(iwx)) tp.accumulate_expr(iwx, tp.value(ix).transpose() * dz);
    if (tp.tracked(iwh) && steps > 1) {
      const auto n = (steps - 1) * R;
      tp.accumulate_expr(iwh, hs.topRows(n).transpose() * dz.bottomRows(n));
    }
    if (tp.tracked(ib)) tp.accumulate_expr(ib, dz.colwise().sum());
  });
}

Var reshape(Var x, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  if (rows * cols != xv.size()) {
    throw GradError("ShapeMismatch", "reshape " + shape_str(xv) + " to " + std::to_string(rows) + "x" +
                                         std::to_string(cols));
  }
  Matrix out = Eigen::Map<const Matrix>(xv.data(), rows, cols);
  const auto ix = x.id();
  const auto r0 = xv.rows();
  const auto c0 = xv.cols();
  return t.record(std::move(out), x.tracked(), [ix, r0, c0](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ix, Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

Var block_matmul(const Matrix& a, Var x) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  const auto n = a.rows();
  if (a.cols() != n || n == 0 || xv.rows() % n != 0) {
    shape_mismatch("block_matmul", a, xv);
  }
  const auto blocks = xv.rows() / n;
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    out.middleRows(b * n, n).noalias() = a * xv.middleRows(b * n, n);
  }
  const auto ix = x.id();
  auto at = std::make_shared<Matrix>(a.transpose());
  return t.record(std::move(out), x.tracked(), [ix, at, n, blocks](Tape& tp, const Matrix& g) {
    Matrix gx(g.rows(), g.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
      gx.middleRows(b * n, n).noalias() = (*at) * g.middleRows(b * n, n);
    }
    tp.accumulate(ix, gx);
  });
}

Var mse_loss(Var pred, Var target) {
  Tape& t = tape_of(pred, target);
  const Matrix& pv = pred.value();
  const Matrix& tv = target.value();
  if (pv.rows() != tv.rows() || pv.cols() != tv.cols() || pv.size() == 0) shape_mismatch("mse_loss", pv, tv);
  const double n = static_cast<double>(pv.size());
  Matrix loss(1, 1);
  loss(0, 0) = (pv - tv).squaredNorm() / n;
  const auto ip = pred.id();
  const auto it = target.id();
  return t.record(std::move(loss), pred.tracked() || target.tracked(), [ip, it, n](Tape& tp, const Matrix& g) {
    const Matrix diff = (tp.value(ip) - tp.value(it)) * (2.0 * g(0, 0) / n);
    tp.accumulate(ip, diff);
    if (tp.tracked(it)) tp.accumulate_expr(it, -diff);
  });
}

Var dropout(Var x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw GradError("InvalidRate", "dropout rate must lie in [0, 1)");
  }
  if (mode == Mode::Eval || rate == 0.0) return x;
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<Matrix>(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      (*mask)(r, c) = rng.uniform() < rate ? 0.0 : keep_scale;
    }
  }
  const auto ix = x.id();
  return t.record(xv.cwiseProduct(*mask), x.tracked(),
                  [ix, mask](Tape& tp, const Matrix& g) { tp.accumulate_expr(ix, g.cwiseProduct(*mask)); });
}

// --- Adam ---------------------------------------------------------------------

AdamState make_adam_state(const ParamStore& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& p : params.all()) {
    s.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

void adam_step(ParamStore& params, AdamState& state) {
  auto& all = params.all();
  if (state.m.size() != all.size() || state.v.size() != all.size()) {
    throw GradError("ShapeMismatch", "optimizer state does not match the parameter store");
  }
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (state.m[k].rows() != all[k].value.rows() || state.m[k].cols() != all[k].value.cols() ||
        all[k].grad.rows() != all[k].value.rows() || all[k].grad.cols() != all[k].value.cols()) {
      throw GradError("ShapeMismatch", "optimizer state for " + all[k].name);
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < all.size(); ++k) {
    auto& p = all[k];
    auto m = state.m[k].array();
    auto v = state.v[k].array();
    const auto g = p.grad.array();
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.square();
    p.value.array() -= c.learning_rate * (m / bc1) / ((v / bc2).sqrt() + c.epsilon);
  }
}

// --- gradient check -------------------------------------------------------------

double gradient_check(const LossBuilder& build, ParamStore& params, const GradCheckOptions& options) {
  params.zero_grad();
  {
    Tape tape;
    Var loss = build(tape, params);
    tape.backward(loss);
  }
  std::vector<Matrix> analytic;
  for (const auto& p : params.all()) analytic.push_back(p.grad);

  const auto evaluate = [&]() {
    Tape tape;
    return build(tape, params).value()(0, 0);
  };

  Rng rng(options.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.all().size(); ++k) {
    auto& p = params.all()[k];
    const auto total = static_cast<std::size_t>(p.value.size());
    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coords_per_param != 0 && options.coords_per_param < total) {
      for (std::size_t i = 0; i < options.coords_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(total - i)]);
      }
      coords.resize(options.coords_per_param);
    }
    for (const auto c : coords) {
      double& x = p.value.data()[c];
      const double saved = x;
      x = saved + options.h;
      const double up = evaluate();
      x = saved - options.h;
      const double down = evaluate();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.h);
      const double exact = analytic[k].data()[c];
      const double denom = std::max({std::abs(exact), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  }
  params.zero_grad();
  return worst;
}

}  // namespace hybridcast::grad
