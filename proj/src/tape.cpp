#include <algorithm>
#include <cmath>

#include "glsr/diffcore.hpp"

namespace glsr {

std::span<const double> Var::value() const { return tape_->value_of(id_); }

double Var::item() const {
  auto v = value();
  if (v.size() != 1) throw ShapeError("item() on a non-scalar node");
  return v[0];
}

int Var::size() const { return static_cast<int>(value().size()); }

// ---------------------------------------------------------------------------

Var Tape::push(std::vector<double> value, int rows, int cols, bool requires_grad, BackwardFn backward) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return push(std::move(values), n, 1, false, nullptr);
}

Var Tape::variable(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return push(std::move(values), n, 1, true, nullptr);
}

Var Tape::param(const ParamTree& tree, std::size_t leaf) {
  if (bound_tree_ && bound_tree_ != &tree) throw std::logic_error("tape already bound to another ParamTree");
  bound_tree_ = &tree;
  const Leaf& l = tree.at(leaf);
  auto it = param_nodes_.find(&l);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.rows = l.rows();
  n.cols = l.cols();
  n.external = l.data.data();
  n.requires_grad = true;
  n.param_leaf = static_cast<int>(leaf);
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&l, id);
  return Var(this, id);
}

std::span<const double> Tape::value_of(int id) const {
  const Node& n = nodes_.at(id);
  if (n.external) return {n.external, static_cast<std::size_t>(n.rows) * n.cols};
  return n.value;
}

std::vector<double>& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.rows) * n.cols, 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::logic_error("root belongs to another tape");
  if (value_of(root.id()).size() != 1) throw ShapeError("backward needs a scalar root");
  grad_of(root.id())[0] = 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return std::vector<double>(static_cast<std::size_t>(n.rows) * n.cols, 0.0);
  return n.grad;
}

Grad Tape::param_grad(const ParamTree& tree) const {
  Grad g = Grad::zeros_like(tree);
  for (const auto& n : nodes_) {
    if (n.param_leaf < 0 || n.grad.empty()) continue;
    for (double v : n.grad) {
      if (!std::isfinite(v)) throw GradientError(tree.at(n.param_leaf).path);
    }
    g.leaves[n.param_leaf] = n.grad;
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

void require_same(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands on different tapes");
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
}

template <class F>
Var unary(Var a, F&& f, Tape::BackwardFn back) {
  auto& t = a.tape();
  auto in = a.value();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const int n = static_cast<int>(out.size());
  return t.push(std::move(out), n, 1, t.requires_grad(a.id()), std::move(back));
}

}  // namespace

Var matvec(Var matrix, Var x) {
  auto& t = matrix.tape();
  const int m = t.rows(matrix.id());
  const int n = t.cols(matrix.id());
  if (x.size() != n) {
    throw ShapeError("matvec: matrix has " + std::to_string(n) + " columns, vector has " + std::to_string(x.size()));
  }
  auto w = matrix.value();
  auto xv = x.value();
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) {
    const double* wr = w.data() + static_cast<std::size_t>(i) * n;
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int j = 0;
    for (; j + 3 < n; j += 4) {
      s0 += wr[j] * xv[j];
      s1 += wr[j + 1] * xv[j + 1];
      s2 += wr[j + 2] * xv[j + 2];
      s3 += wr[j + 3] * xv[j + 3];
    }
    for (; j < n; ++j) s0 += wr[j] * xv[j];
    out[i] = (s0 + s1) + (s2 + s3);
  }
  const int wid = matrix.id();
  const int xid = x.id();
  const bool rg = t.requires_grad(wid) || t.requires_grad(xid);
  return t.push(std::move(out), m, 1, rg, [wid, xid, m, n](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto w = tp.value_of(wid);
    auto xv = tp.value_of(xid);
    if (tp.requires_grad(wid)) {
      auto& gw = tp.grad_of(wid);
      for (int i = 0; i < m; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        double* row = gw.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) row[j] += gi * xv[j];
      }
    }
    if (tp.requires_grad(xid)) {
      auto& gx = tp.grad_of(xid);
      for (int i = 0; i < m; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        const double* wr = w.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gx[j] += gi * wr[j];
      }
    }
  });
}

Var operator+(Var a, Var b) {
  require_same(a, b, "add");
  auto& t = a.tape();
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const int ai = a.id(), bi = b.id();
  const int n = static_cast<int>(out.size());
  return t.push(std::move(out), n, 1, t.requires_grad(ai) || t.requires_grad(bi), [ai, bi](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    for (int id : {ai, bi}) {
      if (!tp.requires_grad(id)) continue;
      auto& ga = tp.grad_of(id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Var operator-(Var a, Var b) {
  require_same(a, b, "sub");
  auto& t = a.tape();
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const int ai = a.id(), bi = b.id();
  const int n = static_cast<int>(out.size());
  return t.push(std::move(out), n, 1, t.requires_grad(ai) || t.requires_grad(bi), [ai, bi](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    if (tp.requires_grad(ai)) {
      auto& ga = tp.grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(bi)) {
      auto& gb = tp.grad_of(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var operator*(Var a, Var b) {
  require_same(a, b, "mul");
  auto& t = a.tape();
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int ai = a.id(), bi = b.id();
  const int n = static_cast<int>(out.size());
  return t.push(std::move(out), n, 1, t.requires_grad(ai) || t.requires_grad(bi), [ai, bi](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto av = tp.value_of(ai);
    auto bv = tp.value_of(bi);
    if (tp.requires_grad(ai)) {
      auto& ga = tp.grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(bi)) {
      auto& gb = tp.grad_of(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var operator*(double c, Var a) {
  const int ai = a.id();
  return unary(a, [c](double v) { return c * v; }, [ai, c](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var operator-(Var a) { return -1.0 * a; }

Var add_scalar(Var a, double c) {
  const int ai = a.id();
  return unary(a, [c](double v) { return v + c; }, [ai](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var sigmoid(Var a) {
  const int ai = a.id();
  return unary(a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [ai](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto y = tp.value_of(self);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  const int ai = a.id();
  return unary(a, [](double v) { return std::tanh(v); }, [ai](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto y = tp.value_of(self);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var exp(Var a) {
  const int ai = a.id();
  return unary(a, [](double v) { return std::exp(v); }, [ai](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto y = tp.value_of(self);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var log(Var a) {
  const int ai = a.id();
  return unary(a, [](double v) { return std::log(v); }, [ai](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto x = tp.value_of(ai);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

Var square(Var a) {
  const int ai = a.id();
  return unary(a, [](double v) { return v * v; }, [ai](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto x = tp.value_of(ai);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * x[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  auto& t = parts[0].tape();
  std::vector<double> out;
  std::vector<int> ids;
  std::vector<int> offsets;
  bool rg = false;
  for (const auto& p : parts) {
    offsets.push_back(static_cast<int>(out.size()));
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(p.id());
    rg = rg || t.requires_grad(p.id());
  }
  const int n = static_cast<int>(out.size());
  return t.push(std::move(out), n, 1, rg, [ids, offsets](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      auto& gp = tp.grad_of(ids[k]);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
    }
  });
}

Var slice(Var a, int offset, int length) {
  if (offset < 0 || length < 0 || offset + length > a.size()) throw ShapeError("slice out of range");
  auto& t = a.tape();
  auto v = a.value();
  std::vector<double> out(v.begin() + offset, v.begin() + offset + length);
  const int ai = a.id();
  return t.push(std::move(out), length, 1, t.requires_grad(ai), [ai, offset](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
  });
}

Var row(Var matrix, int index) {
  auto& t = matrix.tape();
  const int m = t.rows(matrix.id());
  const int n = t.cols(matrix.id());
  if (index < 0 || index >= m) throw ShapeError("row index " + std::to_string(index) + " out of range");
  auto v = matrix.value();
  std::vector<double> out(v.begin() + static_cast<std::size_t>(index) * n,
                          v.begin() + static_cast<std::size_t>(index + 1) * n);
  const int mi = matrix.id();
  return t.push(std::move(out), n, 1, t.requires_grad(mi), [mi, index, n](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& gm = tp.grad_of(mi);
    for (int j = 0; j < n; ++j) gm[static_cast<std::size_t>(index) * n + j] += g[j];
  });
}

Var softmax(Var a) {
  auto& t = a.tape();
  auto v = a.value();
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (auto& o : out) o /= z;
  const int ai = a.id();
  const int n = static_cast<int>(out.size());
  return t.push(std::move(out), n, 1, t.requires_grad(ai), [ai](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto y = tp.value_of(self);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
  });
}

Var log_softmax(Var a) {
  auto& t = a.tape();
  auto v = a.value();
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
  const int ai = a.id();
  const int n = static_cast<int>(out.size());
  return t.push(std::move(out), n, 1, t.requires_grad(ai), [ai](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto y = tp.value_of(self);
    double gs = 0.0;
    for (double gi : g) gs += gi;
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gs;
  });
}

Var pick(Var a, int index) {
  if (index < 0 || index >= a.size()) throw ShapeError("pick index out of range");
  auto& t = a.tape();
  const int ai = a.id();
  return t.push({a.value()[index]}, 1, 1, t.requires_grad(ai), [ai, index](Tape& tp, int self) {
    tp.grad_of(ai)[index] += tp.grad_of(self)[0];
  });
}

Var dot(Var a, std::span<const double> weights) {
  if (static_cast<int>(weights.size()) != a.size()) throw ShapeError("dot: weight size mismatch");
  auto& t = a.tape();
  auto v = a.value();
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * weights[i];
  const int ai = a.id();
  std::vector<double> w(weights.begin(), weights.end());
  return t.push({s}, 1, 1, t.requires_grad(ai), [ai, w = std::move(w)](Tape& tp, int self) {
    const double g = tp.grad_of(self)[0];
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < w.size(); ++i) ga[i] += g * w[i];
  });
}

Var sum(Var a) {
  auto& t = a.tape();
  double s = 0.0;
  for (double v : a.value()) s += v;
  const int ai = a.id();
  return t.push({s}, 1, 1, t.requires_grad(ai), [ai](Tape& tp, int self) {
    const double g = tp.grad_of(self)[0];
    for (auto& ga : tp.grad_of(ai)) ga += g;
  });
}

Var mul_const(Var a, std::span<const double> factors) {
  if (static_cast<int>(factors.size()) != a.size()) throw ShapeError("mul_const: size mismatch");
  auto& t = a.tape();
  auto v = a.value();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * factors[i];
  const int ai = a.id();
  std::vector<double> f(factors.begin(), factors.end());
  const int n = static_cast<int>(out.size());
  return t.push(std::move(out), n, 1, t.requires_grad(ai), [ai, f = std::move(f)](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& ga = tp.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f[i];
  });
}

// ---------------------------------------------------------------------------

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
}

Var Dropout::apply(Var x) {
  if (rate_ == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate_);
  std::vector<double> mask(x.size());
  const double scale = 1.0 / (1.0 - rate_);
  for (auto& m : mask) m = keep(rng_) ? scale : 0.0;
  return mul_const(x, mask);
}

}  // namespace glsr
