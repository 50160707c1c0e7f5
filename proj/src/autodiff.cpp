// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mspnf::ad {

namespace {

constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

inline double sigmoid_of(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_of(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double guarded_den(double d) {
  if (std::abs(d) >= kGuard) return d;
  return d < 0.0 ? -kGuard : kGuard;
}

}  // namespace

Var Tape::push(Node n, bool needs_grad) {
  if (nodes_.size() >= kNone) throw std::length_error("tape: too many nodes");
  n.needs_grad = needs_grad;
  n.offset = values_.size();
  values_.resize(values_.size() + n.size);
  nodes_.push_back(n);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("tape: invalid variable");
  return nodes_[v.id];
}

Var Tape::constant(std::span<const double> values) {
  Node n;
  n.op = Op::Constant;
  n.size = static_cast<std::uint32_t>(values.size());
  const Var v = push(n, false);
  std::copy(values.begin(), values.end(), out(nodes_[v.id]));
  return v;
}

Var Tape::constant(std::initializer_list<double> values) {
  return constant(std::span<const double>(values.begin(), values.size()));
}

Var Tape::constant(double value) { return constant(std::span<const double>(&value, 1)); }

Var Tape::parameter(const TensorRef& tensor) {
  if (tensor.id < param_cache_.size() && param_cache_[tensor.id] != kNone) return Var{param_cache_[tensor.id]};
  Node n;
  n.op = Op::Parameter;
  n.size = static_cast<std::uint32_t>(tensor.values.size());
  n.external = tensor.values.data();
  n.tensor = tensor.id;
  const Var v = push(n, true);
  if (tensor.id >= param_cache_.size()) param_cache_.resize(tensor.id + 1, kNone);
  param_cache_[tensor.id] = v.id;
  return v;
}

Var Tape::gather(const TensorRef& tensor, std::span<const GatherTerm> terms, std::size_t width) {
  for (const auto& t : terms) {
    if (t.offset + width > tensor.values.size()) throw ShapeError("gather: read past end of tensor");
  }
  Node n;
  n.op = Op::Gather;
  n.size = static_cast<std::uint32_t>(width);
  n.tensor = tensor.id;
  n.aux = terms_.size();
  n.aux_n = terms.size();
  terms_.insert(terms_.end(), terms.begin(), terms.end());
  const Var v = push(n, true);
  double* o = out(nodes_[v.id]);
  for (const auto& t : terms) {
    const double* src = tensor.values.data() + t.offset;
    for (std::size_t i = 0; i < width; ++i) o[i] += t.weight * src[i];
  }
  return v;
}

Var Tape::unary(Op op, Var a) {
  const Node& na = node(a);
  Node n;
  n.op = op;
  n.a = a.id;
  n.size = (op == Op::Sum) ? 1 : na.size;
  const bool ng = na.needs_grad;
  const Var v = push(n, ng);
  const Node& pa = nodes_[a.id];
  const double* x = val(pa);
  double* y = out(nodes_[v.id]);
  const std::size_t m = pa.size;
  switch (op) {
    case Op::Neg:
      for (std::size_t i = 0; i < m; ++i) y[i] = -x[i];
      break;
    case Op::Exp:
      for (std::size_t i = 0; i < m; ++i) y[i] = std::exp(x[i]);
      break;
    case Op::Log:
      for (std::size_t i = 0; i < m; ++i) y[i] = std::log(std::max(x[i], kGuard));
      break;
    case Op::Relu:
      for (std::size_t i = 0; i < m; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case Op::Softplus:
      for (std::size_t i = 0; i < m; ++i) y[i] = softplus_of(x[i]);
      break;
    case Op::Sigmoid:
      for (std::size_t i = 0; i < m; ++i) y[i] = sigmoid_of(x[i]);
      break;
    case Op::Sum: {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += x[i];
      y[0] = s;
      break;
    }
    default:
      throw std::logic_error("tape: not a unary op");
  }
  return v;
}

Var Tape::binary(Op op, Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.size != nb.size) {
    throw ShapeError("tape: operand sizes differ (" + std::to_string(na.size) + " vs " + std::to_string(nb.size) + ")");
  }
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  n.size = (op == Op::Dot) ? 1 : na.size;
  const bool ng = na.needs_grad || nb.needs_grad;
  const Var v = push(n, ng);
  const Node& pa = nodes_[a.id];
  const Node& pb = nodes_[b.id];
  const double* x = val(pa);
  const double* z = val(pb);
  double* y = out(nodes_[v.id]);
  const std::size_t m = pa.size;
  switch (op) {
    case Op::Add:
      for (std::size_t i = 0; i < m; ++i) y[i] = x[i] + z[i];
      break;
    case Op::Sub:
      for (std::size_t i = 0; i < m; ++i) y[i] = x[i] - z[i];
      break;
    case Op::Mul:
      for (std::size_t i = 0; i < m; ++i) y[i] = x[i] * z[i];
      break;
    case Op::Div:
      for (std::size_t i = 0; i < m; ++i) y[i] = x[i] / guarded_den(z[i]);
      break;
    case Op::Dot: {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += x[i] * z[i];
      y[0] = s;
      break;
    }
    default:
      throw std::logic_error("tape: not a binary op");
  }
  return v;
}

Var Tape::add(Var a, Var b) { return binary(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::Mul, a, b); }
Var Tape::div(Var a, Var b) { return binary(Op::Div, a, b); }
Var Tape::dot(Var a, Var b) { return binary(Op::Dot, a, b); }
Var Tape::neg(Var a) { return unary(Op::Neg, a); }
Var Tape::exp(Var a) { return unary(Op::Exp, a); }
Var Tape::log(Var a) { return unary(Op::Log, a); }
Var Tape::relu(Var a) { return unary(Op::Relu, a); }
Var Tape::softplus(Var a) { return unary(Op::Softplus, a); }
Var Tape::sigmoid(Var a) { return unary(Op::Sigmoid, a); }
Var Tape::sum(Var a) { return unary(Op::Sum, a); }

Var Tape::matvec(Var matrix, Var x, std::size_t rows, std::size_t cols) {
  const Node& nm = node(matrix);
  const Node& nx = node(x);
  if (nm.size != rows * cols) throw ShapeError("matvec: matrix size does not match rows x cols");
  if (nx.size != cols) throw ShapeError("matvec: vector length does not match cols");
  Node n;
  n.op = Op::MatVec;
  n.a = matrix.id;
  n.b = x.id;
  n.size = static_cast<std::uint32_t>(rows);
  n.aux_n = cols;
  const bool ng = nm.needs_grad || nx.needs_grad;
  const Var v = push(n, ng);
  const double* w = val(nodes_[matrix.id]);
  const double* xv = val(nodes_[x.id]);
  double* y = out(nodes_[v.id]);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    // Four fixed partial sums: vectorizable, and the order never changes.
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      s0 += row[c] * xv[c];
      s1 += row[c + 1] * xv[c + 1];
      s2 += row[c + 2] * xv[c + 2];
      s3 += row[c + 3] * xv[c + 3];
    }
    for (; c < cols; ++c) s0 += row[c] * xv[c];
    y[r] = (s0 + s1) + (s2 + s3);
  }
  return v;
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Node n;
  n.op = Op::Concat;
  n.aux = aux_.size();
  n.aux_n = parts.size();
  bool ng = false;
  std::size_t total = 0;
  for (Var p : parts) {
    const Node& np = node(p);
    total += np.size;
    ng = ng || np.needs_grad;
    aux_.push_back(p.id);
  }
  n.size = static_cast<std::uint32_t>(total);
  const Var v = push(n, ng);
  double* y = out(nodes_[v.id]);
  for (Var p : parts) {
    const Node& np = nodes_[p.id];
    const double* src = val(np);
    y = std::copy(src, src + np.size, y);
  }
  return v;
}

Var Tape::concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var Tape::scale(Var a, double factor) {
  const Node& na = node(a);
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.size = na.size;
  n.c = factor;
  const Var v = push(n, na.needs_grad);
  const double* x = val(nodes_[a.id]);
  double* y = out(nodes_[v.id]);
  for (std::size_t i = 0; i < n.size; ++i) y[i] = factor * x[i];
  return v;
}

Var Tape::clamp_min(Var a, double lo) {
  const Node& na = node(a);
  Node n;
  n.op = Op::ClampMin;
  n.a = a.id;
  n.size = na.size;
  n.c = lo;
  const Var v = push(n, na.needs_grad);
  const double* x = val(nodes_[a.id]);
  double* y = out(nodes_[v.id]);
  for (std::size_t i = 0; i < n.size; ++i) y[i] = x[i] > lo ? x[i] : lo;
  return v;
}

std::size_t Tape::size(Var v) const { return node(v).size; }

std::span<const double> Tape::value(Var v) const {
  const Node& n = node(v);
  return {val(n), n.size};
}

double Tape::scalar(Var v) const {
  const Node& n = node(v);
  if (n.size != 1) throw ShapeError("tape: value is not a scalar");
  return val(n)[0];
}

std::span<const double> Tape::grad(Var v) const {
  if (!backward_done_) throw std::logic_error("tape: grad() before backward()");
  const Node& n = node(v);
  return {grads_.data() + n.offset, n.size};
}

void Tape::backward(Var root) {
  if (backward_done_) throw std::logic_error("tape: backward() called twice on the same tape");
  const Node& nr = node(root);
  if (nr.size != 1) throw ShapeError("tape: backward() needs a scalar root");
  backward_done_ = true;
  grads_.assign(values_.size(), 0.0);
  grads_[nr.offset] = 1.0;

  for (std::size_t i = root.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    const double* g = grads_.data() + n.offset;
    const std::size_t m = n.size;
    switch (n.op) {
      case Op::Constant:
      case Op::Parameter:
      case Op::Gather:
        break;
      case Op::Add:
      case Op::Sub: {
        const Node& a = nodes_[n.a];
        const Node& b = nodes_[n.b];
        if (a.needs_grad) {
          double* ga = grads_.data() + a.offset;
          for (std::size_t k = 0; k < m; ++k) ga[k] += g[k];
        }
        if (b.needs_grad) {
          double* gb = grads_.data() + b.offset;
          if (n.op == Op::Add) {
            for (std::size_t k = 0; k < m; ++k) gb[k] += g[k];
          } else {
            for (std::size_t k = 0; k < m; ++k) gb[k] -= g[k];
          }
        }
        break;
      }
      case Op::Mul: {
        const Node& a = nodes_[n.a];
        const Node& b = nodes_[n.b];
        const double* x = val(a);
        const double* z = val(b);
        if (a.needs_grad) {
          double* ga = grads_.data() + a.offset;
          for (std::size_t k = 0; k < m; ++k) ga[k] += g[k] * z[k];
        }
        if (b.needs_grad) {
          double* gb = grads_.data() + b.offset;
          for (std::size_t k = 0; k < m; ++k) gb[k] += g[k] * x[k];
        }
        break;
      }
      case Op::Div: {
        const Node& a = nodes_[n.a];
        const Node& b = nodes_[n.b];
        const double* x = val(a);
        const double* z = val(b);
        for (std::size_t k = 0; k < m; ++k) {
          const double d = guarded_den(z[k]);
          if (a.needs_grad) grads_[a.offset + k] += g[k] / d;
          if (b.needs_grad && d == z[k]) grads_[b.offset + k] -= g[k] * x[k] / (d * d);
        }
        break;
      }
      case Op::Neg: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        for (std::size_t k = 0; k < m; ++k) ga[k] -= g[k];
        break;
      }
      case Op::Exp: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* y = val(n);
        for (std::size_t k = 0; k < m; ++k) ga[k] += g[k] * y[k];
        break;
      }
      case Op::Log: {
        const Node& a = nodes_[n.a];
        double* ga = grads_.data() + a.offset;
        const double* x = val(a);
        for (std::size_t k = 0; k < m; ++k) {
          if (x[k] >= kGuard) ga[k] += g[k] / x[k];
        }
        break;
      }
      case Op::Relu: {
        const Node& a = nodes_[n.a];
        double* ga = grads_.data() + a.offset;
        const double* x = val(a);
        for (std::size_t k = 0; k < m; ++k) {
          if (x[k] > 0.0) ga[k] += g[k];
        }
        break;
      }
      case Op::ClampMin: {
        const Node& a = nodes_[n.a];
        double* ga = grads_.data() + a.offset;
        const double* x = val(a);
        for (std::size_t k = 0; k < m; ++k) {
          if (x[k] > n.c) ga[k] += g[k];
        }
        break;
      }
      case Op::Softplus: {
        const Node& a = nodes_[n.a];
        double* ga = grads_.data() + a.offset;
        const double* x = val(a);
        for (std::size_t k = 0; k < m; ++k) ga[k] += g[k] * sigmoid_of(x[k]);
        break;
      }
      case Op::Sigmoid: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* y = val(n);
        for (std::size_t k = 0; k < m; ++k) ga[k] += g[k] * y[k] * (1.0 - y[k]);
        break;
      }
      case Op::Sum: {
        const Node& a = nodes_[n.a];
        double* ga = grads_.data() + a.offset;
        for (std::size_t k = 0; k < a.size; ++k) ga[k] += g[0];
        break;
      }
      case Op::Dot: {
        const Node& a = nodes_[n.a];
        const Node& b = nodes_[n.b];
        const double* x = val(a);
        const double* z = val(b);
        if (a.needs_grad) {
          double* ga = grads_.data() + a.offset;
          for (std::size_t k = 0; k < a.size; ++k) ga[k] += g[0] * z[k];
        }
        if (b.needs_grad) {
          double* gb = grads_.data() + b.offset;
          for (std::size_t k = 0; k < b.size; ++k) gb[k] += g[0] * x[k];
        }
        break;
      }
      case Op::MatVec: {
        const Node& w = nodes_[n.a];
        const Node& x = nodes_[n.b];
        const std::size_t cols = n.aux_n;
        const double* wv = val(w);
        const double* xv = val(x);
        if (w.needs_grad) {
          double* gw = grads_.data() + w.offset;
          for (std::size_t r = 0; r < m; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            double* row = gw + r * cols;
            for (std::size_t c = 0; c < cols; ++c) row[c] += gr * xv[c];
          }
        }
        if (x.needs_grad) {
          double* gx = grads_.data() + x.offset;
          for (std::size_t r = 0; r < m; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            const double* row = wv + r * cols;
            for (std::size_t c = 0; c < cols; ++c) gx[c] += gr * row[c];
          }
        }
        break;
      }
      case Op::Concat: {
        std::size_t pos = 0;
        for (std::size_t k = 0; k < n.aux_n; ++k) {
          const Node& p = nodes_[aux_[n.aux + k]];
          if (p.needs_grad) {
            double* gp = grads_.data() + p.offset;
            for (std::size_t j = 0; j < p.size; ++j) gp[j] += g[pos + j];
          }
          pos += p.size;
        }
        break;
      }
      case Op::Scale: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        for (std::size_t k = 0; k < m; ++k) ga[k] += n.c * g[k];
        break;
      }
    }
  }
}

void Tape::collect_gradients(GradientRecord& out) const {
  if (!backward_done_) throw std::logic_error("tape: collect_gradients() before backward()");
  for (const Node& n : nodes_) {
    if (n.op == Op::Parameter) {
      out.blocks.push_back({n.tensor, 0, n.size, out.data.size()});
      out.data.insert(out.data.end(), grads_.begin() + static_cast<std::ptrdiff_t>(n.offset),
                      grads_.begin() + static_cast<std::ptrdiff_t>(n.offset + n.size));
    } else if (n.op == Op::Gather) {
      const double* g = grads_.data() + n.offset;
      for (std::size_t k = 0; k < n.aux_n; ++k) {
        const GatherTerm& t = terms_[n.aux + k];
        out.blocks.push_back({n.tensor, t.offset, n.size, out.data.size()});
        for (std::size_t i = 0; i < n.size; ++i) out.data.push_back(t.weight * g[i]);
      }
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  values_.clear();
  grads_.clear();
  aux_.clear();
  terms_.clear();
  std::fill(param_cache_.begin(), param_cache_.end(), kNone);
  backward_done_ = false;
}

}  // namespace mspnf::ad
