// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over small dense vectors.
//
// A Tape records one forward evaluation. Every node holds a vector of doubles;
// shapes never broadcast, so mismatched operands throw at construction. After
// backward() on a scalar root, gradients of parameter tensors are exported as
// sparse blocks (collect_gradients) and reduced by the caller in a fixed order.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace mspnf::ad {

/// Lower bound applied to |denominator| in div and to the argument of log.
inline constexpr double kGuard = 1e-12;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

/// Read-only view of a trainable tensor; `id` identifies it in gradient output.
struct TensorRef {
  std::uint32_t id = 0;
  std::span<const double> values;
};

/// out[i] += weight * tensor[offset + i]
struct GatherTerm {
  std::size_t offset = 0;
  double weight = 1.0;
};

/// Gradient of one tape w.r.t. tensor elements [offset, offset + length).
struct GradientBlock {
  std::uint32_t tensor = 0;
  std::size_t offset = 0;
  std::size_t length = 0;
  std::size_t data = 0;  // start in GradientRecord::data
};

struct GradientRecord {
  std::vector<GradientBlock> blocks;
  std::vector<double> data;

  void clear() {
    blocks.clear();
    data.clear();
  }
};

class Tape {
 public:
  Tape() = default;

  Var constant(std::span<const double> values);
  Var constant(std::initializer_list<double> values);
  Var constant(double value);
  /// Leaf reading a whole tensor; repeated calls for the same tensor id reuse the node.
  Var parameter(const TensorRef& tensor);
  /// Indexed read: out = sum_k terms[k].weight * tensor[terms[k].offset .. + width).
  Var gather(const TensorRef& tensor, std::span<const GatherTerm> terms, std::size_t width);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  /// a / b with |b| clamped to >= kGuard (no gradient flows to b while clamped).
  Var div(Var a, Var b);
  Var neg(Var a);
  Var exp(Var a);
  /// log(max(a, kGuard)); gradient 0 where clamped.
  Var log(Var a);
  Var relu(Var a);
  Var softplus(Var a);
  Var sigmoid(Var a);
  Var sum(Var a);
  Var dot(Var a, Var b);
  /// Row-major matrix (rows x cols) times vector (cols).
  Var matvec(Var matrix, Var x, std::size_t rows, std::size_t cols);
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts);
  Var scale(Var a, double factor);
  Var clamp_min(Var a, double lo);

  std::size_t size(Var v) const;
  std::span<const double> value(Var v) const;
  double scalar(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse accumulation from a scalar root. A tape can be differentiated once.
  void backward(Var root);
  /// Gradient of the root w.r.t. `v` (valid after backward()). Nodes that do not
  /// depend on any parameter report zeros.
  std::span<const double> grad(Var v) const;
  /// Appends this tape's parameter gradients in node order.
  void collect_gradients(GradientRecord& out) const;

  /// Clears all nodes, keeping allocated capacity.
  void reset();

 private:
  enum class Op : std::uint8_t {
    Constant, Parameter, Gather, Add, Sub, Mul, Div, Neg, Exp, Log, Relu, Softplus, Sigmoid,
    Sum, Dot, MatVec, Concat, Scale, ClampMin
  };

  struct Node {
    Op op = Op::Constant;
    bool needs_grad = false;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::uint32_t size = 0;
    std::size_t offset = 0;  // value (and gradient) slot in the arena
    std::size_t aux = 0;     // start in aux_ / terms_
    std::size_t aux_n = 0;
    double c = 0.0;
    const double* external = nullptr;
    std::uint32_t tensor = 0;
  };

  Var push(Node node, bool needs_grad);
  const Node& node(Var v) const;
  const double* val(const Node& n) const { return n.external ? n.external : values_.data() + n.offset; }
  double* out(const Node& n) { return values_.data() + n.offset; }
  Var unary(Op op, Var a);
  Var binary(Op op, Var a, Var b);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<std::uint32_t> aux_;
  std::vector<GatherTerm> terms_;
  std::vector<std::uint32_t> param_cache_;
  bool backward_done_ = false;
};

}  // namespace mspnf::ad
