#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "parsec/tensor.hpp"

namespace parsec {

/// Tracks simultaneously-live tape memory (node values and gradients) in
/// elements. One meter may be shared by many graphs; a graph subtracts its
/// contribution when destroyed, so sequential child evaluations that release
/// each graph keep `current` flat and `peak` equal to the single-child budget.
struct ActivationMeter {
  std::int64_t current = 0;
  std::int64_t peak = 0;
  // elements of primitive-operation outputs materialized during forward passes
  std::int64_t op_output_elements = 0;

  void allocate(std::int64_t n) {
    current += n;
    if (current > peak) peak = current;
  }
  void release(std::int64_t n) { current -= n; }
};

using NodeId = int;

/// Reverse-mode tape. Nodes are recorded in execution order; that order is the
/// topological order used by backward(). Single-threaded per graph.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  explicit Graph(ActivationMeter* meter = nullptr) : meter_(meter) {}
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  NodeId leaf(Tensor value, bool requires_grad = false);
  NodeId parameter(Tensor value) { return leaf(std::move(value), true); }

  /// Records an op output. `fn` propagates grad(self) into the input grads.
  /// `op_output` marks the node as a primitive-op result for the meter.
  NodeId record(Tensor value, std::vector<NodeId> inputs, BackwardFn fn, bool op_output = false);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].inputs; }

  /// Gradient accumulator; allocates a zero buffer on first access.
  Tensor& grad(NodeId id);
  bool has_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].grad.data.size() > 0; }

  /// Accumulates `g` into grad(id) if the node requires grad; no-op otherwise.
  void accumulate_grad(NodeId id, const Eigen::ArrayXd& g);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse recording order.
  /// Each node's backward runs exactly once. Errors if the loss is not scalar.
  void backward(NodeId loss);

  std::size_t size() const { return nodes_.size(); }
  ActivationMeter* meter() const { return meter_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched
    std::vector<NodeId> inputs;
    BackwardFn backward_fn;
    bool requires_grad = false;
  };

  void meter_allocate(std::int64_t n);

  std::vector<Node> nodes_;
  ActivationMeter* meter_ = nullptr;
  std::int64_t metered_ = 0;
};

}  // namespace parsec
