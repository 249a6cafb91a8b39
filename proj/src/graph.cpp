#include "parsec/graph.hpp"

#include <stdexcept>
#include <utility>

namespace parsec {

Graph::~Graph() {
  if (meter_ != nullptr) meter_->release(metered_);
}

void Graph::meter_allocate(std::int64_t n) {
  metered_ += n;
  if (meter_ != nullptr) meter_->allocate(n);
}

NodeId Graph::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  meter_allocate(node.value.numel());
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::record(Tensor value, std::vector<NodeId> inputs, BackwardFn fn, bool op_output) {
  Node node;
  node.value = std::move(value);
  node.inputs = std::move(inputs);
  for (NodeId in : node.inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size())
      throw std::invalid_argument("record: input node id " + std::to_string(in) + " out of range");
    if (nodes_[static_cast<std::size_t>(in)].requires_grad) node.requires_grad = true;
  }
  if (node.requires_grad) node.backward_fn = std::move(fn);
  meter_allocate(node.value.numel());
  if (op_output && meter_ != nullptr) meter_->op_output_elements += node.value.numel();
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Tensor& Graph::grad(NodeId id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.data.size() == 0) {
    node.grad = Tensor::zeros(node.value.shape);
    meter_allocate(node.grad.numel());
  }
  return node.grad;
}

void Graph::accumulate_grad(NodeId id, const Eigen::ArrayXd& g) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.requires_grad) return;
  if (g.size() != node.value.data.size())
    throw std::invalid_argument("accumulate_grad: gradient size " + std::to_string(g.size()) +
                                " does not match value size " + std::to_string(node.value.data.size()));
  grad(id).data += g;
}

void Graph::backward(NodeId loss) {
  if (loss < 0 || static_cast<std::size_t>(loss) >= nodes_.size())
    throw std::invalid_argument("backward: node id out of range");
  if (nodes_[static_cast<std::size_t>(loss)].value.numel() != 1)
    throw std::invalid_argument("backward requires a scalar node, got shape " +
                                shape_string(nodes_[static_cast<std::size_t>(loss)].value.shape));
  if (!nodes_[static_cast<std::size_t>(loss)].requires_grad)
    throw std::invalid_argument("backward: loss does not depend on any differentiable leaf");
  grad(loss).data(0) += 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad || !node.backward_fn) continue;
    if (node.grad.data.size() == 0) continue;  // not on any path to the loss
    node.backward_fn(*this, id);
  }
}

}  // namespace parsec
