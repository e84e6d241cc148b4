#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fgst/tensor.hpp"

namespace fgst {

// Reverse-mode tape. Every differentiable op records one node whose closure
// scatters the output gradient into the input gradients. Nodes are replayed
// strictly in reverse recording order, so each node runs exactly once per
// backward() call.
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<TensorPtr> inputs;
    TensorPtr output;
    std::function<void()> backward;
  };

  TensorPtr record(const char* op, std::vector<TensorPtr> inputs, TensorPtr output,
                   std::function<void()> backward) {
    output->tape = this;
    output->node_index = nodes_.size();
    nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
    return nodes_.back().output;
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Gradients of
  // tensors produced on this tape are reset first; leaf gradients are
  // allocated lazily for requires_grad leaves and accumulate across calls.
  void backward(const TensorPtr& loss) {
    if (loss->tape != this)
      throw std::invalid_argument("tape: loss tensor was not produced on this tape");
    if (loss->numel() != 1)
      throw std::invalid_argument("tape: loss must be scalar, got " + shape_str(loss->shape));

    for (auto& n : nodes_) n.output->grad.assign(n.output->numel(), 0.0);
    for (auto& n : nodes_)
      for (auto& in : n.inputs)
        if (in->requires_grad && in->tape == nullptr) in->ensure_grad();

    loss->grad[0] = 1.0;
    std::size_t last = loss->node_index;
    for (std::size_t i = last + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward) n.backward();
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

// True when `t` participates in gradient flow: either a trainable leaf or an
// intermediate produced by some tape.
inline bool needs_grad(const Tensor& t) { return t.requires_grad || t.tape != nullptr; }

inline bool grad_ready(const Tensor& t) { return t.grad.size() == t.data.size(); }

}  // namespace fgst
