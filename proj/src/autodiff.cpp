#include "spikewright/autodiff.hpp"

#include <algorithm>

#include "spikewright/error.hpp"

namespace spikewright::ad {

Variable::Variable(Tensor value, bool requires_grad)
    : slot_(std::make_shared<Slot>(Slot{std::move(value), Tensor{}, requires_grad})) {}

void Variable::accumulate_grad(const Tensor& g) const {
  if (g.shape() != slot_->value.shape()) {
    throw ShapeError("gradient shape " + shape_to_string(g.shape()) +
                     " does not match value shape " + shape_to_string(slot_->value.shape()));
  }
  if (slot_->grad.empty()) {
    slot_->grad = g;
  } else {
    slot_->grad.add_(g);
  }
}

void Variable::zero_grad() const {
  if (!slot_) return;
  slot_->grad = Tensor::zeros(slot_->value.shape());
}

Variable Tape::record(std::string op, std::vector<Variable> inputs, Tensor output,
                      BackwardFn backward) {
  const bool needs_grad =
      recording_ && std::any_of(inputs.begin(), inputs.end(),
                                [](const Variable& v) { return v.requires_grad(); });
  Variable out(std::move(output), needs_grad);
  if (needs_grad) {
    nodes_.push_back(TapeNode{std::move(op), std::move(inputs), out, std::move(backward)});
  }
  return out;
}

void Tape::backward(const Variable& loss) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw ShapeError("backward() expects a scalar loss");
  }
  for (TapeNode& node : nodes_) {
    node.output.zero_grad();
    for (Variable& in : node.inputs) {
      if (in.requires_grad()) in.zero_grad();
    }
  }
  if (!loss.requires_grad()) return;
  loss.zero_grad();
  loss.accumulate_grad(Tensor(loss.shape(), 1.0f));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward(it->output.grad());
  }
}

}  // namespace spikewright::ad
