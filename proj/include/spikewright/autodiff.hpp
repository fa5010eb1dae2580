#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spikewright/tensor.hpp"

namespace spikewright::ad {

/// Shared handle to a value slot and its gradient accumulator. Copies alias
/// the same slot, so a parameter held by a model and recorded on a tape is
/// one object.
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(slot_); }
  const Tensor& value() const { return slot_->value; }
  Tensor& mutable_value() { return slot_->value; }
  const Shape& shape() const { return slot_->value.shape(); }

  bool requires_grad() const { return slot_ && slot_->requires_grad; }
  void set_requires_grad(bool flag) { slot_->requires_grad = flag; }

  /// Empty until something accumulates into it.
  const Tensor& grad() const { return slot_->grad; }
  bool has_grad() const { return !slot_->grad.empty(); }
  void accumulate_grad(const Tensor& g) const;
  void zero_grad() const;

  bool same_slot(const Variable& other) const { return slot_ == other.slot_; }

 private:
  struct Slot {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Slot> slot_;
};

using BackwardFn = std::function<void(const Tensor& grad_output)>;

struct TapeNode {
  std::string op;
  std::vector<Variable> inputs;
  Variable output;
  BackwardFn backward;
};

/// Single-writer reverse-mode tape. Nodes are appended in forward execution
/// order and replayed in reverse by backward().
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }

  /// Wraps `output` in a Variable. When recording and any input requires a
  /// gradient the node is appended and the output requires a gradient too.
  Variable record(std::string op, std::vector<Variable> inputs, Tensor output,
                  BackwardFn backward);

  /// Zeroes every gradient accumulator reachable from the tape, seeds the
  /// scalar `loss` with 1 and propagates.
  void backward(const Variable& loss);

  std::span<const TapeNode> nodes() const noexcept { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  bool recording_;
  std::vector<TapeNode> nodes_;
};

}  // namespace spikewright::ad
