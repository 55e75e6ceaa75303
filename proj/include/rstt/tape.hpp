#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rstt/tensor.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// Reverse-mode tape.  Differentiable ops append one node per execution while
// a tape is active (TapeScope installs it), in execution order, which is a
// topological order of the data flow.  backward() seeds the scalar loss with
// grad 1 and replays the nodes once, in reverse; fan-out sums naturally
// because closures accumulate with += into shared gradient slots.
//
// Single-writer by contract: one forward/backward pass owns a tape at a time.
// ---------------------------------------------------------------------------

template <typename S>
class Tape {
 public:
  struct Node {
    std::string op;
    std::function<void()> backward;
  };

  void record(std::string op, std::function<void()> fn) {
    nodes_.push_back(Node{std::move(op), std::move(fn)});
  }

  Index size() const { return static_cast<Index>(nodes_.size()); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  const std::string& op_name(Index i) const { return nodes_[static_cast<std::size_t>(i)].op; }

  /// Visits each recorded node exactly once, newest first.
  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<Node> nodes_;
};

template <typename S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& tape) : prev_(Tape<S>::active()) { Tape<S>::active() = &tape; }
  ~TapeScope() { Tape<S>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<S>* prev_;
};

/// Temporarily suspends recording (finite-difference probes, inference).
template <typename S>
class NoGradScope {
 public:
  NoGradScope() : prev_(Tape<S>::active()) { Tape<S>::active() = nullptr; }
  ~NoGradScope() { Tape<S>::active() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<S>* prev_;
};

/// True when the next op execution should record a node for these inputs.
template <typename S>
inline bool recording(bool any_input_requires_grad) {
  return any_input_requires_grad && Tape<S>::active() != nullptr;
}

/// Marks the output differentiable and hands back the active tape.  Used as
/// node_tape(out).record(op, [out, ...] {...}) so the grad slot exists before
/// the closure captures the output handle (the object expression of a member
/// call is sequenced before its arguments).
template <typename S>
Tape<S>& node_tape(Tensor<S>& out) {
  out.set_requires_grad(true);
  return *Tape<S>::active();
}

/// Reverse accumulation from a scalar loss through every recorded node.
template <typename S>
void backward(Tensor<S>& loss, Tape<S>& tape) {
  check_dims(loss.is_scalar(), "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  check_dims(loss.requires_grad(), "backward: loss does not track gradients (no tape recorded it)");
  loss.grad()[0] += S(1);
  tape.run_backward();
}

}  // namespace rstt
