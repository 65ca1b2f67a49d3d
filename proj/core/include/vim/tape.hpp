// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "vim/tensor.hpp"

namespace vim {

template <typename T>
using StoragePtr = std::shared_ptr<TensorStorage<T>>;

template <typename T>
struct TapeNode {
  std::int64_t id = -1;
  std::string op;
  std::vector<StoragePtr<T>> inputs;
  std::vector<StoragePtr<T>> outputs;
  // Reads the output gradients and accumulates into the inputs that
  // require grad.
  std::function<void()> backward;
  // True when the op dropped its large intermediates during forward and
  // regenerates them inside `backward`.
  bool recompute = false;
};

// Ordered record of the differentiable ops executed while the tape is
// active (see TapeScope). One node per high-level op.
template <typename T>
class GradientTape {
 public:
  GradientTape() = default;
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  // Policy consulted by ops that support recomputation when they record.
  void set_recompute(bool on) { recompute_ = on; }
  bool recompute() const { return recompute_; }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode<T>>& nodes() const { return nodes_; }
  std::vector<bool> recompute_flags() const;

  void record(std::string op, std::vector<StoragePtr<T>> inputs, std::vector<StoragePtr<T>> outputs,
              std::function<void()> backward, bool recompute = false);

  // Seeds d(loss)/d(loss) = 1 and replays the nodes in reverse order.
  void backward(const Tensor<T>& loss);

  // Node ids in the order the last backward() executed them.
  const std::vector<std::int64_t>& visit_order() const { return visit_order_; }

  void clear();

 private:
  std::vector<TapeNode<T>> nodes_;
  std::vector<std::int64_t> visit_order_;
  bool recompute_ = false;
};

template <typename T>
void backward(GradientTape<T>& tape, const Tensor<T>& loss) {
  tape.backward(loss);
}

template <typename T>
GradientTape<T>*& active_tape_slot();

template <typename T>
GradientTape<T>* active_tape() {
  return active_tape_slot<T>();
}

// Makes `tape` the recording target for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradientTape<T>& tape) : previous_(active_tape_slot<T>()) { active_tape_slot<T>() = &tape; }
  ~TapeScope() { active_tape_slot<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradientTape<T>* previous_;
};

// Suspends recording for the current thread.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(active_tape_slot<T>()) { active_tape_slot<T>() = nullptr; }
  ~NoGradScope() { active_tape_slot<T>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradientTape<T>* previous_;
};

// Returns the active tape when at least one input participates in
// differentiation, nullptr otherwise.
template <typename T>
GradientTape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  auto* tape = active_tape<T>();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs)
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  return nullptr;
}

extern template class GradientTape<float>;
extern template class GradientTape<double>;

}  // namespace vim
