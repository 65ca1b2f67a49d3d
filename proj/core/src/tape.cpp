// SPDX-License-Identifier: Apache-2.0
#include "vim/tape.hpp"

#include <algorithm>

#include "vim/error.hpp"

namespace vim {

template <typename T>
GradientTape<T>*& active_tape_slot() {
  thread_local GradientTape<T>* slot = nullptr;
  return slot;
}

template <typename T>
std::vector<bool> GradientTape<T>::recompute_flags() const {
  std::vector<bool> flags;
  flags.reserve(nodes_.size());
  for (const auto& n : nodes_) flags.push_back(n.recompute);
  return flags;
}

template <typename T>
void GradientTape<T>::record(std::string op, std::vector<StoragePtr<T>> inputs, std::vector<StoragePtr<T>> outputs,
                             std::function<void()> backward, bool recompute) {
  TapeNode<T> node;
  node.id = static_cast<std::int64_t>(nodes_.size());
  for (auto& out : outputs) {
    out->requires_grad = true;
    out->tape_id = node.id;
  }
  node.op = std::move(op);
  node.inputs = std::move(inputs);
  node.outputs = std::move(outputs);
  node.backward = std::move(backward);
  node.recompute = recompute;
  nodes_.push_back(std::move(node));
}

template <typename T>
void GradientTape<T>::backward(const Tensor<T>& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorKind::ShapeMismatch, "backward() needs a scalar loss");
  const auto id = loss.tape_id();
  const bool on_tape =
      id.has_value() && *id < static_cast<std::int64_t>(nodes_.size()) &&
      std::any_of(nodes_[*id].outputs.begin(), nodes_[*id].outputs.end(),
                  [&](const StoragePtr<T>& s) { return s == loss.storage(); });
  require(on_tape, ErrorKind::DetachedTensor, "loss was not produced on this tape");

  loss.storage()->grad_buffer()[0] += T(1);
  visit_order_.clear();
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const bool has_upstream = std::any_of(it->outputs.begin(), it->outputs.end(),
                                          [](const StoragePtr<T>& s) { return !s->grad.empty(); });
    if (!has_upstream) continue;
    visit_order_.push_back(it->id);
    it->backward();
  }
}

template <typename T>
void GradientTape<T>::clear() {
  nodes_.clear();
  visit_order_.clear();
}

template GradientTape<float>*& active_tape_slot<float>();
template GradientTape<double>*& active_tape_slot<double>();
template class GradientTape<float>;
template class GradientTape<double>;

}  // namespace vim
