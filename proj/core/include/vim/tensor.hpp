// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vim/alloc_stats.hpp"

namespace vim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until the first gradient accumulation
  bool requires_grad = false;
  std::int64_t tape_id = -1;

  // Lazily materializes a zero gradient buffer.
  std::span<T> grad_buffer();
};

// Dense row-major array. Copies alias the same storage; use clone() for a
// deep copy. Only initialization code and the optimizer write into data.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::span<const T> values);
  Tensor(Shape shape, std::initializer_list<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return full({}, value); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return {impl_->data.data(), impl_->data.size()}; }
  std::span<T> data_mut() { return {impl_->data.data(), impl_->data.size()}; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  T item() const;

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
  std::span<const T> grad() const { return {impl_->grad.data(), impl_->grad.size()}; }
  std::span<T> grad_mut() { return impl_->grad_buffer(); }
  void zero_grad();
  void clear_grad();

  std::optional<std::int64_t> tape_id() const;

  // Deep copy of the values; the copy is a fresh leaf with no gradient.
  Tensor clone() const;
  // Alias of the values cut loose from any tape.
  Tensor detach() const;

  const std::shared_ptr<TensorStorage<T>>& storage() const { return impl_; }
  static Tensor from_storage(std::shared_ptr<TensorStorage<T>> s);

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b);

extern template struct TensorStorage<float>;
extern template struct TensorStorage<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace vim
