// SPDX-License-Identifier: Apache-2.0
#include "vim/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <numeric>

#include "vim/error.hpp"

namespace vim {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
std::span<T> TensorStorage<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return {grad.data(), grad.size()};
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : impl_(std::make_shared<TensorStorage<T>>()) {
  impl_->data.assign(shape_numel(shape), T(0));
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::span<const T> values) : impl_(std::make_shared<TensorStorage<T>>()) {
  require(shape_numel(shape) == values.size(), ErrorKind::ShapeMismatch,
          "shape " + shape_string(shape) + " holds " + std::to_string(shape_numel(shape)) + " values, got " +
              std::to_string(values.size()));
  impl_->data.assign(values.begin(), values.end());
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::initializer_list<T> values)
    : Tensor(std::move(shape), std::span<const T>(values.begin(), values.size())) {}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, ErrorKind::ShapeMismatch, "item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() {
  if (impl_) Buffer<T>().swap(impl_->grad);
}

template <typename T>
std::optional<std::int64_t> Tensor<T>::tape_id() const {
  if (!impl_ || impl_->tape_id < 0) return std::nullopt;
  return impl_->tape_id;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, data());
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto s = std::make_shared<TensorStorage<T>>();
  s->shape = impl_->shape;
  s->data = impl_->data;
  return from_storage(std::move(s));
}

template <typename T>
Tensor<T> Tensor<T>::from_storage(std::shared_ptr<TensorStorage<T>> s) {
  Tensor t;
  t.impl_ = std::move(s);
  return t;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

template struct TensorStorage<float>;
template struct TensorStorage<double>;
template class Tensor<float>;
template class Tensor<double>;
template bool bit_equal(const Tensor<float>&, const Tensor<float>&);
template bool bit_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace vim
