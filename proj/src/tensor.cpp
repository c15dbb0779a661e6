#include "iadc/tensor.hpp"

#include <sstream>

namespace iadc {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got shape " + shape_to_string(shape));
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor() : impl_(std::make_shared<TensorStorage<T>>()) {
  impl_->shape = Shape{1};
  impl_->data.assign(1, T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorStorage<T>>()) {
  validate_shape(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : impl_(std::make_shared<TensorStorage<T>>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size())
    throw ShapeError("shape " + shape_to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape()));
  return impl_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() needs a single element, shape is " + shape_to_string(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  std::size_t ext[4] = {1, 1, 1, 1};
  const auto& s = shape();
  for (std::size_t i = 0; i < s.size(); ++i) ext[4 - s.size() + i] = s[i];
  if (n >= ext[0] || c >= ext[1] || h >= ext[2] || w >= ext[3])
    throw ShapeError("index out of range for shape " + shape_to_string(s));
  return impl_->data[((n * ext[1] + c) * ext[2] + h) * ext[3] + w];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), impl_->data);
}

template <typename T>
GradTape<T>*& GradTape<T>::active_slot() {
  thread_local GradTape<T>* slot = nullptr;
  return slot;
}

template <typename T>
GradTape<T>* GradTape<T>::active() {
  return active_slot();
}

template <typename T>
void GradTape<T>::record(std::string op, std::shared_ptr<TensorStorage<T>> output,
                         std::function<void()> backward) {
  entries_.push_back(Entry{std::move(op), std::move(output), std::move(backward)});
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw TapeError("backward needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  if (entries_.empty()) throw TapeError("backward called on an empty tape");
  if (!loss.requires_grad() || loss.is_leaf())
    throw TapeError("loss was not produced by operations recorded on this tape");

  auto& root = *loss.storage();
  root.ensure_grad();
  root.grad[0] = T(1);

  while (!entries_.empty()) {
    Entry entry = std::move(entries_.back());
    entries_.pop_back();
    if (entry.output->grad.empty()) continue;  // not reachable from the loss
    entry.backward();
    // Intermediate gradients are consumed; release them as we go.
    if (!entry.output->leaf) std::vector<T>().swap(entry.output->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;

}  // namespace iadc
