#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iadc {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a forward op produces NaN/Inf; the message names the op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  bool leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

/// Shared handle to a dense array of up to 4 axes (conventionally B×C×H×W).
///
/// Copies alias the same storage. Values are treated as immutable once an op
/// has consumed them; only gradients accumulate in place.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  const T* ptr() const { return impl_->data.data(); }
  T* mutable_ptr() { return impl_->data.data(); }
  T item() const;

  // Row-major 4-axis accessor; missing leading axes are treated as extent 1.
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value = true);
  bool is_leaf() const { return impl_->leaf; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy of values only; the result is a fresh leaf.
  Tensor clone() const;

  const std::shared_ptr<TensorStorage<T>>& storage() const { return impl_; }

  static Tensor from_storage(std::shared_ptr<TensorStorage<T>> s) {
    Tensor t;
    t.impl_ = std::move(s);
    return t;
  }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& src) {
  std::vector<U> out(src.size());
  auto in = src.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(in[i]);
  return Tensor<U>(src.shape(), std::move(out));
}

/// Ordered record of differentiable ops executed while the tape is active.
///
/// Ops record themselves on the tape installed for the current thread by a
/// TapeScope. backward() replays the record in reverse and then clears it.
template <typename T>
class GradTape {
 public:
  struct Entry {
    std::string op;
    std::shared_ptr<TensorStorage<T>> output;
    std::function<void()> backward;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::string op, std::shared_ptr<TensorStorage<T>> output,
              std::function<void()> backward);

  void backward(const Tensor<T>& loss);

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  static GradTape* active();
  static GradTape*& active_slot();

 private:
  std::vector<Entry> entries_;
};

/// Installs a tape as the current thread's recording target.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradTape<T>& tape) : previous_(GradTape<T>::active_slot()) {
    GradTape<T>::active_slot() = &tape;
  }
  ~TapeScope() { GradTape<T>::active_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<T>* previous_;
};

/// Suspends recording for the current thread (inference, oracle evaluation).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(GradTape<T>::active_slot()) { GradTape<T>::active_slot() = nullptr; }
  ~NoGradScope() { GradTape<T>::active_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape<T>* previous_;
};

template <typename T>
void backward(GradTape<T>& tape, const Tensor<T>& loss) {
  tape.backward(loss);
}

}  // namespace iadc
