#pragma once
// Dense tensors and the reverse-mode tape that records operations on them.
//
// A Tensor is a reference-counted handle: copies share storage, which is how
// the tape's backward closures reach the tensors they were recorded against.
// Scalars have shape {} (numel 1).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ion {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  // Turning gradients off releases any grad buffer.
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  // Shallow const: the grad buffer belongs to the shared storage, and
  // backward rules write into it through const handles.
  std::span<T> grad() const { return impl_->grad; }
  // Allocates a zero grad buffer if none exists. Throws for tensors that do
  // not require gradients.
  std::span<T> ensure_grad();
  void zero_grad();

  // Deep copy of the values; the copy does not require gradients.
  Tensor clone() const;
  Tensor reshaped(Shape shape) const;  // deep copy under a new shape
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Ordered record of differentiable operations. Entries are appended in
// execution order, so reverse iteration is a valid topological order.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
  // Intermediate grads are reset on each call; leaf grads accumulate across
  // calls until the caller zeroes them.
  void backward(Tensor<T>& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  std::size_t backward_passes() const { return backward_passes_; }
  std::vector<std::string> op_names() const;

  // Test hook: gradient contributions of every `op` entry are multiplied by
  // `factor`. Used as a negative control for gradient checking.
  void corrupt(std::string op, T factor) {
    corrupt_op_ = std::move(op);
    corrupt_factor_ = factor;
  }

 private:
  struct Entry {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  std::size_t backward_passes_ = 0;
  std::string corrupt_op_;
  T corrupt_factor_ = T(1);
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ion
