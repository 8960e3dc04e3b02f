#include "ion/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace ion {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  for (std::size_t d : shape)
    if (d == 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  for (std::size_t d : shape)
    if (d == 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("tensor shape " + shape_str(shape) + " needs " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size())
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_str(impl_->shape));
  return impl_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() {
  if (!impl_->requires_grad)
    throw std::logic_error("ensure_grad on a tensor that does not require gradients");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), impl_->data);
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T> output,
                     BackwardFn backward) {
  entries_.push_back(Entry{std::string(op), std::move(inputs), std::move(output),
                           std::move(backward)});
}

template <typename T>
void Tape<T>::backward(Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward needs a scalar loss, got shape " +
                                shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss does not depend on any tensor requiring grad");
  ++backward_passes_;

  for (auto& e : entries_) {
    e.output.ensure_grad();
    e.output.zero_grad();
  }
  for (auto& e : entries_)
    for (auto& in : e.inputs)
      if (in.defined() && in.requires_grad()) in.ensure_grad();
  loss.ensure_grad()[0] += T(1);

  std::vector<std::vector<T>> snapshot;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const bool corrupt = !corrupt_op_.empty() && it->op == corrupt_op_;
    if (corrupt) {
      snapshot.clear();
      for (auto& in : it->inputs)
        snapshot.emplace_back(in.defined() && in.has_grad() ? std::vector<T>(in.grad().begin(), in.grad().end())
                                            : std::vector<T>{});
    }
    it->backward();
    if (corrupt) {
      for (std::size_t i = 0; i < it->inputs.size(); ++i) {
        auto& in = it->inputs[i];
        if (snapshot[i].empty()) continue;
        auto g = in.grad();
        for (std::size_t j = 0; j < g.size(); ++j)
          g[j] = snapshot[i][j] + corrupt_factor_ * (g[j] - snapshot[i][j]);
      }
    }
  }
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace ion
