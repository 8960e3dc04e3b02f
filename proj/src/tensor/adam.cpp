#include "ion/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ion {

template <typename T>
Adam<T>::Adam(const std::vector<Tensor<T>>& params, AdamOptions options) : options_(options) {
  if (!(options.lr >= 0)) throw std::invalid_argument("adam: learning rate must be >= 0");
  if (!(options.l2 >= 0)) throw std::invalid_argument("adam: L2 coefficient must be >= 0");
  for (const auto& p : params) {
    if (!p.requires_grad()) continue;
    params_.push_back(p);
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    for (T g : params_[i].grad())
      if (!std::isfinite(g))
        throw std::runtime_error("adam: non-finite gradient in parameter " + std::to_string(i) +
                                 " of shape " + shape_str(params_[i].shape()));
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = options_.lr, l2 = options_.l2, eps = options_.eps;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    T* w = p.ptr();
    const T* g = p.has_grad() ? p.grad().data() : nullptr;
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double gj = (g ? static_cast<double>(g[j]) : 0.0) + l2 * static_cast<double>(w[j]);
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ion
