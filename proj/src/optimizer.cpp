#include "betoken/optimizer.hpp"

#include <cmath>
#include <string>

namespace betoken::training {

template <typename T>
void AdamW<T>::step(std::span<const numcore::Tensor<T>* const> grads, double lr_scale) {
  if (grads.size() != params_.size()) {
    throw InvalidArgumentError("adamw: expected " + std::to_string(params_.size()) +
                               " gradients, got " + std::to_string(grads.size()));
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i]->same_shape(*params_[i])) {
      throw InvalidArgumentError("adamw: gradient shape mismatch at parameter " + std::to_string(i));
    }
    if (!grads[i]->all_finite()) {
      throw NumericError("adamw: non-finite gradient at parameter " + std::to_string(i));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  const double lr = cfg_.lr * lr_scale;
  for (size_t i = 0; i < params_.size(); ++i) {
    numcore::Tensor<T>& w = *params_[i];
    const numcore::Tensor<T>& g = *grads[i];
    numcore::Tensor<T>& m = m_[i];
    numcore::Tensor<T>& v = v_[i];
    for (size_t j = 0; j < w.size(); ++j) {
      const double gj = g.data[j];
      const double mj = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * gj;
      const double vj = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * gj * gj;
      m.data[j] = static_cast<T>(mj);
      v.data[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      const double update = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w.data[j];
      w.data[j] = static_cast<T>(w.data[j] - lr * update);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace betoken::training
