#pragma once

#include <span>
#include <vector>

#include "betoken/errors.hpp"
#include "betoken/tensor.hpp"

namespace betoken::training {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with bias correction and decoupled weight decay. One instance owns
// the moment state for a fixed list of parameter tensors.
template <typename T>
class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<numcore::Tensor<T>*> params) : cfg_(cfg), params_(std::move(params)) {
    for (auto* p : params_) {
      m_.emplace_back(p->shape);
      v_.emplace_back(p->shape);
    }
  }

  // grads[i] pairs with params_[i]; lr_scale supports schedules.
  void step(std::span<const numcore::Tensor<T>* const> grads, double lr_scale = 1.0);

  int steps_done() const { return t_; }
  const numcore::Tensor<T>& first_moment(size_t i) const { return m_.at(i); }
  const numcore::Tensor<T>& second_moment(size_t i) const { return v_.at(i); }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<numcore::Tensor<T>*> params_;
  std::vector<numcore::Tensor<T>> m_, v_;
  int t_ = 0;
};

using AdamWF = AdamW<float>;

}  // namespace betoken::training
