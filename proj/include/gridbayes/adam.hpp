#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridbayes/tensor.hpp"

namespace gridbayes {

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Mutable view of one trainable tensor.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

// Zero moments shaped like each parameter.
template <typename T>
AdamState<T> make_adam_state(const std::vector<ParamRef<T>>& params,
                             AdamHyper hyper);

// One bias-corrected Adam update. grads[i] pairs with params[i]. Throws
// NumericError naming the parameter if any gradient is non-finite; in that
// case nothing is modified.
template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params,
               const std::vector<const Tensor<T>*>& grads, AdamState<T>& state);

}  // namespace gridbayes
