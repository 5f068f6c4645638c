#include "gridbayes/adam.hpp"

#include <cmath>

#include "gridbayes/error.hpp"

namespace gridbayes {

template <typename T>
AdamState<T> make_adam_state(const std::vector<ParamRef<T>>& params,
                             AdamHyper hyper) {
  AdamState<T> state;
  state.hyper = hyper;
  for (const ParamRef<T>& p : params) {
    state.first_moment.emplace_back(p.tensor->shape(), T(0));
    state.second_moment.emplace_back(p.tensor->shape(), T(0));
  }
  return state;
}

template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params,
               const std::vector<const Tensor<T>*>& grads, AdamState<T>& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ConfigError("adam_step: " + std::to_string(params.size()) +
                      " parameters, " + std::to_string(grads.size()) +
                      " gradients, " + std::to_string(state.first_moment.size()) +
                      " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->shape() != params[i].tensor->shape() ||
        state.first_moment[i].shape() != params[i].tensor->shape()) {
      throw ConfigError("adam_step: shape mismatch for parameter " + params[i].name);
    }
    if (!grads[i]->all_finite()) {
      throw NumericError("adam_step: non-finite gradient for parameter " + params[i].name);
    }
  }

  ++state.step;
  const AdamHyper& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const T bc1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T lr = static_cast<T>(h.lr), eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].tensor;
    const Tensor<T>& g = *grads[i];
    Tensor<T>& m = state.first_moment[i];
    Tensor<T>& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T m_hat = m[j] / bc1;
      const T v_hat = v[j] / bc2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template AdamState<float> make_adam_state(const std::vector<ParamRef<float>>&, AdamHyper);
template AdamState<double> make_adam_state(const std::vector<ParamRef<double>>&, AdamHyper);
template void adam_step(const std::vector<ParamRef<float>>&,
                        const std::vector<const Tensor<float>*>&, AdamState<float>&);
template void adam_step(const std::vector<ParamRef<double>>&,
                        const std::vector<const Tensor<double>*>&, AdamState<double>&);

}  // namespace gridbayes
