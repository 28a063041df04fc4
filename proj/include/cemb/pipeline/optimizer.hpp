#ifndef CEMB_PIPELINE_OPTIMIZER_HPP_
#define CEMB_PIPELINE_OPTIMIZER_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "cemb/numerics/tensor.hpp"

namespace cemb::pipeline {

using numerics::Tensor;

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <typename T>
struct AdamState {
  std::size_t step = 0;
  // One moment buffer per parameter, empty until the first step.
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  bool operator==(const AdamState&) const = default;
};

// Adam with decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
// An empty gradient span counts as zero. Shape disagreements between params,
// grads and state throw ContractError.
template <typename T>
void optimizer_step(const std::vector<Tensor<T>*>& params, const std::vector<std::span<const T>>& grads,
                    AdamState<T>& state, double lr, double weight_decay);

// Scales every gradient so the global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>*>& params, double max_norm);

}  // namespace cemb::pipeline

#endif  // CEMB_PIPELINE_OPTIMIZER_HPP_
