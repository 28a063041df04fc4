#include "cemb/pipeline/optimizer.hpp"

#include <cmath>
#include <string>

#include "cemb/errors.hpp"

namespace cemb::pipeline {

template <typename T>
void optimizer_step(const std::vector<Tensor<T>*>& params, const std::vector<std::span<const T>>& grads,
                    AdamState<T>& state, double lr, double weight_decay) {
  if (params.size() != grads.size()) {
    throw ContractError("optimizer_step: " + std::to_string(params.size()) + " params but " +
                        std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty() && state.v.empty() && state.step == 0) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->numel(), T(0));
      state.v[i].assign(params[i]->numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("optimizer_step: state holds " + std::to_string(state.m.size()) + " moment buffers for " +
                        std::to_string(params.size()) + " params");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i]->numel();
    if (!grads[i].empty() && grads[i].size() != n) {
      throw ContractError("optimizer_step: grad " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                          " values, param has " + std::to_string(n));
    }
    if (state.m[i].size() != n || state.v[i].size() != n) {
      throw ContractError("optimizer_step: moment buffer " + std::to_string(i) + " does not match its param");
    }
  }

  state.step += 1;
  const double t = double(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = grads[i].empty() ? 0.0 : double(grads[i][k]);
      const double mk = kAdamBeta1 * double(m[k]) + (1.0 - kAdamBeta1) * g;
      const double vk = kAdamBeta2 * double(v[k]) + (1.0 - kAdamBeta2) * g * g;
      m[k] = T(mk);
      v[k] = T(vk);
      const double m_hat = mk / c1;
      const double v_hat = vk / c2;
      const double pk = double(p[k]);
      p[k] = T(pk - lr * (m_hat / (std::sqrt(v_hat) + kAdamEps) + weight_decay * pk));
    }
  }
}

template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>*>& params, double max_norm) {
  if (!(max_norm > 0)) throw ArgumentError("clip_grad_norm: max_norm must be positive");
  double sq = 0;
  for (auto* p : params) {
    for (T g : p->grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params) {
      if (!p->has_grad()) continue;
      for (T& g : p->mutable_grad()) g = T(double(g) * s);
    }
  }
  return norm;
}

template void optimizer_step<float>(const std::vector<Tensor<float>*>&, const std::vector<std::span<const float>>&,
                                    AdamState<float>&, double, double);
template void optimizer_step<double>(const std::vector<Tensor<double>*>&,
                                     const std::vector<std::span<const double>>&, AdamState<double>&, double,
                                     double);
template double clip_grad_norm<float>(const std::vector<Tensor<float>*>&, double);
template double clip_grad_norm<double>(const std::vector<Tensor<double>*>&, double);

}  // namespace cemb::pipeline
