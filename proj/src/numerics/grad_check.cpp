#include "cemb/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "cemb/errors.hpp"

namespace cemb::numerics {

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double h, std::size_t max_coordinates) {
  if (!(h > 0.0)) throw ArgumentError("grad_check: step must be positive");
  Tensor<double> leaf = Tensor<double>::from(x.shape(), {x.data().begin(), x.data().end()}, true);
  Tensor<double> y = f(leaf);
  if (!y.defined() || y.numel() != 1) {
    throw ContractError("grad_check: function must return a scalar");
  }
  y.backward();
  std::vector<double> analytic(x.numel(), 0.0);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

  const std::size_t n = x.numel();
  std::size_t stride = 1;
  if (max_coordinates != 0 && max_coordinates < n) stride = (n + max_coordinates - 1) / max_coordinates;

  GradCheckResult result;
  NoGradGuard no_grad;
  std::vector<double> base(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < n; i += stride) {
    auto probe = [&](double delta) {
      std::vector<double> values = base;
      values[i] += delta;
      return f(Tensor<double>::from(x.shape(), std::move(values))).item();
    };
    const double fd = (probe(h) - probe(-h)) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - fd) / std::max(1e-8, std::abs(analytic[i]) + std::abs(fd));
    if (result.coordinates_checked == 0 || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
    ++result.coordinates_checked;
  }
  return result;
}

}  // namespace cemb::numerics
