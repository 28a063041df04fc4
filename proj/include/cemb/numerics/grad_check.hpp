#ifndef CEMB_NUMERICS_GRAD_CHECK_HPP_
#define CEMB_NUMERICS_GRAD_CHECK_HPP_

#include <cstddef>
#include <functional>

#include "cemb/numerics/tensor.hpp"

namespace cemb::numerics {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

// Compares the reverse-mode gradient of a scalar function with central
// differences (f(x + h e_i) - f(x - h e_i)) / 2h, coordinate by coordinate.
// Error per coordinate is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
//
// f is called with a leaf that requires grad; it must return a one-element
// tensor (ContractError otherwise). When max_coordinates is nonzero and smaller
// than x.numel(), an evenly strided subset of coordinates is checked.
GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double h = 1e-5,
                           std::size_t max_coordinates = 0);

}  // namespace cemb::numerics

#endif  // CEMB_NUMERICS_GRAD_CHECK_HPP_
