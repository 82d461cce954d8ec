#pragma once

#include <functional>

#include "phantom/ndtensor/tape.hpp"

namespace phantom::nd {

/// Scalar-valued function of one tensor, built fresh on the given tape.
template <typename T>
using TapeFn = std::function<Var<T>(Tape<T>&, const Var<T>& x)>;

enum class DifferenceScheme {
  /// (f(x+h) - f(x-h)) / 2h; truncation error ~ h^2 f''' / 6.
  central,
  /// Central differences at h and h/2 combined as (4 D(h/2) - D(h)) / 3,
  /// cancelling the h^2 term. Needed for 1e-6 relative agreement at h = 1e-3
  /// on curved primitives (GELU, layer norm).
  richardson,
};

struct GradCheckResult {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t worst_index = 0;
};

/// Compares the autodiff gradient of f at x against finite differences
/// with step h. Relative error per element is
/// |autodiff - fd| / (|fd| + eps), eps = 1e-8 (64-bit) or 1e-3 (32-bit),
/// so elements with a near-zero true gradient are judged absolutely.
/// Throws std::domain_error if f produces a non-finite value.
template <typename T>
GradCheckResult grad_check(const TapeFn<T>& f, const Tensor<T>& x, T h,
                           DifferenceScheme scheme = DifferenceScheme::richardson);

/// 32-bit autodiff checked against central differences of the same function
/// evaluated in 64-bit. Float round-off in a 32-bit difference quotient is
/// ~1e-7 * |f| / h, too coarse for a 1e-4 relative bound on its own.
GradCheckResult grad_check(const TapeFn<float>& f, const TapeFn<double>& reference, const Tensor<float>& x,
                           double h, DifferenceScheme scheme = DifferenceScheme::richardson);

}  // namespace phantom::nd
