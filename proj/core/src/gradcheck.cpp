#include "phantom/ndtensor/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <type_traits>

namespace phantom::nd {
namespace {

template <typename T>
T evaluate(const TapeFn<T>& f, const Tensor<T>& x) {
  Tape<T> tape;
  Tensor<T> xc = x;
  xc.set_requires_grad(false);
  const auto y = f(tape, tape.constant(std::move(xc)));
  if (y.value().size() != 1) {
    throw ShapeError("grad_check: function must be scalar-valued, got " + shape_str(y.shape()));
  }
  const T v = y.value()[0];
  if (!std::isfinite(v)) throw std::domain_error("grad_check: function value is not finite");
  return v;
}

template <typename T>
Tensor<T> autodiff_grad(const TapeFn<T>& f, const Tensor<T>& x) {
  Tape<T> tape;
  Tensor<T> xl = x;
  xl.set_requires_grad(true);
  const auto xv = tape.leaf(std::move(xl));
  const auto y = f(tape, xv);
  if (!std::isfinite(static_cast<double>(y.value().item()))) {
    throw std::domain_error("grad_check: function value is not finite");
  }
  tape.backward(y);
  return tape.grad(xv);
}

template <typename R>
double central(const TapeFn<R>& ref, Tensor<R>& probe, std::size_t i, R h) {
  const R orig = probe[i];
  probe[i] = orig + h;
  const R fp = evaluate(ref, probe);
  probe[i] = orig - h;
  const R fm = evaluate(ref, probe);
  probe[i] = orig;
  return (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * static_cast<double>(h));
}

template <typename T, typename R>
GradCheckResult compare(const Tensor<T>& analytic, const TapeFn<R>& ref, const Tensor<R>& x, R h, double eps,
                        DifferenceScheme scheme) {
  GradCheckResult r;
  Tensor<R> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double fd = central(ref, probe, i, h);
    if (scheme == DifferenceScheme::richardson) fd = (4.0 * central(ref, probe, i, h / R(2)) - fd) / 3.0;
    const double abs_err = std::abs(static_cast<double>(analytic[i]) - fd);
    const double rel = abs_err / (std::abs(fd) + eps);
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
  }
  return r;
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const TapeFn<T>& f, const Tensor<T>& x, T h, DifferenceScheme scheme) {
  const double eps = std::is_same_v<T, double> ? 1e-8 : 1e-3;
  return compare(autodiff_grad(f, x), f, x, h, eps, scheme);
}

GradCheckResult grad_check(const TapeFn<float>& f, const TapeFn<double>& reference, const Tensor<float>& x,
                           double h, DifferenceScheme scheme) {
  return compare(autodiff_grad(f, x), reference, x.cast<double>(), h, 1e-3, scheme);
}

template GradCheckResult grad_check(const TapeFn<float>&, const Tensor<float>&, float, DifferenceScheme);
template GradCheckResult grad_check(const TapeFn<double>&, const Tensor<double>&, double, DifferenceScheme);

}  // namespace phantom::nd
