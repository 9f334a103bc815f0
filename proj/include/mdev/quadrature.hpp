#pragma once

#include <functional>
#include <vector>

#include "mdev/matrix.hpp"

namespace mdev {

/// Composite Simpson over tabulated values on a uniform grid (odd or even
/// point count; a trapezoid cell is used for the final interval when needed).
double simpson_tabulated(const Vec& values, double step);

/// Adaptive Simpson with absolute tolerance and recursion cap.
double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                          double abs_tol, int max_depth = 40);

/// Gauss-Hermite rule for expectations against a standard normal:
/// E f(Z) ~ sum w_i f(x_i), weights summing to one. Computed by Golub-Welsch
/// on the Hermite Jacobi matrix and cached per order.
struct GaussHermite {
    Vec nodes;
    Vec weights;
};
const GaussHermite& gauss_hermite(std::size_t order);

/// Upper tail P(Z > z) of a standard normal.
double normal_upper_tail(double z);
/// log(2 P(Z > z)), switching to the asymptotic expansion for large z.
double log_two_sided_tail(double z);

}  // namespace mdev
