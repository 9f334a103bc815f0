#include "mdev/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace mdev {

double simpson_tabulated(const Vec& values, double step) {
    const std::size_t n = values.size();
    if (n < 2 || !(step > 0.0)) throw std::invalid_argument("simpson_tabulated: bad grid");
    double sum = 0.0;
    std::size_t i = 0;
    while (i + 2 < n) {
        sum += (step / 3.0) * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
        i += 2;
    }
    if (i + 1 < n)  // leftover single interval
        sum += 0.5 * step * (values[i] + values[i + 1]);
    return sum;
}

namespace {

double adaptive_step(const std::function<double(double)>& f, double a, double b, double fa,
                     double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                          double abs_tol, int max_depth) {
    if (a == b) return 0.0;
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_step(f, a, b, fa, fm, fb, whole, abs_tol, max_depth);
}

const GaussHermite& gauss_hermite(std::size_t order) {
    if (order < 1 || order > 256) throw std::invalid_argument("gauss_hermite: order out of range");
    static std::map<std::size_t, GaussHermite> cache;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;

    // Jacobi matrix of the probabilists' Hermite polynomials: zero diagonal,
    // off-diagonal sqrt(k). Nodes are its eigenvalues, weights the squared
    // first components of the eigenvectors.
    Matrix j(order, order);
    for (std::size_t k = 1; k < order; ++k) {
        j(k - 1, k) = std::sqrt(static_cast<double>(k));
        j(k, k - 1) = j(k - 1, k);
    }
    const SymmetricEigen eig = symmetric_eigen(j);
    GaussHermite rule;
    rule.nodes = eig.values;
    rule.weights.resize(order);
    for (std::size_t k = 0; k < order; ++k)
        rule.weights[k] = eig.vectors(0, k) * eig.vectors(0, k);
    return cache.emplace(order, std::move(rule)).first->second;
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

double log_two_sided_tail(double z) {
    if (z <= 0.0) return std::log(2.0 * normal_upper_tail(z));
    if (z < 25.0) return std::log(std::erfc(z / std::numbers::sqrt2));
    // log(2 Phi-bar(z)) = -z^2/2 - log(z) - 0.5 log(pi/2) + log1p(-1/z^2 + 3/z^4 - ...)
    const double z2 = z * z;
    return -0.5 * z2 - std::log(z) - 0.5 * std::log(std::numbers::pi / 2.0) +
           std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

}  // namespace mdev
