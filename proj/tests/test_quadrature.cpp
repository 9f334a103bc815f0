#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mdev/quadrature.hpp"

using namespace mdev;

TEST_SUITE_BEGIN("quadrature");

TEST_CASE("simpson on tabulated grids") {
    const std::size_t n = 2001;
    const double a = 0.0, b = std::numbers::pi;
    const double h = (b - a) / static_cast<double>(n - 1);
    Vec f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = std::sin(a + h * static_cast<double>(i));
    CHECK(simpson_tabulated(f, h) == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("adaptive simpson handles kinks") {
    const double smooth = integrate_adaptive([](double x) { return std::exp(-x * x); },
                                             -8.0, 8.0, 1e-12);
    CHECK(smooth == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-11));

    // |x| has a kink at 0; adaptive refinement must localize it
    const double kink = integrate_adaptive([](double x) { return std::abs(x); }, -1.0, 2.0, 1e-10);
    CHECK(kink == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("gauss-hermite integrates normal moments exactly") {
    for (std::size_t order : {16u, 64u}) {
        const auto& rule = gauss_hermite(order);
        double w = 0.0, m2 = 0.0, m4 = 0.0, cosx = 0.0;
        for (std::size_t i = 0; i < order; ++i) {
            w += rule.weights[i];
            m2 += rule.weights[i] * rule.nodes[i] * rule.nodes[i];
            m4 += rule.weights[i] * std::pow(rule.nodes[i], 4);
            cosx += rule.weights[i] * std::cos(rule.nodes[i]);
        }
        CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m4 == doctest::Approx(3.0).epsilon(1e-11));
        CHECK(cosx == doctest::Approx(std::exp(-0.5)).epsilon(1e-10));
    }
}

TEST_CASE("normal tails") {
    CHECK(normal_upper_tail(0.0) == doctest::Approx(0.5));
    CHECK(normal_upper_tail(1.959963984540054) == doctest::Approx(0.025).epsilon(1e-9));
    CHECK(log_two_sided_tail(1.0) == doctest::Approx(std::log(2.0 * normal_upper_tail(1.0))));
    // asymptotic branch continuity
    CHECK(log_two_sided_tail(25.0 + 1e-9) == doctest::Approx(log_two_sided_tail(25.0 - 1e-9)).epsilon(1e-6));
}

TEST_SUITE_END();
