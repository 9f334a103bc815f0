#include <cmath>

#include "doctest.h"
#include "mdev/corrector.hpp"
#include "mdev/quadrature.hpp"
#include "mdev/rng.hpp"

using namespace mdev;

namespace {

std::vector<Vec> probe_grid_1d(double lo, double hi, std::size_t n) {
    std::vector<Vec> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1)});
    return out;
}

DiffusionScenario with_observable(DiffusionScenario s, std::function<Vec(const Vec&)> h,
                                  std::size_t q) {
    s.observable = std::move(h);
    s.observable_dim = q;
    s.linear_observable.reset();
    s.observable_gamma.reset();
    s.known_corrector.reset();
    return s;
}

LinearPart ou_part() { return {Matrix(1, 1, {-1.0}), Matrix(1, 1, {1.0})}; }

}  // namespace

TEST_SUITE_BEGIN("corrector");

TEST_CASE("solve_poisson_1d: cubic scenario recovers the unit gradient") {
    const auto s = builtin_scenario("cubic");
    const auto p = invariant_density_1d(s, 16001);
    const auto u = solve_poisson_1d(s, p);
    for (double x = -3.0; x <= 3.0; x += 0.125)
        CHECK(u.gradient({x})(0, 0) == doctest::Approx(1.0).epsilon(1e-3));
    // U is x up to the mean-zero constant, and E[X] = 0 by symmetry
    CHECK(u.value({2.0})[0] == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("solve_poisson_1d: OU with H=x gives U=x, checked through the generator") {
    const auto s = builtin_scenario("ou-linear");
    const auto p = invariant_density_1d(s, 16001);
    const auto u = solve_poisson_1d(s, p);
    for (double x = -2.0; x <= 2.0; x += 0.25) {
        CHECK(u.value({x})[0] == doctest::Approx(x).epsilon(1e-5));
        CHECK(u.gradient({x})(0, 0) == doctest::Approx(1.0).epsilon(1e-5));
    }
    CHECK(generator_residual(s, u, probe_grid_1d(-2.5, 2.5, 41)) <= 1e-3);
}

TEST_CASE("solve_poisson_1d: zero observable, zero corrector") {
    const auto base = builtin_scenario("ou-linear");
    const auto s = with_observable(base, [](const Vec&) { return Vec{0.0}; }, 1);
    const auto p = invariant_density_1d(s, 4001);
    const auto u = solve_poisson_1d(s, p);
    CHECK(std::abs(u.value({0.7})[0]) <= 1e-12);
    CHECK(std::abs(u.gradient({0.7})(0, 0)) <= 1e-12);
}

TEST_CASE("solve_poisson_1d: rejects non-mean-zero observables") {
    const auto base = builtin_scenario("ou-linear");
    const auto s = with_observable(base, [](const Vec& x) { return Vec{x[0] + 1.0}; }, 1);
    const auto p = invariant_density_1d(s, 4001);
    CHECK_THROWS_AS(solve_poisson_1d(s, p), std::invalid_argument);
}

TEST_CASE("solve_poisson_1d: linearity across the sign split") {
    // H = sign decomposed as H'(x) = sign(x) e^{-|x|} plus a Lipschitz remainder.
    const auto base = builtin_scenario("ou-sign");
    auto hp = [](const Vec& x) {
        const double s = x[0] > 0 ? 1.0 : (x[0] < 0 ? -1.0 : 0.0);
        return Vec{s * std::exp(-std::abs(x[0]))};
    };
    auto hpp = [hp](const Vec& x) {
        const double s = x[0] > 0 ? 1.0 : (x[0] < 0 ? -1.0 : 0.0);
        return Vec{s - hp(x)[0]};
    };
    const auto p = invariant_density_1d(base, 16001);
    const auto u_full = solve_poisson_1d(base, p);
    const auto u_smooth = solve_poisson_1d(with_observable(base, hp, 1), p);
    const auto u_lip = solve_poisson_1d(with_observable(base, hpp, 1), p);
    for (double x = -2.5; x <= 2.5; x += 0.25) {
        const double sum = u_smooth.value({x})[0] + u_lip.value({x})[0];
        CHECK(sum == doctest::Approx(u_full.value({x})[0]).epsilon(1e-3));
        const double dsum = u_smooth.gradient({x})(0, 0) + u_lip.gradient({x})(0, 0);
        CHECK(dsum == doctest::Approx(u_full.gradient({x})(0, 0)).epsilon(1e-3));
    }
}

TEST_CASE("solve_poisson_1d: quadratic-sign second component has corrector x|x|/2") {
    const auto s = builtin_scenario("quadratic-sign");
    const auto p = invariant_density_1d(s, 16001);
    const auto u = solve_poisson_1d(s, p);
    // probes skip the sign discontinuity itself, where |x| is ill-defined
    for (double x = -1.9; x <= 1.95; x += 0.3) {
        CHECK(u.value({x})[1] == doctest::Approx(0.5 * x * std::abs(x)).epsilon(2e-4));
        CHECK(u.gradient({x})(1, 0) == doctest::Approx(std::abs(x)).epsilon(2e-4));
    }
}

TEST_CASE("solve_poisson_quadratic: scalar OU values and the trace identity") {
    const auto u = solve_poisson_quadratic(ou_part(), Matrix(1, 1, {1.0}));
    REQUIRE(u.quadratic.has_value());
    CHECK(u.quadratic->upsilon(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(u.quadratic->constant == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(u.gradient({1.5})(0, 0) == doctest::Approx(1.5));

    const auto zero = solve_poisson_quadratic(ou_part(), Matrix(1, 1, {0.0}));
    CHECK(zero.quadratic->upsilon(0, 0) == doctest::Approx(0.0));
    CHECK(zero.quadratic->constant == doctest::Approx(0.0));

    CHECK_THROWS_AS(solve_poisson_quadratic({Matrix(1, 1, {1.0}), Matrix(1, 1, {1.0})},
                                            Matrix(1, 1, {1.0})),
                    std::invalid_argument);
}

TEST_CASE("solve_poisson_quadratic: random stable systems satisfy the Lyapunov residual") {
    NormalStream rng(31, 0);
    for (int rep = 0; rep < 6; ++rep) {
        Matrix a(2, 2), g0(2, 2);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                a(i, j) = rng.next();
                g0(i, j) = rng.next();
            }
        const double shift = spectral_abscissa(a) + 0.4;
        a(0, 0) -= shift;
        a(1, 1) -= shift;
        Matrix b = Matrix::identity(2);
        b(0, 1) = 0.3;
        const Matrix gamma = g0 * g0.transposed() + 0.2 * Matrix::identity(2);

        const auto u = solve_poisson_quadratic({a, b}, gamma);
        const Matrix& ups = u.quadratic->upsilon;
        const double resid = (ups * a + a.transposed() * ups + gamma).frobenius_norm();
        CHECK(resid <= 1e-10 * gamma.frobenius_norm());

        DiffusionScenario s;
        s.dimension = s.noise_dimension = 2;
        s.observable_dim = 1;
        s.drift = [a](const Vec& x) { return a * x; };
        s.diffusion = [b](const Vec&) { return b; };
        const double offset = u.quadratic->constant;
        s.observable = [gamma, offset](const Vec& x) { return Vec{dot(x, gamma * x) - offset}; };
        s.initial_point = {0.0, 0.0};
        s.label = "tmp";
        CHECK(generator_residual(s, u, {{0.3, -0.4}, {1.0, 0.7}, {-1.2, 0.1}}) <= 1e-7);
    }
}

TEST_CASE("corrector_linear_gaussian: OU with H=x matches the 1-D Poisson route") {
    const auto s = builtin_scenario("ou-linear");
    GaussianCorrectorOptions opt;
    opt.grad_h = [](const Vec&) { return Matrix(1, 1, {1.0}); };
    const auto u = corrector_linear_gaussian(*s.linear_part, s.observable, 1, opt);
    const auto p = invariant_density_1d(s, 16001);
    const auto u_ref = solve_poisson_1d(s, p);
    for (double x = -2.0; x <= 2.0; x += 0.5) {
        CHECK(u.value({x})[0] == doctest::Approx(u_ref.value({x})[0]).epsilon(1e-4));
        CHECK(u.gradient({x})(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("corrector_linear_gaussian: OU with H=sign via the score-form gradient") {
    const auto s = builtin_scenario("ou-sign");
    const auto u = corrector_linear_gaussian(*s.linear_part, s.observable, 1);
    const auto p = invariant_density_1d(s, 16001);
    const auto u_ref = solve_poisson_1d(s, p);
    double grad_max = 0.0;
    for (double x = -2.0; x <= 2.0; x += 0.4) {
        CHECK(u.value({x})[0] == doctest::Approx(u_ref.value({x})[0]).epsilon(1e-3));
        const double g = u.gradient({x})(0, 0);
        CHECK(g == doctest::Approx(u_ref.gradient({x})(0, 0)).epsilon(1e-3));
        grad_max = std::max(grad_max, std::abs(g));
    }
    CHECK(grad_max <= 2.0);  // bounded gradient
}

TEST_CASE("corrector_linear_gaussian: langevin needs grad_h, then matches the closed form") {
    const auto s = builtin_scenario("langevin");
    CHECK_THROWS_AS(corrector_linear_gaussian(*s.linear_part, s.observable, 1),
                    std::invalid_argument);

    GaussianCorrectorOptions opt;
    opt.grad_h = [](const Vec&) { return Matrix::from_rows({{1.0, 0.0}}); };
    opt.hermite_order = 8;
    opt.time_panels = 128;
    const auto u = corrector_linear_gaussian(*s.linear_part, s.observable, 1, opt);
    for (const Vec& x : {Vec{0.5, -0.3}, Vec{-1.0, 0.2}, Vec{0.0, 0.0}}) {
        CHECK(u.value(x)[0] == doctest::Approx(x[0] + x[1]).epsilon(1e-4));
        const Matrix g = u.gradient(x);
        CHECK(g(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
        CHECK(g(0, 1) == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("corrector_linear_gaussian: zero observable and non-Hurwitz errors") {
    const auto zero = corrector_linear_gaussian(ou_part(), [](const Vec&) { return Vec{0.0}; }, 1);
    CHECK(std::abs(zero.value({1.0})[0]) <= 1e-10);

    LinearPart bad{Matrix(1, 1, {0.5}), Matrix(1, 1, {1.0})};
    CHECK_THROWS_AS(corrector_linear_gaussian(bad, [](const Vec& x) { return x; }, 1),
                    std::invalid_argument);
}

TEST_CASE("compute_Q_stationary: spec values") {
    const auto cubic = builtin_scenario("cubic");
    const auto p = invariant_density_1d(cubic, 16001);
    const auto u = solve_poisson_1d(cubic, p);
    const auto q = compute_Q_stationary(cubic, u, p);
    CHECK(q.q(0, 0) == doctest::Approx(1.0).epsilon(1e-3));

    const auto ou = builtin_scenario("ou-linear");
    const auto pu = invariant_density_1d(ou, 16001);
    const auto uu = solve_poisson_1d(ou, pu);
    CHECK(compute_Q_stationary(ou, uu, pu).q(0, 0) == doctest::Approx(1.0).epsilon(1e-6));

    const auto zero_s = with_observable(ou, [](const Vec&) { return Vec{0.0}; }, 1);
    const auto uz = solve_poisson_1d(zero_s, pu);
    CHECK(compute_Q_stationary(zero_s, uz, pu).q(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("compute_Q_stationary: Gaussian law overload agrees with the tabulated route") {
    const auto s = builtin_scenario("ou-quadratic");
    const auto u = solve_poisson_quadratic(*s.linear_part, *s.observable_gamma);
    const Matrix p_cov = solve_lyapunov(s.linear_part->a,
                                        s.linear_part->b * s.linear_part->b.transposed());
    const auto q_gauss = compute_Q_stationary(s, u, p_cov);
    CHECK(q_gauss.q(0, 0) == doctest::Approx(0.5).epsilon(1e-8));

    const auto p_tab = invariant_density_1d(s, 16001);
    const auto q_tab = compute_Q_stationary(s, u, p_tab);
    CHECK(q_tab.q(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("Q is invariant under adding a constant to U") {
    const auto s = builtin_scenario("ou-quadratic");
    const auto u = solve_poisson_quadratic(*s.linear_part, *s.observable_gamma);
    Corrector shifted = u;
    auto base_value = u.value;
    shifted.value = [base_value](const Vec& x) {
        Vec v = base_value(x);
        for (double& c : v) c += 17.0;
        return v;
    };
    const Matrix p_cov = solve_lyapunov(s.linear_part->a,
                                        s.linear_part->b * s.linear_part->b.transposed());
    const auto q0 = compute_Q_stationary(s, u, p_cov);
    const auto q1 = compute_Q_stationary(s, shifted, p_cov);
    CHECK(q0.q(0, 0) == doctest::Approx(q1.q(0, 0)));
}

TEST_CASE("compute_Q_green_kubo: exact kernels on the OU family") {
    // H = x^2 - 1/2: autocovariance e^{-2t}/2, Q = 1/2
    const auto quad = compute_Q_green_kubo(builtin_scenario("ou-quadratic"));
    CHECK(quad.q(0, 0) == doctest::Approx(0.5).epsilon(2e-6));
    CHECK(quad.method == QMethod::GreenKubo);

    // H = x: autocovariance e^{-t}/2, Q = 1
    const auto lin = compute_Q_green_kubo(builtin_scenario("ou-linear"));
    CHECK(lin.q(0, 0) == doctest::Approx(1.0).epsilon(2e-6));

    // H = sign: autocovariance (2/pi) arcsin(e^{-t}), Q = 2 log 2
    const auto sgn = compute_Q_green_kubo(builtin_scenario("ou-sign"));
    CHECK(sgn.q(0, 0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(5e-3));

    const auto zero = compute_Q_green_kubo(
        with_observable(builtin_scenario("ou-linear"), [](const Vec&) { return Vec{0.0}; }, 1));
    CHECK(std::abs(zero.q(0, 0)) <= 1e-10);
}

TEST_CASE("compute_Q_green_kubo: Monte Carlo route on the cubic scenario") {
    GreenKuboOptions opt;
    opt.mc_path_time = 16000.0;
    opt.mc_max_lag = 8.0;
    const auto s = builtin_scenario("cubic");
    const auto gk = compute_Q_green_kubo(s, opt);
    // the stationary-route value is 1; agree within combined reported error
    const auto p = invariant_density_1d(s, 16001);
    const auto stat = compute_Q_stationary(s, solve_poisson_1d(s, p), p);
    const double combined = 3.0 * (gk.estimated_error + stat.estimated_error) + 1e-3;
    CHECK(std::abs(gk.q(0, 0) - stat.q(0, 0)) <= combined);
    CHECK(gk.q(0, 0) == doctest::Approx(1.0).epsilon(0.08));
}

TEST_CASE("q_closed_form_quadratic: spec values and the Green-Kubo cross-check") {
    const auto scalar = q_closed_form_quadratic(ou_part(), Matrix(1, 1, {1.0}));
    CHECK(scalar.q(0, 0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(q_closed_form_quadratic(ou_part(), Matrix(1, 1, {0.0})).q(0, 0) ==
          doctest::Approx(0.0));

    NormalStream rng(77, 0);
    for (int rep = 0; rep < 3; ++rep) {
        Matrix a(2, 2), g0(2, 2);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                a(i, j) = rng.next();
                g0(i, j) = rng.next();
            }
        const double shift = spectral_abscissa(a) + 0.5;
        a(0, 0) -= shift;
        a(1, 1) -= shift;
        const Matrix b = Matrix::identity(2);
        const Matrix gamma = g0 * g0.transposed() + 0.3 * Matrix::identity(2);
        const LinearPart sys{a, b};

        const auto closed = q_closed_form_quadratic(sys, gamma);
        const Matrix p = solve_lyapunov(a, b * b.transposed());
        const double offset = (gamma * p).trace();

        DiffusionScenario s;
        s.dimension = s.noise_dimension = 2;
        s.observable_dim = 1;
        s.drift = [a](const Vec& x) { return a * x; };
        s.diffusion = [b](const Vec&) { return b; };
        s.observable = [gamma, offset](const Vec& x) { return Vec{dot(x, gamma * x) - offset}; };
        s.linear_part = sys;
        s.observable_gamma = gamma;
        s.observable_offset = offset;
        s.initial_point = {0.0, 0.0};
        s.label = "random-quadratic";

        GreenKuboOptions opt;
        opt.hermite_order = 8;
        const auto gk = compute_Q_green_kubo(s, opt);
        CHECK(std::abs(gk.q(0, 0) - closed.q(0, 0)) <=
              1e-4 * std::max(1.0, std::abs(closed.q(0, 0))));
    }
}

TEST_CASE("generator substitution holds for every produced corrector") {
    const auto probes = probe_grid_1d(-2.0, 2.0, 17);

    const auto cubic = builtin_scenario("cubic");
    const auto p_cubic = invariant_density_1d(cubic, 16001);
    CHECK(generator_residual(cubic, solve_poisson_1d(cubic, p_cubic), probes) <= 1e-3);
    CHECK(generator_residual(cubic, corrector_from_closed_form(cubic), probes) <= 1e-10);

    const auto ou_quad = builtin_scenario("ou-quadratic");
    const auto u_quad = solve_poisson_quadratic(*ou_quad.linear_part, *ou_quad.observable_gamma);
    CHECK(generator_residual(ou_quad, u_quad, probes) <= 1e-8);

    const auto ou = builtin_scenario("ou-linear");
    GaussianCorrectorOptions opt;
    opt.grad_h = [](const Vec&) { return Matrix(1, 1, {1.0}); };
    CHECK(generator_residual(ou, corrector_linear_gaussian(*ou.linear_part, ou.observable, 1, opt),
                             probe_grid_1d(-2.0, 2.0, 9)) <= 1e-3);
}

TEST_SUITE_END();
