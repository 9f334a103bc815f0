#include <cmath>
#include <cstring>

#include "doctest.h"
#include "mdev/rng.hpp"
#include "mdev/sim.hpp"

using namespace mdev;

namespace {

DiffusionScenario frozen_scenario() {
    DiffusionScenario s;
    s.dimension = s.noise_dimension = s.observable_dim = 1;
    s.drift = [](const Vec&) { return Vec{0.0}; };
    s.diffusion = [](const Vec&) { return Matrix(1, 1, {0.0}); };
    s.observable = [](const Vec& x) { return Vec{x[0]}; };
    s.initial_point = {1.0};
    s.label = "frozen";
    return s;
}

SimConfig quick_config(std::vector<double> checkpoints, std::size_t paths, std::uint64_t seed,
                       double step = 0.01) {
    SimConfig cfg;
    cfg.checkpoints = std::move(checkpoints);
    cfg.paths = paths;
    cfg.seed = seed;
    cfg.step = step;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("sim");

TEST_CASE("step_euler: frozen dynamics and the deterministic OU step") {
    const auto frozen = frozen_scenario();
    CHECK(step_euler(frozen, {1.0}, 0.01, {0.7})[0] == doctest::Approx(1.0));

    const auto ou = builtin_scenario("ou-linear");
    CHECK(step_euler(ou, {1.0}, 0.01, {0.0})[0] == doctest::Approx(0.99));
}

TEST_CASE("step_euler: tamed scheme survives the cubic drift from x = 10") {
    const auto s = builtin_scenario("cubic");
    NormalStream rng(5, 0);
    Vec x{10.0};
    for (int i = 0; i < 1000000; ++i) {
        x = step_euler(s, x, 0.01, {rng.next()}, true);
        REQUIRE(std::isfinite(x[0]));
    }
    CHECK(std::abs(x[0]) < 10.0);

    // plain Euler provably explodes for the same drift
    Vec y{16.0};
    bool blew_up = false;
    for (int i = 0; i < 50 && !blew_up; ++i) {
        y = step_euler(s, y, 0.01, {0.0}, false);
        blew_up = !std::isfinite(y[0]);
    }
    CHECK(blew_up);
}

TEST_CASE("exact linear stepper: propagator, moments, invariant law") {
    const auto ou = builtin_scenario("ou-linear");
    const ExactLinearStepper stepper(*ou.linear_part, 0.5);
    CHECK(stepper.step({2.0}, {0.0})[0] == doctest::Approx(2.0 * std::exp(-0.5)).epsilon(1e-12));

    // moment test: one-step samples match N(e^{hA} x, P_h) within 4 SE
    const double h = 0.5;
    const double mean_exact = 3.0 * std::exp(-h);
    const double var_exact = 0.5 * (1.0 - std::exp(-2.0 * h));
    NormalStream rng(17, 0);
    const std::size_t n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = stepper.step({3.0}, {rng.next()})[0];
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - mean * mean;
    CHECK(std::abs(mean - mean_exact) <= 4.0 * std::sqrt(var_exact / static_cast<double>(n)));
    CHECK(std::abs(var - var_exact) <=
          4.0 * var_exact * std::sqrt(2.0 / static_cast<double>(n)));

    // large h lands in the invariant law N(0, 1/2)
    const ExactLinearStepper wide(*ou.linear_part, 40.0);
    CHECK(wide.propagator()(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(wide.noise_factor()(0, 0) * wide.noise_factor()(0, 0) ==
          doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("simulate_batch: zero observable gives identically zero S") {
    auto s = builtin_scenario("ou-linear");
    s.observable = [](const Vec&) { return Vec{0.0}; };
    s.linear_observable = Matrix(1, 1, {0.0});
    s.known_corrector = ClosedFormCorrector{[](const Vec&) { return Vec{0.0}; },
                                            [](const Vec&) { return Matrix(1, 1, {0.0}); }};
    const auto u = corrector_from_closed_form(s);
    const auto ens = simulate_batch(s, u, quick_config({1.0, 2.0}, 64, 3, 0.05));
    for (double v : ens.s_kappa) CHECK(v == 0.0);
    for (double v : ens.martingale) CHECK(v == 0.0);
}

TEST_CASE("simulate_batch: decomposition identity holds pathwise") {
    const auto s = builtin_scenario("cubic");
    const auto u = corrector_from_closed_form(s);
    const auto ens = simulate_batch(s, u, quick_config({2.0, 5.0}, 200, 11));
    double worst = 0.0;
    for (std::size_t p = 0; p < ens.paths; ++p)
        for (std::size_t k = 0; k < ens.checkpoints.size(); ++k) {
            const double t_pow = std::pow(ens.checkpoints[k], ens.kappa);
            const double gap = ens.s_at(p, k, 0) - ens.corrector_at(p, k, 0) -
                               ens.martingale_at(p, k, 0) / t_pow;
            worst = std::max(worst, std::abs(gap));
        }
    CHECK(worst <= 1e-9);
    CHECK(ens.effective_scheme == Scheme::TamedEuler);  // auto-upgrade for the cubic drift
}

TEST_CASE("simulate_batch: cubic bracket concentrates at Q = 1") {
    const auto s = builtin_scenario("cubic");
    const auto u = corrector_from_closed_form(s);
    auto cfg = quick_config({50.0}, 10000, 7);
    const auto ens = simulate_batch(s, u, cfg);
    // grad U = 1 and a = 1, so <M>_t = t exactly on the step grid
    double mean = 0.0;
    for (std::size_t p = 0; p < ens.paths; ++p) mean += ens.bracket_at(p, 0, 0, 0) / 50.0;
    mean /= static_cast<double>(ens.paths);
    CHECK(mean == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("simulate_batch: stationary OU integral variance matches the double quadrature") {
    const auto s = builtin_scenario("ou-linear");
    const auto u = corrector_from_closed_form(s);
    SimConfig cfg = quick_config({100.0}, 20000, 19, 1.0);
    cfg.scheme = Scheme::ExactLinear;
    cfg.stationary_start = true;
    const auto ens = simulate_batch(s, u, cfg);

    const double t = 100.0;
    const double t_pow = std::pow(t, ens.kappa);
    double mean = 0.0, var = 0.0;
    for (std::size_t p = 0; p < ens.paths; ++p) mean += ens.s_at(p, 0, 0) * t_pow;
    mean /= static_cast<double>(ens.paths);
    for (std::size_t p = 0; p < ens.paths; ++p) {
        const double v = ens.s_at(p, 0, 0) * t_pow - mean;
        var += v * v;
    }
    var /= static_cast<double>(ens.paths - 1);

    const double exact = t - 1.0 + std::exp(-t);  // double quadrature of (1/2) e^{-|u-s|}
    const double se = exact * std::sqrt(2.0 / static_cast<double>(ens.paths));
    CHECK(std::abs(var - exact) <= 3.0 * se);

    // martingale sample mean vanishes within 4 SE
    double m_mean = 0.0, m_var = 0.0;
    for (std::size_t p = 0; p < ens.paths; ++p) m_mean += ens.martingale_at(p, 0, 0);
    m_mean /= static_cast<double>(ens.paths);
    for (std::size_t p = 0; p < ens.paths; ++p) {
        const double v = ens.martingale_at(p, 0, 0) - m_mean;
        m_var += v * v;
    }
    m_var /= static_cast<double>(ens.paths - 1);
    CHECK(std::abs(m_mean) <= 4.0 * std::sqrt(m_var / static_cast<double>(ens.paths)));
}

TEST_CASE("simulate_batch: bracket time-average concentrates as t grows") {
    const auto s = builtin_scenario("ou-quadratic");
    const auto u = solve_poisson_quadratic(*s.linear_part, *s.observable_gamma);
    SimConfig cfg = quick_config({10.0, 40.0, 160.0}, 2000, 23, 0.05);
    cfg.scheme = Scheme::ExactLinear;
    cfg.stationary_start = true;
    const auto ens = simulate_batch(s, u, cfg);
    Vec sd;
    for (std::size_t k = 0; k < 3; ++k) {
        double mean = 0.0, var = 0.0;
        for (std::size_t p = 0; p < ens.paths; ++p)
            mean += ens.bracket_at(p, k, 0, 0) / ens.checkpoints[k];
        mean /= static_cast<double>(ens.paths);
        for (std::size_t p = 0; p < ens.paths; ++p) {
            const double v = ens.bracket_at(p, k, 0, 0) / ens.checkpoints[k] - mean;
            var += v * v;
        }
        sd.push_back(std::sqrt(var / static_cast<double>(ens.paths - 1)));
    }
    CHECK(sd[1] < sd[0]);
    CHECK(sd[2] < sd[1]);
}

TEST_CASE("simulate_batch: deterministic across worker counts and seeds") {
    const auto s = builtin_scenario("cubic");
    const auto u = corrector_from_closed_form(s);
    auto cfg = quick_config({1.0, 3.0}, 300, 123, 0.02);

    cfg.workers = 1;
    const auto a = simulate_batch(s, u, cfg);
    cfg.workers = 3;
    const auto b = simulate_batch(s, u, cfg);
    cfg.workers = 16;
    const auto c = simulate_batch(s, u, cfg);
    CHECK(std::memcmp(a.s_kappa.data(), b.s_kappa.data(), a.s_kappa.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.s_kappa.data(), c.s_kappa.data(), a.s_kappa.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.martingale.data(), c.martingale.data(),
                      a.martingale.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.bracket.data(), c.bracket.data(), a.bracket.size() * sizeof(double)) == 0);

    cfg.seed = 124;
    const auto d = simulate_batch(s, u, cfg);
    CHECK(std::memcmp(a.s_kappa.data(), d.s_kappa.data(), a.s_kappa.size() * sizeof(double)) != 0);
}

TEST_CASE("simulate_batch: aborts past the NaN threshold are reported") {
    DiffusionScenario s;
    s.dimension = s.noise_dimension = s.observable_dim = 1;
    s.drift = [](const Vec& x) { return Vec{x[0] * x[0] * x[0]}; };  // explosive
    s.diffusion = [](const Vec&) { return Matrix(1, 1, {1.0}); };
    s.observable = [](const Vec& x) { return Vec{x[0]}; };
    s.initial_point = {3.0};
    s.label = "explosive";
    Corrector u;
    u.state_dim = u.observable_dim = 1;
    u.value = [](const Vec&) { return Vec{0.0}; };
    u.gradient = [](const Vec&) { return Matrix(1, 1, {0.0}); };
    CHECK_THROWS_AS(simulate_batch(s, u, quick_config({5.0}, 32, 2, 0.5)), NumericError);
}

TEST_CASE("pilot step refinement halves coarse steps and keeps fine ones") {
    const auto s = builtin_scenario("cubic");
    // h = 0.01 already resolves the cubic dynamics
    CHECK(pilot_refined_step(s, 10.0, 0.01) == doctest::Approx(0.01));
    // a deliberately coarse start must be refined
    const double refined = pilot_refined_step(s, 10.0, 0.4);
    CHECK(refined < 0.2);
    CHECK_THROWS_AS(pilot_refined_step(s, -1.0, 0.01), std::invalid_argument);
}

TEST_CASE("sim config validation") {
    SimConfig cfg;
    cfg.checkpoints = {};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.checkpoints = {1.0, 0.5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.checkpoints = {1.0, 2.0};
    cfg.step = 0.5;  // above spacing/10
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.step = 0.05;
    cfg.paths = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.paths = 1;
    CHECK_NOTHROW(cfg.validate());
}

TEST_SUITE_END();
