#include <cmath>

#include "doctest.h"
#include "mdev/mdp.hpp"
#include "mdev/quadrature.hpp"
#include "mdev/rng.hpp"

using namespace mdev;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// i.i.d. Gaussian pseudo-ensemble: S^kappa_t ~ N(0, sigma(t)^2), independent
// of any SDE machinery. Checks the binomial curve assembly in isolation.
PathEnsemble synthetic_gaussian(const std::vector<double>& checkpoints, double kappa,
                                std::size_t paths, const Vec& sigmas, std::uint64_t seed) {
    PathEnsemble e;
    e.scenario_label = "synthetic";
    e.kappa = kappa;
    e.paths = paths;
    e.q = 1;
    e.checkpoints = checkpoints;
    e.s_kappa.resize(paths * checkpoints.size());
    e.corrector_term.assign(paths * checkpoints.size(), 0.0);
    e.martingale.assign(paths * checkpoints.size(), 0.0);
    e.bracket.assign(paths * checkpoints.size(), 0.0);
    for (std::size_t p = 0; p < paths; ++p) {
        NormalStream rng(seed, p);
        for (std::size_t k = 0; k < checkpoints.size(); ++k)
            e.s_kappa[p * checkpoints.size() + k] = sigmas[k] * rng.next();
    }
    return e;
}

}  // namespace

TEST_SUITE_BEGIN("mdp");

TEST_CASE("rate_J: pseudoinverse values and the range dichotomy") {
    const auto rf1 = RateFunction::from_q(Matrix(1, 1, {1.0}));
    CHECK(rate_J(rf1, {1.0}) == doctest::Approx(0.5));

    const auto rf = RateFunction::from_q(Matrix::diagonal({2.0, 0.0}));
    CHECK(rf.rank == 1);
    CHECK(rate_J(rf, {1.0, 0.0}) == doctest::Approx(0.25));
    CHECK(rate_J(rf, {0.0, 1.0}) == kInf);

    // scaling on the range, infinity exactly off the projector's range
    NormalStream rng(3, 0);
    for (int rep = 0; rep < 8; ++rep) {
        const double y = rng.next();
        const double base = rate_J(rf, {y, 0.0});
        CHECK(rate_J(rf, {3.0 * y, 0.0}) == doctest::Approx(9.0 * base).epsilon(1e-12));
        CHECK(rate_J(rf, {y, 0.1 * (1.0 + std::abs(y))}) == kInf);
    }
}

TEST_CASE("rate_J_regularized: finite everywhere, dichotomy in the limit") {
    const auto rf = RateFunction::from_q(Matrix::diagonal({2.0, 0.0}));
    CHECK(rate_J_regularized(rf, {1.0, 0.0}, 1e-6) == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(rate_J_regularized(rf, {0.0, 1.0}, 0.5) == doctest::Approx(1.0));
    CHECK(rate_J_regularized(rf, {4.0, -2.0}, 1e12) == doctest::Approx(0.0).epsilon(1e-8));

    // on-range: monotone convergence to J as gamma decreases
    double prev_gap = kInf;
    for (double gamma = 1e-2; gamma >= 1e-10 / 2; gamma /= 10.0) {
        const double gap = std::abs(rate_J_regularized(rf, {1.0, 0.0}, gamma) - 0.25);
        CHECK(gap <= prev_gap + 1e-15);
        prev_gap = gap;
    }
    CHECK(prev_gap <= 1e-9);

    // off-range: J_gamma blows up like |(I - QQ+)Y|^2 / (2 gamma)
    const Vec y{1.0, 3.0};
    for (double gamma : {1e-4, 1e-6, 1e-8}) {
        const double expected_blowup = 9.0 / (2.0 * gamma);
        CHECK(rate_J_regularized(rf, y, gamma) / expected_blowup ==
              doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("contract_rate: closed form, trivial maps, infeasible fibers") {
    const auto rf = RateFunction::from_q(Matrix::identity(2));
    CHECK(contract_rate(rf, Matrix::from_rows({{1, 1}}), {1.0}) == doctest::Approx(0.25));
    CHECK(contract_rate_numeric(rf, Matrix::from_rows({{1, 1}}), {1.0}) ==
          doctest::Approx(0.25).epsilon(1e-10));
    CHECK(contract_rate(rf, Matrix::from_rows({{1, 1}}), {0.0}) == doctest::Approx(0.0));

    // T = identity reduces to rate_J
    const auto rf2 = RateFunction::from_q(Matrix::diagonal({2.0, 0.5}));
    const Vec y{0.3, -0.7};
    CHECK(contract_rate(rf2, Matrix::identity(2), y) == doctest::Approx(rate_J(rf2, y)));

    // y outside T range(Q)
    const auto singular = RateFunction::from_q(Matrix::diagonal({1.0, 0.0}));
    CHECK(contract_rate(singular, Matrix::identity(2), {0.0, 1.0}) == kInf);
    CHECK(contract_rate_numeric(singular, Matrix::identity(2), {0.0, 1.0}) == kInf);
}

TEST_CASE("contract_rate: closed form equals the numeric fiber minimization") {
    NormalStream rng(9, 0);
    for (int rep = 0; rep < 12; ++rep) {
        const std::size_t q = 2 + static_cast<std::size_t>(rep % 3);  // up to 4
        const std::size_t p = 1 + static_cast<std::size_t>(rep % 2);
        const std::size_t r = 1 + static_cast<std::size_t>(rep % q);
        Matrix g(q, r);
        for (std::size_t i = 0; i < q; ++i)
            for (std::size_t j = 0; j < r; ++j) g(i, j) = rng.next();
        const auto rf = RateFunction::from_q(g * g.transposed());
        Matrix t_map(p, q);
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) t_map(i, j) = rng.next();
        // feasible y: pick Y in range(Q) and push it through T
        Vec z(q);
        rng.fill(z.data(), q);
        const Vec y = t_map * (rf.q * z);
        const double closed = contract_rate(rf, t_map, y);
        const double numeric = contract_rate_numeric(rf, t_map, y);
        REQUIRE(std::isfinite(closed));
        CHECK(numeric == doctest::Approx(closed).epsilon(1e-8));
    }
}

TEST_CASE("empirical_rate_curve: binomial correctness on a synthetic Gaussian ensemble") {
    const std::vector<double> checkpoints{25.0, 50.0, 100.0};
    const double kappa = 0.6;
    Vec sigmas;
    for (double t : checkpoints) sigmas.push_back(std::pow(t, 0.5 - kappa));  // Var = t^{1-2k}
    const std::size_t n = 40000;
    const auto ens = synthetic_gaussian(checkpoints, kappa, n, sigmas, 99);

    const double delta = 0.8;
    const auto curve = empirical_rate_curve(ens, CurveStatistic::SNormExceedsDelta, delta,
                                            Matrix(1, 1, {1.0}));
    REQUIRE(curve.rows.size() == 3);
    CHECK(curve.reference == doctest::Approx(-delta * delta / 2.0));
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& row = curve.rows[k];
        const double rho = std::pow(row.t, -(2.0 * kappa - 1.0));
        const double exact_log_p = log_two_sided_tail(delta / sigmas[k]);
        CHECK_FALSE(row.clamped);
        CHECK(std::abs(row.rho_log_p - rho * exact_log_p) <= 3.0 * rho * row.se_log);
    }

    // delta = 0: every path exceeds, rho log 1 = 0
    const auto zero = empirical_rate_curve(ens, CurveStatistic::SNormExceedsDelta, 0.0);
    for (const auto& row : zero.rows) {
        CHECK(row.p_hat == 1.0);
        CHECK(row.rho_log_p == 0.0);
    }
}

TEST_CASE("empirical_rate_curve: clamping and error paths") {
    const auto ens = synthetic_gaussian({10.0}, 0.75, 500, {0.01}, 7);
    const auto curve = empirical_rate_curve(ens, CurveStatistic::SNormExceedsDelta, 5.0);
    CHECK(curve.rows[0].clamped);
    CHECK(curve.rows[0].p_hat == doctest::Approx(1.0 / 1000.0));

    PathEnsemble empty;
    CHECK_THROWS_AS(empirical_rate_curve(empty, CurveStatistic::SNormExceedsDelta, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(empirical_rate_curve(ens, CurveStatistic::BracketCondition, 0.1),
                    std::invalid_argument);
    CHECK_THROWS_AS(empirical_rate_curve(ens, CurveStatistic::LyapunovIntegralExceeds, 1.0),
                    std::invalid_argument);
}

TEST_CASE("gaussian_exact_rate: OU stationary variance and the MDP limit") {
    const LinearPart ou{Matrix(1, 1, {-1.0}), Matrix(1, 1, {1.0})};
    const Matrix c(1, 1, {1.0});

    // v(10) = 10 - 1 + e^{-10}
    const double v10 = 10.0 - 1.0 + std::exp(-10.0);
    const double z = 1.0 * std::pow(10.0, 0.6) / std::sqrt(v10);
    const double expected = std::pow(10.0, -0.2) * log_two_sided_tail(z);
    CHECK(gaussian_exact_rate(ou, c, 0.6, 1.0, 10.0, true) ==
          doctest::Approx(expected).epsilon(1e-8));

    // t -> infinity: rho log P -> -delta^2 / (2 Q) with Q = 1
    CHECK(gaussian_exact_rate(ou, c, 0.6, 1.0, 1e16, true) ==
          doctest::Approx(-0.5).epsilon(0.01));

    // delta = 0 gives zero
    CHECK(gaussian_exact_rate(ou, c, 0.6, 0.0, 50.0, true) == doctest::Approx(0.0));

    CHECK_THROWS_AS(gaussian_exact_rate({Matrix(1, 1, {1.0}), Matrix(1, 1, {1.0})}, c, 0.6, 1.0,
                                        10.0, true),
                    std::invalid_argument);
}

TEST_CASE("gaussian_exact_rate: transient start via the moment ODE") {
    const LinearPart ou{Matrix(1, 1, {-1.0}), Matrix(1, 1, {1.0})};
    const Matrix c(1, 1, {1.0});
    // Var(int_0^t X ds | X_0 = x) = t - 2(1 - e^{-t}) + (1 - e^{-2t})/2
    const double t = 10.0;
    const double v = t - 2.0 * (1.0 - std::exp(-t)) + 0.5 * (1.0 - std::exp(-2.0 * t));
    const double z = std::pow(t, 0.6) / std::sqrt(v);
    const double expected = std::pow(t, -0.2) * log_two_sided_tail(z);
    CHECK(gaussian_exact_rate(ou, c, 0.6, 1.0, t, false) ==
          doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("bound_A1 and bound_A2: spot values and divergence") {
    const auto b = bound_A1(1.0, 0.0, 1.0, 0.0, 1.0, 4.0, 0.75, 16.0);
    CHECK(b.tail == doctest::Approx(-12.0));
    CHECK(b.integral == doctest::Approx(-4.0));

    CHECK(bound_A2(1.0, 2.0, 0.75, 16.0) == doctest::Approx(-1.0));
    CHECK(bound_A2(1.0, 2.0, 0.75, 1.0) == doctest::Approx(-0.25));  // -eps^2/(2n)

    // divergence to -infinity; the linear t term of the tail bound overtakes
    // the t^{2(1-kappa)} term only eventually, and the integral bound needs
    // n > 2(c_frak + c)/c
    double prev_tail = 0.0, prev_int = 0.0, prev_a2 = 0.0;
    for (double t : {1e4, 1e6, 1e8}) {
        const auto bb = bound_A1(2.0, 1.0, 1.5, 3.0, 0.5, 8.0, 0.6, t);
        CHECK(bb.tail < prev_tail);
        CHECK(bb.integral < prev_int);
        prev_tail = bb.tail;
        prev_int = bb.integral;
        const double a2 = bound_A2(0.5, 8.0, 0.6, t);
        CHECK(a2 < prev_a2);
        prev_a2 = a2;
    }
    CHECK(prev_tail < -1e6);
    CHECK(prev_int < -1e5);

    // large V0 delays the tail bound: at t with t eps = V0 / t^{2k-1} it is
    // nonnegative
    const double kappa = 0.75, eps = 1.0, t0 = 4.0;
    const double v0 = eps * std::pow(t0, 2.0 * kappa);
    const auto delayed = bound_A1(1.0, 0.5, 1.0, v0, eps, 4.0, kappa, t0);
    CHECK(delayed.tail >= 0.0);
}

TEST_CASE("drift_diagnostics: cubic and OU envelopes, degenerate V fails") {
    std::vector<Vec> grid;
    for (double x = -5.0; x <= 5.0; x += 0.125) grid.push_back({x});
    auto v = [](const Vec& x) { return x[0] * x[0]; };

    const auto cubic = drift_diagnostics(builtin_scenario("cubic"), v, 2.0, 1.0, grid);
    CHECK(cubic.verdict == Verdict::Pass);
    CHECK(cubic.c == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(cubic.c_frak == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cubic.c_bold == doctest::Approx(4.0 * 25.0 / 26.0).epsilon(1e-6));

    const auto ou = drift_diagnostics(builtin_scenario("ou-linear"), v, 1.0, 1.0, grid);
    CHECK(ou.verdict == Verdict::Pass);
    CHECK(ou.c == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(ou.c_frak == doctest::Approx(1.0).epsilon(1e-6));

    const auto flat = drift_diagnostics(builtin_scenario("ou-linear"),
                                        [](const Vec&) { return 1.0; }, 1.0, 1.0, grid);
    CHECK(flat.verdict == Verdict::Fail);
}

TEST_SUITE_END();
