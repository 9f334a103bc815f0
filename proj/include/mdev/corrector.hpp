#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "mdev/models.hpp"

namespace mdev {

enum class CorrectorKind { ClosedForm, Quadratic, Tabulated1d, GaussianQuadrature };
std::string to_string(CorrectorKind k);

/// U(x) = <x, Upsilon x> - constant, the quadratic-observable corrector.
struct QuadraticCorrector {
    Matrix upsilon;
    double constant = 0.0;
};

/// Componentwise tables of U and its derivative on a shared uniform grid.
struct TabulatedCorrector1d {
    double x_lo = 0.0;
    double step = 0.0;
    std::vector<Vec> u;   // one table per observable component
    std::vector<Vec> du;

    std::size_t size() const { return u.empty() ? 0 : u.front().size(); }
    double x_at(std::size_t i) const { return x_lo + step * static_cast<double>(i); }
};

/// Solution of the Poisson equation L U = -H, exposed through value/gradient
/// accessors; immutable once built and safe to share across threads.
struct Corrector {
    CorrectorKind kind = CorrectorKind::ClosedForm;
    std::size_t state_dim = 1;
    std::size_t observable_dim = 1;
    std::function<Vec(const Vec&)> value;       // U : R^d -> R^q
    std::function<Matrix(const Vec&)> gradient; // q x d
    std::optional<QuadraticCorrector> quadratic;
    std::shared_ptr<const TabulatedCorrector1d> table;
};

/// Wraps a scenario's known closed-form corrector.
Corrector corrector_from_closed_form(const DiffusionScenario& s);

/// 1-D Poisson solve through the stationary-density closed form
///   U'(x) = -(2 / (a(x) p(x))) int_{-inf}^x H(y) p(y) dy,
/// cumulative quadrature on the density grid, normalized to int U p = 0.
/// Throws if H is not mean-zero under p within 1e-6.
Corrector solve_poisson_1d(const DiffusionScenario& s, const TabulatedDensity& p);

/// Quadratic corrector for H(x) = <x, Gamma x> - tr(Gamma^{1/2} P Gamma^{1/2}):
/// Upsilon solves Upsilon A + A* Upsilon + Gamma = 0 and the constant is
/// tr(B* Upsilon B), asserted equal to tr(Gamma^{1/2} P Gamma^{1/2}).
Corrector solve_poisson_quadratic(const LinearPart& sys, const Matrix& gamma);

struct GaussianCorrectorOptions {
    double tail_tol = 1e-8;        // exp(-lambda T) horizon control
    std::size_t time_panels = 192; // Simpson panels in the substituted time variable
    std::size_t hermite_order = 64;
    /// Optional gradient of H; required when BB* is singular (the score-form
    /// gradient needs a nondegenerate transition kernel).
    std::function<Matrix(const Vec&)> grad_h;
};

/// Corrector by time integration of the Gaussian semigroup,
/// U(x) = int_0^inf E[H(e^{tA} x + P_t^{1/2} Z)] dt, with the gradient taken
/// under the integral sign.
Corrector corrector_linear_gaussian(const LinearPart& sys,
                                    const std::function<Vec(const Vec&)>& h,
                                    std::size_t observable_dim,
                                    const GaussianCorrectorOptions& options = {});

/// Closed corrector for a linear observable H(x) = C x on a linear system:
/// U(x) = -C A^{-1} x (time integral of C e^{tA} x), constant gradient.
Corrector corrector_linear_observable(const LinearPart& sys, const Matrix& c);

enum class QMethod { Stationary, GreenKubo, ClosedForm };
std::string to_string(QMethod m);

struct CovarianceQ {
    Matrix q;  // symmetric PSD, q x q
    QMethod method = QMethod::Stationary;
    double estimated_error = 0.0;

    /// Symmetry within 1e-10 and eigenvalues >= -1e-10.
    void validate() const;
};

/// Q = int grad U a grad U* p dz against a tabulated 1-D density.
CovarianceQ compute_Q_stationary(const DiffusionScenario& s, const Corrector& u,
                                 const TabulatedDensity& p);
/// Gaussian invariant law N(0, P) for linear scenarios; Gauss-Hermite.
CovarianceQ compute_Q_stationary(const DiffusionScenario& s, const Corrector& u,
                                 const Matrix& p_cov, std::size_t hermite_order = 64);

struct GreenKuboOptions {
    double tail_tol = 1e-8;
    std::size_t hermite_order = 12;  // per dimension, linear route with d >= 2
    std::size_t time_points = 257;   // Simpson nodes on [0, T]
    double horizon = 0.0;            // 0 = auto from the fitted decay rate

    // Monte Carlo route (nonlinear scenarios).
    double mc_path_time = 20000.0;
    double mc_burn_in = 50.0;
    double mc_step = 0.01;
    double mc_sample_spacing = 0.05;
    double mc_max_lag = 12.0;
    std::uint64_t seed = 2718;
    std::size_t batches = 16;
};

/// Q as the time integral of the stationary symmetrized autocovariance of H.
/// Linear scenarios use the exact Gaussian transition kernel (quadrature);
/// nonlinear scenarios use a long stationary path with batch-means errors.
CovarianceQ compute_Q_green_kubo(const DiffusionScenario& s, const GreenKuboOptions& options = {});

/// Q = 4 tr(Upsilon BB* Upsilon P) for the quadratic observable of a linear
/// system (equals the Green-Kubo integral; see q-method agreement tests).
CovarianceQ q_closed_form_quadratic(const LinearPart& sys, const Matrix& gamma);

/// max over probe points of | 1/2 tr(a grad^2 U) + b grad U + H |, the defining
/// residual of the Poisson equation, with finite-difference Hessians.
double generator_residual(const DiffusionScenario& s, const Corrector& u, const std::vector<Vec>& probes,
                          double fd_step = 1e-4);

}  // namespace mdev
