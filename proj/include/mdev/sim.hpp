#pragma once

#include <cstdint>
#include <optional>

#include "mdev/corrector.hpp"
#include "mdev/models.hpp"

namespace mdev {

enum class Scheme { Euler, TamedEuler, ExactLinear };
std::string to_string(Scheme s);

/// Raised when more than 0.1% of paths hit non-finite states.
class SimulationAbort : public NumericError {
public:
    using NumericError::NumericError;
};

/// Lyapunov functional attached to a run: V(X_t) and int V^ell ds are recorded
/// alongside the MDP functionals.
struct LyapunovSpec {
    std::function<double(const Vec&)> v;
    double ell = 1.0;
};

struct SimConfig {
    std::vector<double> checkpoints;  // positive, strictly increasing
    double step = 1e-2;
    std::size_t paths = 1;
    std::uint64_t seed = 0;
    Scheme scheme = Scheme::Euler;
    bool stationary_start = false;
    double burn_in = -1.0;  // nonlinear stationary starts; < 0 = auto (10 relaxation times)
    unsigned workers = 1;

    void validate() const;
};

/// Per-path, per-checkpoint functionals of the corrector decomposition
///   S^kappa_t = (U(x0) - U(X_t))/t^kappa + M_t/t^kappa,
/// which is enforced pathwise as an exact identity. Storage is flat,
/// path-major: index (path * K + k) * q + component.
struct PathEnsemble {
    std::string scenario_label;
    SimConfig config;
    Scheme effective_scheme = Scheme::Euler;
    double kappa = 0.6;
    std::size_t paths = 0;
    std::size_t q = 1;
    std::vector<double> checkpoints;

    Vec s_kappa;         // paths x K x q
    Vec corrector_term;  // paths x K x q
    Vec martingale;      // paths x K x q
    Vec bracket;         // paths x K x q x q
    Vec lyap_value;      // paths x K (when a Lyapunov functional is attached)
    Vec lyap_integral;   // paths x K
    bool has_lyapunov = false;
    std::size_t aborted_paths = 0;

    std::size_t rows() const { return paths * checkpoints.size(); }
    double s_at(std::size_t path, std::size_t k, std::size_t c) const {
        return s_kappa[(path * checkpoints.size() + k) * q + c];
    }
    double corrector_at(std::size_t path, std::size_t k, std::size_t c) const {
        return corrector_term[(path * checkpoints.size() + k) * q + c];
    }
    double martingale_at(std::size_t path, std::size_t k, std::size_t c) const {
        return martingale[(path * checkpoints.size() + k) * q + c];
    }
    double bracket_at(std::size_t path, std::size_t k, std::size_t c, std::size_t e) const {
        return bracket[((path * checkpoints.size() + k) * q + c) * q + e];
    }
};

/// One Euler-Maruyama step x + b h + sigma sqrt(h) xi; the tamed variant
/// divides the drift by (1 + h |b|), which keeps superlinear drifts stable.
Vec step_euler(const DiffusionScenario& s, const Vec& x, double h, const Vec& noise,
               bool tamed = false);

/// Distributionally exact transition of a linear system over step h:
/// x' = e^{hA} x + chol-factor(P_h) xi. The factorization is rank-revealing,
/// so singular BB* directions carry zero noise.
class ExactLinearStepper {
public:
    ExactLinearStepper(const LinearPart& sys, double h);
    const Matrix& propagator() const { return propagator_; }
    const Matrix& noise_factor() const { return factor_; }
    Vec step(const Vec& x, const Vec& noise) const;

private:
    Matrix propagator_;
    Matrix factor_;
};

/// N independent paths of the scenario with every Theorem-style functional
/// accumulated on the step grid (left-point Riemann sums; M_t from the
/// martingale identity M_t = U(X_t) - U(x0) + int H ds). Paths are
/// embarrassingly parallel over `workers` threads with counter-based per-path
/// noise substreams, so results are bit-identical for any worker count.
PathEnsemble simulate_batch(const DiffusionScenario& s, const Corrector& u, const SimConfig& cfg,
                            const std::optional<LyapunovSpec>& lyapunov = {});

/// Step control for the Euler schemes: starting from h0, halves the step
/// until the coupled pilot change of S^kappa at t_end falls below tol.
/// Coarse and fine paths share Brownian increments (pairs summed), so the
/// comparison sees the discretization shift, not Monte Carlo noise.
double pilot_refined_step(const DiffusionScenario& s, double t_end, double h0,
                          std::size_t pilot_paths = 64, double tol = 0.01,
                          std::uint64_t seed = 5150, int max_halvings = 4);

}  // namespace mdev
