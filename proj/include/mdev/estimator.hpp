#pragma once

#include "mdev/mdp.hpp"

namespace mdev {

/// Raw per-path integrals the drift estimator is built from.
struct PathIntegrals {
    double int_x_dx = 0.0;  // Ito integral of X dX
    double int_x2 = 0.0;    // int X^2 ds
};

/// theta_hat = -int X dX / int X^2 ds, the drift estimator of
/// dX = -theta X dt + dW. Throws on a nonpositive denominator.
double theta_hat(const PathIntegrals& integrals);

struct EstimatorConfig {
    double theta = 1.0;
    double kappa = 0.6;
    std::vector<double> checkpoints{50.0, 100.0, 200.0};
    double step = 0.05;
    std::size_t paths = 1;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    double x0 = 1.0;
    bool stationary_start = false;

    void validate() const;
};

/// Per-path, per-checkpoint estimator data (flat, path-major). The Ito
/// integral is carried twice: the left-point sum (raw, step-size diagnostic)
/// and the identity value (X_t^2 - x0^2 - t)/2, which is exact for sigma = 1
/// and is what theta_hat uses.
struct EstimatorRun {
    EstimatorConfig config;
    std::size_t paths = 0;
    std::vector<double> checkpoints;

    Vec theta_hats;          // paths x K, NaN on excluded paths
    Vec scaled_errors;       // t^{1-kappa} (theta - theta_hat)
    Vec int_x_dx_leftsum;    // paths x K
    Vec int_x_dx_identity;   // paths x K
    Vec int_x2;              // paths x K
    std::size_t degenerate_paths = 0;  // nonpositive denominator, excluded
    std::size_t identity_violations = 0;  // |leftsum - identity| > h t somewhere
    bool step_flagged = false;            // over 1% of paths violated the tolerance

    double theta_hat_at(std::size_t p, std::size_t k) const {
        return theta_hats[p * checkpoints.size() + k];
    }
    double scaled_error_at(std::size_t p, std::size_t k) const {
        return scaled_errors[p * checkpoints.size() + k];
    }
};

/// Exact-transition OU ensemble with all estimator integrals accumulated.
EstimatorRun run_estimator(const EstimatorConfig& cfg);

/// Delta-method Gaussian oracle for P(t^{1-kappa}|theta - theta_hat| > delta):
/// rho(t) log(2 Phi-bar(delta sqrt(mu_t) / t^{1-kappa})) with mu_t the exact
/// mean of int_0^t X^2 ds for the configured start.
double estimator_gaussian_oracle(const EstimatorConfig& cfg, double delta, double t);

struct EstimatorExperiment {
    EstimatorConfig config;
    std::vector<MdpCurve> error_curves;  // one per delta; reference -delta^2/(4 theta)
    MdpCurve negligibility_curve;        // |int 4 theta^2 X^2 - 2 theta t| > t eps
    std::vector<Vec> oracle_rows;        // per delta, per checkpoint
    std::size_t degenerate_paths = 0;
    bool step_flagged = false;
};

/// Simulates the ensemble and assembles the MDP curves of the scaled
/// estimation error, with the theoretical reference -delta^2/(4 theta) and
/// the companion bracket-negligibility curve.
EstimatorExperiment estimator_mdp_experiment(const EstimatorConfig& cfg, const Vec& deltas,
                                             double negligibility_eps = 0.2);

}  // namespace mdev
