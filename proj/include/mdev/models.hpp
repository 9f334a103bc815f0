#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdev/linalg.hpp"

namespace mdev {

/// (A, B) of dX = AX dt + B dW when the scenario is linear.
struct LinearPart {
    Matrix a;
    Matrix b;
};

/// Closed-form corrector attached to a scenario, when one is known.
struct ClosedFormCorrector {
    std::function<Vec(const Vec&)> value;      // U : R^d -> R^q
    std::function<Matrix(const Vec&)> gradient;  // q x d
};

struct DiffusionScenario {
    std::size_t dimension = 1;       // d
    std::size_t noise_dimension = 1; // m (columns of sigma)
    std::size_t observable_dim = 1;  // q

    std::function<Vec(const Vec&)> drift;          // b
    std::function<Matrix(const Vec&)> diffusion;   // sigma, d x m
    std::function<Vec(const Vec&)> observable;     // H, mean-zero under mu

    std::optional<LinearPart> linear_part;
    std::optional<Matrix> linear_observable;   // C when H(x) = C x
    std::optional<Matrix> observable_gamma;    // Gamma when H(x) = <x,Gamma x> - offset
    double observable_offset = 0.0;
    std::optional<Matrix> contraction;         // T of the contraction examples
    std::optional<ClosedFormCorrector> known_corrector;

    double kappa = 0.6;  // strictly inside (1/2, 1)
    Vec initial_point;
    bool superlinear_drift = false;  // plain Euler diverges; tamed scheme required
    std::vector<std::string> required_assumptions;  // what the scenario's theorem needs
    std::string label;
    std::string notes;  // documented parameters, growth classes ((A_H) bookkeeping)

    /// a(x) = sigma sigma^T (x).
    Matrix diffusion_squared(const Vec& x) const;
    /// Throws std::invalid_argument on violated invariants (kappa range,
    /// dimension mismatches, linear part inconsistent with the callables).
    void validate() const;
};

enum class Verdict { Pass, Fail, Inconclusive };
std::string to_string(Verdict v);

struct AssumptionCheck {
    Verdict verdict = Verdict::Inconclusive;
    std::map<std::string, double> constants;  // fitted envelope constants
    std::string detail;
};

struct AssumptionReport {
    std::map<std::string, AssumptionCheck> checks;
    std::string grid_description;

    bool has(const std::string& name) const { return checks.count(name) != 0; }
    Verdict verdict(const std::string& name) const;
    /// Pass iff every assumption the scenario declares as required passes.
    bool required_pass(const DiffusionScenario& s) const;
};

/// Sampling layout for the numerical assumption checks: radii in
/// [inner_radius, outer_radius] with several directions each, plus random
/// point pairs for the two-point dissipativity test.
struct SamplingGrid {
    double inner_radius = 1.0;   // the C of (A_b): envelope fitted outside it
    double outer_radius = 8.0;
    std::size_t radial_points = 24;
    std::size_t directions = 16;
    std::size_t pair_samples = 256;
    std::uint64_t seed = 1234;
};

/// Numerically tests (A_b), (A_sigma_a), (A'_{b,sigma}) on the grid, and
/// (A) / (A_B) when the scenario is linear. Verdicts are sampled diagnostics,
/// not proofs; mixed evidence is reported as Inconclusive.
AssumptionReport check_assumptions(const DiffusionScenario& s, const SamplingGrid& grid = {});

/// The example registry. Names: cubic, ou-sign, langevin, smooth-component,
/// quadratic-sign, ou-linear, ou-quadratic, estimator.
DiffusionScenario builtin_scenario(const std::string& name);
std::vector<std::string> builtin_scenario_names();

/// dX = -theta X dt + dW with H(x) = x; the drift-estimation scenario.
DiffusionScenario ou_scenario(double theta, double kappa);

/// Normalized invariant density of a 1-D scenario on a uniform grid.
struct TabulatedDensity {
    double x_lo = 0.0;
    double step = 0.0;
    Vec values;

    std::size_t size() const { return values.size(); }
    double x_at(std::size_t i) const { return x_lo + step * static_cast<double>(i); }
    double x_hi() const { return x_at(size() - 1); }
    /// Linear interpolation; zero outside the table.
    double operator()(double x) const;
};

/// p proportional to a(z)^{-1} exp(2 int b/a) on [lo, hi], normalized to unit
/// mass. Throws if the truncated tail mass exceeds 1e-12 or the candidate
/// density is not integrable.
TabulatedDensity invariant_density_1d(const DiffusionScenario& s, double lo, double hi,
                                      std::size_t npoints);
/// Automatic domain: expands geometrically until the boundary density falls
/// below 1e-16 of the peak on both sides.
TabulatedDensity invariant_density_1d(const DiffusionScenario& s, std::size_t npoints = 16001);

}  // namespace mdev
