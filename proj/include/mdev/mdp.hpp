#pragma once

#include <limits>
#include <optional>

#include "mdev/sim.hpp"

namespace mdev {

/// Quadratic rate function J(Y) = (1/2) <Y, Q+ Y> on the range of Q, +infinity
/// off it (range membership tested against range_tol).
struct RateFunction {
    Matrix q;
    Matrix pinv;
    Matrix projector;  // Q Q+
    std::size_t rank = 0;
    RankTolerance rank_tol;
    double range_tol = 1e-8;

    static RateFunction from_q(const Matrix& q, RankTolerance tol = {}, double range_tol = 1e-8);
};

double rate_J(const RateFunction& rf, const Vec& y);

/// J_gamma(Y) = (1/2) <Y, (Q + gamma I)^{-1} Y>, finite for every Y.
double rate_J_regularized(const RateFunction& rf, const Vec& y, double gamma);

/// Contraction j(y) = inf { J(Y) : T Y = y } = (1/2) <y, (T Q T*)+ y> when y
/// lies in the range of T Q T*, +infinity otherwise.
double contract_rate(const RateFunction& rf, const Matrix& t_map, const Vec& y);
/// Independent route: minimum-norm fiber minimization by conjugate gradient on
/// (T Q^{1/2})(T Q^{1/2})* w = y, tolerance 1e-10.
double contract_rate_numeric(const RateFunction& rf, const Matrix& t_map, const Vec& y);

enum class CurveStatistic {
    SNormExceedsDelta,        // |S^kappa_t| > delta
    CorrectorCondition,       // |U(x0) - U(X_t)| > t^kappa eps   (condition (i))
    BracketCondition,         // |<M>_t - t Q| > t eps            (condition (ii))
    LyapunovIntegralExceeds,  // int V^ell ds > t n
};
std::string to_string(CurveStatistic s);

struct MdpCurveRow {
    double t = 0.0;
    std::size_t exceed_count = 0;
    std::size_t paths = 0;
    double p_hat = 0.0;
    double rho_log_p = 0.0;
    double se_log = 0.0;
    bool clamped = false;
};

struct MdpCurve {
    CurveStatistic statistic = CurveStatistic::SNormExceedsDelta;
    double threshold = 0.0;
    double kappa = 0.6;
    std::vector<MdpCurveRow> rows;
    /// -delta^2/(2 lambda_max(Q)) for the S-curve; -infinity marks the
    /// negligibility conditions whose theoretical limit diverges.
    double reference = -std::numeric_limits<double>::infinity();
};

/// Exceedance curve of rho(t) log p_hat across the ensemble's checkpoints.
/// Zero counts are clamped to p_hat = 1/(2N) with the clamped flag raised;
/// the standard error of log p_hat comes from the binomial delta method.
MdpCurve empirical_rate_curve(const PathEnsemble& ensemble, CurveStatistic statistic,
                              double threshold, const std::optional<Matrix>& q_ref = {});

/// One curve row from exceedance counts (clamping and delta-method SE as
/// above); shared by every curve builder.
MdpCurveRow curve_row_from_counts(double t, std::size_t exceed, std::size_t paths, double kappa);

/// Deterministic oracle for linear systems with a scalar linear observable
/// H = C x: v(t) = Var(int_0^t C X ds) by quadrature of the stationary
/// autocovariance (or the moment ODE for the transient start), then
/// rho(t) log(2 Phi-bar(delta t^kappa / sqrt(v))).
double gaussian_exact_rate(const LinearPart& sys, const Matrix& c, double kappa, double delta,
                           double t, bool stationary);

/// The two deterministic upper bounds from the exponential-negligibility
/// machinery: rho(t) log P(V(X_t) > t^{2 kappa} eps) and
/// rho(t) log P(int V^ell > t n).
struct NegligibilityBounds {
    double tail = 0.0;
    double integral = 0.0;
};
NegligibilityBounds bound_A1(double c, double c_frak, double c_bold, double v0, double eps,
                             double n, double kappa, double t);
/// -t^{2(1-kappa)} eps^2 / (2n), the martingale negligibility rate.
double bound_A2(double eps, double n, double kappa, double t);

/// Envelope fit of the Lyapunov drift condition L V <= -c V^ell + c_frak and
/// the bracket bound grad V a grad V* <= c_bold (1 + V^r) over a probe grid.
struct DriftDiagnostics {
    double c = 0.0;
    double c_frak = 0.0;
    double c_bold = 0.0;
    double ell = 0.0;
    double r = 0.0;
    Verdict verdict = Verdict::Inconclusive;
};
DriftDiagnostics drift_diagnostics(const DiffusionScenario& s,
                                   const std::function<double(const Vec&)>& v, double ell,
                                   double r, const std::vector<Vec>& grid, double fd_step = 1e-5);

}  // namespace mdev
