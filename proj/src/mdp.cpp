#include "mdev/mdp.hpp"

#include <algorithm>
#include <cmath>

#include "mdev/quadrature.hpp"

namespace mdev {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix symmetric_sqrt(const Matrix& m) {
    const SymmetricEigen eig = symmetric_eigen(m);
    const std::size_t n = m.rows();
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double lam = eig.values[k] > 0.0 ? std::sqrt(eig.values[k]) : 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out(i, j) += lam * eig.vectors(i, k) * eig.vectors(j, k);
    }
    return out;
}

}  // namespace

RateFunction RateFunction::from_q(const Matrix& q, RankTolerance tol, double range_tol) {
    RateFunction rf;
    rf.q = q;
    const PseudoInverse pi = pseudo_inverse(q, tol);
    rf.pinv = pi.pinv;
    rf.projector = pi.range_projector;
    rf.rank = pi.rank;
    rf.rank_tol = tol;
    rf.range_tol = range_tol;
    return rf;
}

double rate_J(const RateFunction& rf, const Vec& y) {
    if (y.size() != rf.q.rows()) throw std::invalid_argument("rate_J: dimension mismatch");
    const Vec projected = rf.projector * y;
    if (norm(y - projected) > rf.range_tol * std::max(1.0, norm(y))) return kInf;
    return 0.5 * dot(y, rf.pinv * y);
}

double rate_J_regularized(const RateFunction& rf, const Vec& y, double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("rate_J_regularized: gamma must be positive");
    if (y.size() != rf.q.rows())
        throw std::invalid_argument("rate_J_regularized: dimension mismatch");
    Matrix q_gamma = rf.q;
    for (std::size_t i = 0; i < q_gamma.rows(); ++i) q_gamma(i, i) += gamma;
    return 0.5 * dot(y, solve_linear(q_gamma, y));
}

double contract_rate(const RateFunction& rf, const Matrix& t_map, const Vec& y) {
    if (t_map.cols() != rf.q.rows()) throw std::invalid_argument("contract_rate: T column mismatch");
    if (y.size() != t_map.rows()) throw std::invalid_argument("contract_rate: y dimension mismatch");
    const Matrix m = t_map * rf.q * t_map.transposed();
    const PseudoInverse pi = pseudo_inverse(m, rf.rank_tol);
    const Vec projected = pi.range_projector * y;
    if (norm(y - projected) > rf.range_tol * std::max(1.0, norm(y))) return kInf;
    return 0.5 * dot(y, pi.pinv * y);
}

double contract_rate_numeric(const RateFunction& rf, const Matrix& t_map, const Vec& y) {
    if (t_map.cols() != rf.q.rows()) throw std::invalid_argument("contract_rate: T column mismatch");
    if (y.size() != t_map.rows()) throw std::invalid_argument("contract_rate: y dimension mismatch");
    // J(Y) = (1/2)|u|^2 under Y = Q^{1/2} u, so the fiber minimum is the
    // minimum-norm solution of (T Q^{1/2}) u = y: solve G G^T w = y by CG.
    const Matrix g = t_map * symmetric_sqrt(rf.q);
    const Matrix gram = g * g.transposed();
    const std::size_t p = y.size();

    Vec w(p, 0.0);
    Vec residual = y;
    Vec direction = residual;
    const double y_norm = std::max(norm(y), 1e-300);
    double rho = dot(residual, residual);
    for (std::size_t it = 0; it < 40 * p && std::sqrt(rho) > 1e-12 * y_norm; ++it) {
        const Vec gd = gram * direction;
        const double denom = dot(direction, gd);
        if (denom <= 1e-300 * rho) break;  // direction in the null space
        const double alpha = rho / denom;
        for (std::size_t i = 0; i < p; ++i) {
            w[i] += alpha * direction[i];
            residual[i] -= alpha * gd[i];
        }
        const double rho_next = dot(residual, residual);
        const double beta = rho_next / rho;
        rho = rho_next;
        for (std::size_t i = 0; i < p; ++i) direction[i] = residual[i] + beta * direction[i];
    }
    if (norm(residual) > 1e-10 * std::max(1.0, y_norm)) return kInf;  // infeasible fiber
    const Vec u = g.transposed() * w;
    return 0.5 * dot(u, u);
}

std::string to_string(CurveStatistic s) {
    switch (s) {
        case CurveStatistic::SNormExceedsDelta: return "s_norm";
        case CurveStatistic::CorrectorCondition: return "condition_i";
        case CurveStatistic::BracketCondition: return "condition_ii";
        default: return "lyapunov_integral";
    }
}

MdpCurveRow curve_row_from_counts(double t, std::size_t exceed, std::size_t paths, double kappa) {
    if (paths == 0) throw std::invalid_argument("curve_row_from_counts: no paths");
    MdpCurveRow row;
    row.t = t;
    row.exceed_count = exceed;
    row.paths = paths;
    if (exceed == 0) {
        row.p_hat = 0.5 / static_cast<double>(paths);
        row.clamped = true;
    } else {
        row.p_hat = static_cast<double>(exceed) / static_cast<double>(paths);
    }
    row.rho_log_p = std::pow(t, -(2.0 * kappa - 1.0)) * std::log(row.p_hat);
    row.se_log = std::sqrt((1.0 - row.p_hat) / (static_cast<double>(paths) * row.p_hat));
    return row;
}

MdpCurve empirical_rate_curve(const PathEnsemble& ensemble, CurveStatistic statistic,
                              double threshold, const std::optional<Matrix>& q_ref) {
    if (ensemble.paths == 0) throw std::invalid_argument("empirical_rate_curve: empty ensemble");
    if (statistic == CurveStatistic::BracketCondition && !q_ref)
        throw std::invalid_argument("empirical_rate_curve: condition (ii) needs Q");
    if (statistic == CurveStatistic::LyapunovIntegralExceeds && !ensemble.has_lyapunov)
        throw std::invalid_argument(
            "empirical_rate_curve: ensemble carries no Lyapunov functional");

    MdpCurve curve;
    curve.statistic = statistic;
    curve.threshold = threshold;
    curve.kappa = ensemble.kappa;

    const std::size_t q = ensemble.q;
    const std::size_t n_ck = ensemble.checkpoints.size();
    for (std::size_t k = 0; k < n_ck; ++k) {
        const double t = ensemble.checkpoints[k];
        const double t_pow = std::pow(t, ensemble.kappa);
        std::size_t exceed = 0, valid = 0;
        for (std::size_t p = 0; p < ensemble.paths; ++p) {
            double value = 0.0;
            bool ok = true;
            switch (statistic) {
                case CurveStatistic::SNormExceedsDelta: {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < q; ++c) {
                        const double v = ensemble.s_at(p, k, c);
                        acc += v * v;
                    }
                    value = std::sqrt(acc);
                    break;
                }
                case CurveStatistic::CorrectorCondition: {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < q; ++c) {
                        const double v = ensemble.corrector_at(p, k, c) * t_pow;
                        acc += v * v;
                    }
                    value = std::sqrt(acc) / t_pow;  // compare to eps after / t^kappa
                    break;
                }
                case CurveStatistic::BracketCondition: {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < q; ++c)
                        for (std::size_t e = 0; e < q; ++e) {
                            const double v =
                                ensemble.bracket_at(p, k, c, e) - t * (*q_ref)(c, e);
                            acc += v * v;
                        }
                    value = std::sqrt(acc) / t;
                    break;
                }
                case CurveStatistic::LyapunovIntegralExceeds:
                    value = ensemble.lyap_integral[p * n_ck + k] / t;
                    break;
            }
            if (!std::isfinite(value)) {
                ok = false;  // aborted path
            }
            if (ok) {
                ++valid;
                if (value > threshold) ++exceed;
            }
        }
        if (valid == 0) throw std::invalid_argument("empirical_rate_curve: no valid paths");
        curve.rows.push_back(curve_row_from_counts(t, exceed, valid, ensemble.kappa));
    }

    if (statistic == CurveStatistic::SNormExceedsDelta && q_ref) {
        const auto eig = symmetric_eigen(*q_ref);
        const double lam_max = eig.values.back();
        curve.reference = lam_max > 0.0 ? -threshold * threshold / (2.0 * lam_max) : -kInf;
    }
    return curve;
}

double gaussian_exact_rate(const LinearPart& sys, const Matrix& c, double kappa, double delta,
                           double t, bool stationary) {
    if (c.rows() != 1 || c.cols() != sys.a.rows())
        throw std::invalid_argument("gaussian_exact_rate: C must be a single row over the state");
    if (!(spectral_abscissa(sys.a) < 0.0))
        throw std::invalid_argument("gaussian_exact_rate: A is not Hurwitz");
    if (!(t > 0.0)) throw std::invalid_argument("gaussian_exact_rate: t must be positive");
    if (!(kappa > 0.5) || !(kappa < 1.0))
        throw std::invalid_argument("gaussian_exact_rate: kappa must lie inside (1/2, 1)");

    double variance = 0.0;
    if (stationary) {
        // v(t) = 2 int_0^t (t - tau) C e^{tau A} P C* dtau; the kernel decays
        // at the spectral rate, so the integration window is capped there.
        const Matrix p = solve_lyapunov(sys.a, sys.b * sys.b.transposed());
        const double lambda = -spectral_abscissa(sys.a);
        const double window = std::min(t, 80.0 / lambda);
        const auto kernel = [&](double tau) {
            return (c * mat_exp(sys.a, tau) * p * c.transposed())(0, 0);
        };
        variance = 2.0 * integrate_adaptive(
                             [&](double tau) { return (t - tau) * kernel(tau); }, 0.0, window,
                             1e-11 * std::max(1.0, t * std::abs(kernel(0.0))));
    } else {
        // Transient start: augment with Y = int C X ds and read Var(Y_t) off
        // the covariance ODE.
        const std::size_t d = sys.a.rows();
        Matrix a_aug(d + 1, d + 1);
        Matrix b_aug(d + 1, sys.b.cols());
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) a_aug(i, j) = sys.a(i, j);
        for (std::size_t j = 0; j < d; ++j) a_aug(d, j) = c(0, j);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < sys.b.cols(); ++j) b_aug(i, j) = sys.b(i, j);
        variance = covariance_horizon(a_aug, b_aug, t)(d, d);
    }
    if (!(variance > 0.0)) return 0.0;
    const double z = delta * std::pow(t, kappa) / std::sqrt(variance);
    return std::pow(t, -(2.0 * kappa - 1.0)) * log_two_sided_tail(z);
}

NegligibilityBounds bound_A1(double c, double c_frak, double c_bold, double v0, double eps,
                             double n, double kappa, double t) {
    if (!(c > 0.0) || !(c_bold > 0.0) || c_frak < 0.0 || !(eps > 0.0) || !(n > 0.0))
        throw std::invalid_argument("bound_A1: constants must be positive");
    if (!(kappa > 0.5) || !(kappa < 1.0))
        throw std::invalid_argument("bound_A1: kappa must lie inside (1/2, 1)");
    const double ratio = c / c_bold;
    const double grow = std::pow(t, 2.0 * (1.0 - kappa));
    const double decay = std::pow(t, 2.0 * kappa - 1.0);
    NegligibilityBounds out;
    out.tail = -ratio * (t * eps - v0 / decay) + grow * ratio * (c_frak + c);
    out.integral = ratio * v0 / decay + grow * ratio * (c_frak + c) - grow * (c * c / (2.0 * c_bold)) * n;
    return out;
}

double bound_A2(double eps, double n, double kappa, double t) {
    if (!(eps > 0.0) || !(n > 0.0)) throw std::invalid_argument("bound_A2: eps and n must be positive");
    return -std::pow(t, 2.0 * (1.0 - kappa)) * eps * eps / (2.0 * n);
}

DriftDiagnostics drift_diagnostics(const DiffusionScenario& s,
                                   const std::function<double(const Vec&)>& v, double ell,
                                   double r, const std::vector<Vec>& grid, double fd_step) {
    if (grid.size() < 4) throw std::invalid_argument("drift_diagnostics: grid too small");
    if (!(ell > 0.0) || r > ell) throw std::invalid_argument("drift_diagnostics: need 0 < r <= ell");
    const std::size_t d = s.dimension;

    DriftDiagnostics out;
    out.ell = ell;
    out.r = r;

    // L V and the bracket density grad V a grad V* by central differences.
    Vec v_ell, lv, bracket_ratio;
    for (const Vec& x : grid) {
        const double vx = v(x);
        Vec grad(d);
        Matrix hess(d, d);
        for (std::size_t i = 0; i < d; ++i) {
            Vec xp = x, xm = x;
            const double hi = fd_step * (1.0 + std::abs(x[i]));
            xp[i] += hi;
            xm[i] -= hi;
            grad[i] = (v(xp) - v(xm)) / (2.0 * hi);
            hess(i, i) = (v(xp) - 2.0 * vx + v(xm)) / (hi * hi);
            for (std::size_t j = i + 1; j < d; ++j) {
                const double hj = fd_step * (1.0 + std::abs(x[j]));
                Vec xpp = x, xpm = x, xmp = x, xmm = x;
                xpp[i] += hi; xpp[j] += hj;
                xpm[i] += hi; xpm[j] -= hj;
                xmp[i] -= hi; xmp[j] += hj;
                xmm[i] -= hi; xmm[j] -= hj;
                hess(i, j) = (v(xpp) - v(xpm) - v(xmp) + v(xmm)) / (4.0 * hi * hj);
                hess(j, i) = hess(i, j);
            }
        }
        const Matrix a = s.diffusion_squared(x);
        const Vec b = s.drift(x);
        double lvx = dot(b, grad);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) lvx += 0.5 * a(i, j) * hess(i, j);
        if (!std::isfinite(lvx) || !std::isfinite(vx))
            throw std::runtime_error("drift_diagnostics: non-finite V or L V on the grid");
        v_ell.push_back(std::pow(std::max(vx, 0.0), ell));
        lv.push_back(lvx);
        const double gag = dot(grad, a * grad);
        bracket_ratio.push_back(gag / (1.0 + std::pow(std::max(vx, 0.0), r)));
    }

    // Fit -c from the tail half of the (V^ell, L V) cloud by least squares,
    // then lift c_frak to make the envelope exact on the whole grid.
    Vec sorted = v_ell;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    double sx = 0, sy = 0, sxx = 0, sxy = 0, count = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (v_ell[i] < median) continue;
        sx += v_ell[i];
        sy += lv[i];
        sxx += v_ell[i] * v_ell[i];
        sxy += v_ell[i] * lv[i];
        count += 1.0;
    }
    const double denom = count * sxx - sx * sx;
    const double slope = std::abs(denom) > 1e-300 ? (count * sxy - sx * sy) / denom : 0.0;
    out.c = -slope;
    if (!(out.c > 0.0) || !std::isfinite(out.c)) {
        out.verdict = Verdict::Fail;
        return out;
    }
    double c_frak = -kInf;
    for (std::size_t i = 0; i < grid.size(); ++i)
        c_frak = std::max(c_frak, lv[i] + out.c * v_ell[i]);
    out.c_frak = std::max(c_frak, 0.0);
    out.c_bold = *std::max_element(bracket_ratio.begin(), bracket_ratio.end());
    out.verdict = out.c_bold > 0.0 ? Verdict::Pass : Verdict::Inconclusive;
    return out;
}

}  // namespace mdev
