#include "mdev/corrector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdev/quadrature.hpp"
#include "mdev/rng.hpp"

namespace mdev {

namespace {

double std_normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

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

/// Clip negligibly negative eigenvalues so downstream PSD expectations hold.
Matrix psd_clip(const Matrix& m) {
    Matrix s = m;
    s.symmetrize();
    const SymmetricEigen eig = symmetric_eigen(s);
    double max_abs = 0.0;
    for (double v : eig.values) max_abs = std::max(max_abs, std::abs(v));
    if (eig.values.front() >= 0.0) return s;
    if (eig.values.front() < -1e-7 * (1.0 + max_abs)) return s;  // genuinely indefinite: keep
    const std::size_t n = s.rows();
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double lam = std::max(eig.values[k], 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out(i, j) += lam * eig.vectors(i, k) * eig.vectors(j, k);
    }
    return out;
}

void for_each_tensor_node(const GaussHermite& rule, std::size_t d,
                          const std::function<void(const Vec&, double)>& f) {
    std::vector<std::size_t> idx(d, 0);
    Vec z(d);
    while (true) {
        double w = 1.0;
        for (std::size_t k = 0; k < d; ++k) {
            z[k] = rule.nodes[idx[k]];
            w *= rule.weights[idx[k]];
        }
        f(z, w);
        std::size_t k = 0;
        while (k < d && ++idx[k] == rule.nodes.size()) {
            idx[k] = 0;
            ++k;
        }
        if (k == d) break;
    }
}

}  // namespace

std::string to_string(CorrectorKind k) {
    switch (k) {
        case CorrectorKind::ClosedForm: return "closed_form";
        case CorrectorKind::Quadratic: return "quadratic";
        case CorrectorKind::Tabulated1d: return "tabulated1d";
        default: return "gaussian_quadrature";
    }
}

std::string to_string(QMethod m) {
    switch (m) {
        case QMethod::Stationary: return "stationary";
        case QMethod::GreenKubo: return "green_kubo";
        default: return "closed_form";
    }
}

void CovarianceQ::validate() const {
    if (!q.square()) throw std::invalid_argument("CovarianceQ: matrix must be square");
    if (q.symmetry_defect() > 1e-10)
        throw NumericError("CovarianceQ: matrix is not symmetric within 1e-10");
    const auto eig = symmetric_eigen(q);
    if (eig.values.front() < -1e-10)
        throw NumericError("CovarianceQ: negative eigenvalue " + std::to_string(eig.values.front()));
}

Corrector corrector_from_closed_form(const DiffusionScenario& s) {
    if (!s.known_corrector)
        throw std::invalid_argument("corrector_from_closed_form: scenario has no known corrector");
    Corrector u;
    u.kind = CorrectorKind::ClosedForm;
    u.state_dim = s.dimension;
    u.observable_dim = s.observable_dim;
    u.value = s.known_corrector->value;
    u.gradient = s.known_corrector->gradient;
    return u;
}

Corrector solve_poisson_1d(const DiffusionScenario& s, const TabulatedDensity& p) {
    if (s.dimension != 1) throw std::invalid_argument("solve_poisson_1d: requires d = 1");
    const std::size_t n = p.size();
    if (n < 9) throw std::invalid_argument("solve_poisson_1d: density table too small");
    const double h = p.step;
    const std::size_t q = s.observable_dim;

    const double p_max = *std::max_element(p.values.begin(), p.values.end());
    std::size_t i_lo = 0, i_hi = n - 1;
    while (i_lo < i_hi && p.values[i_lo] < 1e-13 * p_max) ++i_lo;
    while (i_hi > i_lo && p.values[i_hi] < 1e-13 * p_max) --i_hi;
    for (std::size_t i = i_lo; i <= i_hi; ++i)
        if (!(p.values[i] > 0.0))
            throw std::runtime_error("solve_poisson_1d: density vanishes inside the domain at x=" +
                                     std::to_string(p.x_at(i)));

    // Tabulate H and a on the grid.
    std::vector<Vec> hval(q, Vec(n));
    Vec aval(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec hx = s.observable({p.x_at(i)});
        for (std::size_t c = 0; c < q; ++c) hval[c][i] = hx[c];
        aval[i] = s.diffusion_squared({p.x_at(i)})(0, 0);
    }

    // Cumulative trapezoid of p; reused to recenter H so the cumulative of
    // (H - mean) p lands at exactly zero and the tail ratio stays finite.
    Vec cum_p(n, 0.0);
    for (std::size_t i = 1; i < n; ++i)
        cum_p[i] = cum_p[i - 1] + 0.5 * h * (p.values[i - 1] + p.values[i]);

    auto tab = std::make_shared<TabulatedCorrector1d>();
    tab->x_lo = p.x_lo;
    tab->step = h;
    tab->u.assign(q, Vec(n, 0.0));
    tab->du.assign(q, Vec(n, 0.0));

    for (std::size_t c = 0; c < q; ++c) {
        Vec cum(n, 0.0);
        for (std::size_t i = 1; i < n; ++i)
            cum[i] = cum[i - 1] +
                     0.5 * h * (hval[c][i - 1] * p.values[i - 1] + hval[c][i] * p.values[i]);
        const double mean = cum[n - 1] / cum_p[n - 1];
        if (std::abs(mean) > 1e-6)
            throw std::invalid_argument("solve_poisson_1d: H component " + std::to_string(c) +
                                        " is not mean-zero under p (mean " + std::to_string(mean) +
                                        ")");
        Vec& du = tab->du[c];
        for (std::size_t i = i_lo; i <= i_hi; ++i)
            du[i] = -2.0 * (cum[i] - mean * cum_p[i]) / (aval[i] * p.values[i]);
        for (std::size_t i = 0; i < i_lo; ++i) du[i] = du[i_lo];
        for (std::size_t i = i_hi + 1; i < n; ++i) du[i] = du[i_hi];

        Vec& u = tab->u[c];
        for (std::size_t i = 1; i < n; ++i) u[i] = u[i - 1] + 0.5 * h * (du[i - 1] + du[i]);
        Vec up(n);
        for (std::size_t i = 0; i < n; ++i) up[i] = u[i] * p.values[i];
        const double u_mean = simpson_tabulated(up, h);
        for (double& v : u) v -= u_mean;
    }

    // Substitute back into (1/2) a U'' + b U' = -H on interior probes; the
    // 0.9-quantile guards against a broken density or formula while staying
    // insensitive to isolated kinks of H.
    for (std::size_t c = 0; c < q; ++c) {
        Vec resid;
        const std::size_t stride = std::max<std::size_t>(1, (i_hi - i_lo) / 400);
        for (std::size_t i = i_lo + 4; i + 4 <= i_hi; i += stride) {
            const double x = p.x_at(i);
            const double upp = (tab->du[c][i + 1] - tab->du[c][i - 1]) / (2.0 * h);
            const double r = 0.5 * aval[i] * upp + s.drift({x})[0] * tab->du[c][i] + hval[c][i];
            resid.push_back(std::abs(r));
        }
        std::sort(resid.begin(), resid.end());
        double scale = 1.0;
        for (std::size_t i = i_lo; i <= i_hi; ++i) scale = std::max(scale, std::abs(hval[c][i]));
        if (!resid.empty() && resid[resid.size() * 9 / 10] > 2e-2 * scale)
            throw NumericError("solve_poisson_1d: generator substitution check failed");
    }

    Corrector u;
    u.kind = CorrectorKind::Tabulated1d;
    u.state_dim = 1;
    u.observable_dim = q;
    u.table = tab;
    u.value = [tab, q](const Vec& x) {
        Vec out(q);
        const double last = static_cast<double>(tab->size() - 1);
        const double pos = std::clamp((x[0] - tab->x_lo) / tab->step, 0.0, last);
        const auto i = static_cast<std::size_t>(std::min(pos, last - 1.0));
        const double frac = pos - static_cast<double>(i);
        for (std::size_t c = 0; c < q; ++c)
            out[c] = tab->u[c][i] * (1.0 - frac) + tab->u[c][i + 1] * frac;
        return out;
    };
    u.gradient = [tab, q](const Vec& x) {
        Matrix g(q, 1);
        const double last = static_cast<double>(tab->size() - 1);
        const double pos = std::clamp((x[0] - tab->x_lo) / tab->step, 0.0, last);
        const auto i = static_cast<std::size_t>(std::min(pos, last - 1.0));
        const double frac = pos - static_cast<double>(i);
        for (std::size_t c = 0; c < q; ++c)
            g(c, 0) = tab->du[c][i] * (1.0 - frac) + tab->du[c][i + 1] * frac;
        return g;
    };
    return u;
}

Corrector solve_poisson_quadratic(const LinearPart& sys, const Matrix& gamma) {
    if (!sys.a.square() || gamma.rows() != sys.a.rows() || gamma.cols() != sys.a.cols())
        throw std::invalid_argument("solve_poisson_quadratic: dimension mismatch");
    if (!gamma.is_symmetric(1e-10))
        throw std::invalid_argument("solve_poisson_quadratic: Gamma must be symmetric");
    if (symmetric_eigen(gamma).values.front() < -1e-12)
        throw std::invalid_argument("solve_poisson_quadratic: Gamma must be positive semidefinite");

    // Upsilon A + A* Upsilon + Gamma = 0 is the transposed Lyapunov form.
    const Matrix upsilon = solve_lyapunov(sys.a, gamma, LyapunovConvention::Transposed);
    const Matrix p = solve_lyapunov(sys.a, sys.b * sys.b.transposed());
    const double c1 = (sys.b.transposed() * upsilon * sys.b).trace();
    const Matrix gsqrt = symmetric_sqrt(gamma);
    const double c2 = (gsqrt * p * gsqrt).trace();
    if (std::abs(c1 - c2) > 1e-8 * std::max(1.0, std::abs(c1)))
        throw NumericError(
            "solve_poisson_quadratic: trace identity tr(B*YB) = tr(G^{1/2}PG^{1/2}) failed");

    Corrector u;
    u.kind = CorrectorKind::Quadratic;
    u.state_dim = sys.a.rows();
    u.observable_dim = 1;
    u.quadratic = QuadraticCorrector{upsilon, c1};
    u.value = [upsilon, c1](const Vec& x) { return Vec{dot(x, upsilon * x) - c1}; };
    u.gradient = [upsilon](const Vec& x) {
        const Vec g = upsilon * x;
        Matrix out(1, g.size());
        for (std::size_t j = 0; j < g.size(); ++j) out(0, j) = 2.0 * g[j];
        return out;
    };
    return u;
}

namespace {

/// Time-quadrature nodes and per-node Gaussian transition data for the
/// semigroup corrector. Time is substituted t = tau^2 to absorb the 1/sqrt(t)
/// edge of the score-form gradient.
struct SemigroupData {
    std::size_t d = 1, q = 1;
    std::function<Vec(const Vec&)> h;
    std::function<Matrix(const Vec&)> grad_h;
    bool score_gradient = false;
    double spatial_tol = 1e-10;
    std::size_t hermite_order = 64;
    Vec weights;                       // Simpson weight x 2 tau
    std::vector<Matrix> prop;          // e^{t_j A}
    Vec sigma;                         // d == 1: sqrt(P_{t_j})
    std::vector<Matrix> factor;        // d >= 2: psd factor of P_{t_j}
    std::vector<Matrix> factor_inv_t;  // (F^T)^{-1}, score route
};

Vec semigroup_g(const SemigroupData& g, std::size_t j, const Vec& m) {
    Vec out(g.q, 0.0);
    if (g.d == 1) {
        const double s = g.sigma[j];
        if (s < 1e-12) return g.h(m);
        for (std::size_t c = 0; c < g.q; ++c)
            out[c] = integrate_adaptive(
                [&](double z) { return g.h({m[0] + s * z})[c] * std_normal_pdf(z); }, -8.5, 8.5,
                g.spatial_tol);
        return out;
    }
    const auto& rule = gauss_hermite(g.hermite_order);
    for_each_tensor_node(rule, g.d, [&](const Vec& z, double w) {
        const Vec h = g.h(m + g.factor[j] * z);
        for (std::size_t c = 0; c < g.q; ++c) out[c] += w * h[c];
    });
    return out;
}

// d/dm of E H(m + F z), q x d.
Matrix semigroup_dg(const SemigroupData& g, std::size_t j, const Vec& m) {
    Matrix out(g.q, g.d);
    if (!g.score_gradient) {
        if (g.d == 1) {
            const double s = g.sigma[j];
            if (s < 1e-12) return g.grad_h(m);
            for (std::size_t c = 0; c < g.q; ++c)
                out(c, 0) = integrate_adaptive(
                    [&](double z) { return g.grad_h({m[0] + s * z})(c, 0) * std_normal_pdf(z); },
                    -8.5, 8.5, g.spatial_tol);
            return out;
        }
        const auto& rule = gauss_hermite(g.hermite_order);
        for_each_tensor_node(rule, g.d, [&](const Vec& z, double w) {
            const Matrix dh = g.grad_h(m + g.factor[j] * z);
            for (std::size_t c = 0; c < g.q; ++c)
                for (std::size_t k = 0; k < g.d; ++k) out(c, k) += w * dh(c, k);
        });
        return out;
    }
    // Score form: grad_m E H = E[H z^T] F^{-1}  (Stein identity).
    if (g.d == 1) {
        const double s = g.sigma[j];
        for (std::size_t c = 0; c < g.q; ++c)
            out(c, 0) =
                integrate_adaptive(
                    [&](double z) { return g.h({m[0] + s * z})[c] * z * std_normal_pdf(z); }, -8.5,
                    8.5, g.spatial_tol) /
                s;
        return out;
    }
    const auto& rule = gauss_hermite(g.hermite_order);
    Matrix hz(g.q, g.d);
    for_each_tensor_node(rule, g.d, [&](const Vec& z, double w) {
        const Vec h = g.h(m + g.factor[j] * z);
        for (std::size_t c = 0; c < g.q; ++c)
            for (std::size_t k = 0; k < g.d; ++k) hz(c, k) += w * h[c] * z[k];
    });
    return hz * g.factor_inv_t[j].transposed();
}

}  // namespace

Corrector corrector_linear_gaussian(const LinearPart& sys,
                                    const std::function<Vec(const Vec&)>& h,
                                    std::size_t observable_dim,
                                    const GaussianCorrectorOptions& options) {
    if (!sys.a.square()) throw std::invalid_argument("corrector_linear_gaussian: A must be square");
    const double lambda = -spectral_abscissa(sys.a);
    if (!(lambda > 0.0))
        throw std::invalid_argument("corrector_linear_gaussian: A is not Hurwitz");
    const std::size_t d = sys.a.rows();

    auto data = std::make_shared<SemigroupData>();
    data->d = d;
    data->q = observable_dim;
    data->h = h;
    data->grad_h = options.grad_h;
    data->hermite_order = options.hermite_order;
    if (!data->grad_h) {
        const Matrix bbt = sys.b * sys.b.transposed();
        if (symmetric_eigen(bbt).values.front() <= 0.0)
            throw std::invalid_argument(
                "corrector_linear_gaussian: BB* is singular, so the score-form gradient is "
                "unavailable; provide grad_h");
        data->score_gradient = true;
    }

    // Scale of H near the invariant law sets the horizon.
    const Matrix p_inf = solve_lyapunov(sys.a, sys.b * sys.b.transposed());
    const Matrix f_inf = psd_factor(p_inf);
    double scale = 1.0;
    {
        NormalStream rng(41, 0);
        Vec z(d);
        for (int k = 0; k < 16; ++k) {
            rng.fill(z.data(), d);
            for (double v : h(f_inf * z)) scale = std::max(scale, std::abs(v));
        }
    }
    const double horizon =
        std::max(4.0 / lambda, 1.5 * std::log(scale / options.tail_tol) / lambda);
    data->spatial_tol = options.tail_tol / (4.0 * horizon);

    // Composite Simpson in tau over [0, sqrt(T)]; node weights carry the
    // 2 tau Jacobian. Transition covariances advance incrementally through
    // P_{t+s} = P_s + e^{sA} P_t e^{sA*}.
    const std::size_t nodes = 2 * options.time_panels + 1;
    const double dtau = std::sqrt(horizon) / static_cast<double>(nodes - 1);
    data->weights.resize(nodes);
    data->prop.resize(nodes);
    data->sigma.assign(nodes, 0.0);
    if (d > 1) data->factor.resize(nodes);
    if (d > 1 && data->score_gradient) data->factor_inv_t.resize(nodes);

    Matrix p_run(d, d);
    double t_prev = 0.0;
    for (std::size_t jn = 0; jn < nodes; ++jn) {
        // The substituted integrand 2 tau g(tau^2) can have a nonzero limit at
        // tau = 0 (score gradients of rough H), so the first node sits at a
        // small epsilon rather than exactly zero.
        const double tau = jn == 0 ? dtau / 64.0 : dtau * static_cast<double>(jn);
        const double t = tau * tau;
        const double simpson = (jn == 0 || jn + 1 == nodes) ? 1.0 : (jn % 2 == 1 ? 4.0 : 2.0);
        data->weights[jn] = simpson * (dtau / 3.0) * 2.0 * tau;
        const double dt = t - t_prev;
        const Matrix step = mat_exp(sys.a, dt);
        p_run = covariance_horizon(sys.a, sys.b, dt) + step * p_run * step.transposed();
        p_run.symmetrize();
        data->prop[jn] = jn == 0 ? Matrix::identity(d) : step * data->prop[jn - 1];
        if (d == 1) {
            data->sigma[jn] = std::sqrt(std::max(p_run(0, 0), 0.0));
        } else {
            data->factor[jn] = psd_factor(p_run);
            if (data->score_gradient)
                data->factor_inv_t[jn] =
                    solve_linear(data->factor[jn].transposed(), Matrix::identity(d));
        }
        t_prev = t;
    }

    // Tail estimate: the integrand at the horizon, from a probe at two
    // invariant-law standard deviations.
    {
        Vec probe(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            probe[i] = 2.0 * std::sqrt(std::max(p_inf(i, i), 0.0));
        const Vec tail_g = semigroup_g(*data, nodes - 1, data->prop[nodes - 1] * probe);
        double tail = 0.0;
        for (double v : tail_g) tail = std::max(tail, std::abs(v) / lambda);
        if (tail > options.tail_tol * std::max(1.0, scale))
            throw NumericError("corrector_linear_gaussian: tail estimate " + std::to_string(tail) +
                               " exceeds the requested tolerance");
    }

    Corrector u;
    u.kind = CorrectorKind::GaussianQuadrature;
    u.state_dim = d;
    u.observable_dim = observable_dim;
    u.value = [data](const Vec& x) {
        Vec out(data->q, 0.0);
        for (std::size_t j = 0; j < data->weights.size(); ++j) {
            if (data->weights[j] == 0.0) continue;
            const Vec g = semigroup_g(*data, j, data->prop[j] * x);
            for (std::size_t c = 0; c < data->q; ++c) out[c] += data->weights[j] * g[c];
        }
        return out;
    };
    u.gradient = [data](const Vec& x) {
        Matrix out(data->q, data->d);
        for (std::size_t j = 0; j < data->weights.size(); ++j) {
            if (data->weights[j] == 0.0) continue;
            const Matrix dg = semigroup_dg(*data, j, data->prop[j] * x) * data->prop[j];
            for (std::size_t c = 0; c < data->q; ++c)
                for (std::size_t k = 0; k < data->d; ++k) out(c, k) += data->weights[j] * dg(c, k);
        }
        return out;
    };
    return u;
}

Corrector corrector_linear_observable(const LinearPart& sys, const Matrix& c) {
    if (!sys.a.square() || c.cols() != sys.a.rows())
        throw std::invalid_argument("corrector_linear_observable: dimension mismatch");
    // L U = <Ax, grad U> = -C x requires grad U = -C A^{-1}, i.e. solve
    // A^T L^T = -C^T; no Hurwitz requirement, only invertibility.
    const Matrix neg_ct = -1.0 * c.transposed();
    const Matrix l = solve_linear(sys.a.transposed(), neg_ct).transposed();
    Corrector u;
    u.kind = CorrectorKind::ClosedForm;
    u.state_dim = sys.a.rows();
    u.observable_dim = c.rows();
    u.value = [l](const Vec& x) { return l * x; };
    u.gradient = [l](const Vec&) { return l; };
    return u;
}

CovarianceQ compute_Q_stationary(const DiffusionScenario& s, const Corrector& u,
                                 const TabulatedDensity& p) {
    if (s.dimension != 1)
        throw std::invalid_argument("compute_Q_stationary: tabulated law needs d = 1");
    const std::size_t q = s.observable_dim;
    const std::size_t n = p.size();

    auto accumulate = [&](std::size_t stride) {
        std::vector<Vec> integrand(q * q, Vec((n - 1) / stride + 1));
        for (std::size_t i = 0, k = 0; i < n; i += stride, ++k) {
            const Vec x{p.x_at(i)};
            const Matrix g = u.gradient(x);
            const double a = s.diffusion_squared(x)(0, 0);
            for (std::size_t c = 0; c < q; ++c)
                for (std::size_t e = 0; e < q; ++e)
                    integrand[c * q + e][k] = g(c, 0) * a * g(e, 0) * p.values[i];
        }
        Matrix out(q, q);
        for (std::size_t c = 0; c < q; ++c)
            for (std::size_t e = 0; e < q; ++e)
                out(c, e) =
                    simpson_tabulated(integrand[c * q + e], p.step * static_cast<double>(stride));
        return out;
    };

    const Matrix fine = accumulate(1);
    const Matrix coarse = accumulate(2);
    CovarianceQ out;
    out.q = psd_clip(fine);
    out.method = QMethod::Stationary;
    out.estimated_error = (fine - coarse).max_abs();
    out.validate();
    return out;
}

CovarianceQ compute_Q_stationary(const DiffusionScenario& s, const Corrector& u,
                                 const Matrix& p_cov, std::size_t hermite_order) {
    const std::size_t d = s.dimension;
    const std::size_t q = s.observable_dim;
    if (p_cov.rows() != d)
        throw std::invalid_argument("compute_Q_stationary: covariance dimension mismatch");
    const Matrix f = psd_factor(p_cov);

    auto accumulate = [&](std::size_t order) {
        const auto& rule = gauss_hermite(order);
        Matrix out(q, q);
        for_each_tensor_node(rule, d, [&](const Vec& z, double w) {
            const Vec x = f * z;
            const Matrix g = u.gradient(x);
            const Matrix term = g * s.diffusion_squared(x) * g.transposed();
            for (std::size_t c = 0; c < q; ++c)
                for (std::size_t e = 0; e < q; ++e) out(c, e) += w * term(c, e);
        });
        return out;
    };

    const Matrix fine = accumulate(hermite_order);
    const Matrix coarse = accumulate(std::max<std::size_t>(4, hermite_order / 2));
    CovarianceQ out;
    out.q = psd_clip(fine);
    out.method = QMethod::Stationary;
    out.estimated_error = (fine - coarse).max_abs();
    out.validate();
    return out;
}

namespace {

/// Stationary symmetrized autocovariance machinery for linear scenarios.
struct LinearAutocov {
    const DiffusionScenario* s = nullptr;
    std::size_t d = 1, q = 1;
    Matrix p;   // invariant covariance
    Matrix f0;  // psd factor of p
    Vec mean;   // E H under the invariant law
    std::size_t order = 12;  // GH order (d >= 2)

    // 1-D fixed grids: outer x0 with Simpson-times-density weights, inner y
    // with H pretabulated so the kernel pass is a plain windowed sum.
    Vec x0_grid, x0_weight;
    std::vector<Vec> h_x0;  // per component, centred
    Vec y_grid, y_weight;
    std::vector<Vec> h_y;
};

LinearAutocov make_linear_autocov(const DiffusionScenario& s, std::size_t order) {
    LinearAutocov ac;
    ac.s = &s;
    ac.d = s.dimension;
    ac.q = s.observable_dim;
    ac.order = order;
    ac.p = solve_lyapunov(s.linear_part->a, s.linear_part->b * s.linear_part->b.transposed());
    ac.f0 = psd_factor(ac.p);
    ac.mean.assign(ac.q, 0.0);

    if (ac.d == 1) {
        const double sd = std::sqrt(std::max(ac.p(0, 0), 1e-300));
        const double span = 9.0 * sd;
        const std::size_t n_x0 = 769, n_y = 3073;
        ac.x0_grid.resize(n_x0);
        ac.x0_weight.resize(n_x0);
        const double hx = 2.0 * span / static_cast<double>(n_x0 - 1);
        for (std::size_t i = 0; i < n_x0; ++i) {
            const double x = -span + hx * static_cast<double>(i);
            const double simpson = (i == 0 || i + 1 == n_x0) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            ac.x0_grid[i] = x;
            ac.x0_weight[i] = simpson * (hx / 3.0) * std_normal_pdf(x / sd) / sd;
        }
        ac.y_grid.resize(n_y);
        ac.y_weight.resize(n_y);
        const double hy = 2.0 * span / static_cast<double>(n_y - 1);
        for (std::size_t i = 0; i < n_y; ++i) {
            ac.y_grid[i] = -span + hy * static_cast<double>(i);
            ac.y_weight[i] =
                ((i == 0 || i + 1 == n_y) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0)) * hy / 3.0;
        }
        ac.h_x0.assign(ac.q, Vec(n_x0));
        ac.h_y.assign(ac.q, Vec(n_y));
        for (std::size_t i = 0; i < n_x0; ++i) {
            const Vec h = s.observable({ac.x0_grid[i]});
            for (std::size_t c = 0; c < ac.q; ++c) ac.h_x0[c][i] = h[c];
        }
        for (std::size_t c = 0; c < ac.q; ++c) {
            double m = 0.0;
            for (std::size_t i = 0; i < ac.x0_grid.size(); ++i)
                m += ac.x0_weight[i] * ac.h_x0[c][i];
            ac.mean[c] = m;
            for (double& v : ac.h_x0[c]) v -= m;
        }
        for (std::size_t i = 0; i < n_y; ++i) {
            const Vec h = s.observable({ac.y_grid[i]});
            for (std::size_t c = 0; c < ac.q; ++c) ac.h_y[c][i] = h[c] - ac.mean[c];
        }
    } else {
        const auto& rule = gauss_hermite(ac.order);
        for_each_tensor_node(rule, ac.d, [&](const Vec& z, double w) {
            const Vec h = s.observable(ac.f0 * z);
            for (std::size_t c = 0; c < ac.q; ++c) ac.mean[c] += w * h[c];
        });
    }
    return ac;
}

/// R(t) = E[H~(X_t) H~(X_0)^T] over the stationary law.
Matrix autocov_at(const LinearAutocov& ac, double t) {
    const DiffusionScenario& s = *ac.s;
    const std::size_t q = ac.q;
    Matrix r(q, q);
    const Matrix e = mat_exp(s.linear_part->a, t);
    // Var(X_t | X_0) = P - e P e^T for the stationary chain.
    Matrix pt = ac.p - e * ac.p * e.transposed();
    pt.symmetrize();

    if (ac.d == 1) {
        const double sd = std::sqrt(std::max(pt(0, 0), 0.0));
        const double hy = ac.y_grid[1] - ac.y_grid[0];
        Vec g(q, 0.0);
        for (std::size_t jx = 0; jx < ac.x0_grid.size(); ++jx) {
            const double m = e(0, 0) * ac.x0_grid[jx];
            std::fill(g.begin(), g.end(), 0.0);
            if (sd < 1e-9) {
                const Vec h = s.observable({m});
                for (std::size_t c = 0; c < q; ++c) g[c] = h[c] - ac.mean[c];
            } else {
                // kernel window of +-9 sd around the conditional mean
                const double lo = m - 9.0 * sd, hi = m + 9.0 * sd;
                auto i0 = static_cast<std::ptrdiff_t>(std::floor((lo - ac.y_grid.front()) / hy));
                auto i1 = static_cast<std::ptrdiff_t>(std::ceil((hi - ac.y_grid.front()) / hy));
                i0 = std::max<std::ptrdiff_t>(i0, 0);
                i1 = std::min<std::ptrdiff_t>(i1,
                                              static_cast<std::ptrdiff_t>(ac.y_grid.size()) - 1);
                double wsum = 0.0;
                for (std::ptrdiff_t i = i0; i <= i1; ++i) {
                    const double k =
                        ac.y_weight[i] * std_normal_pdf((ac.y_grid[i] - m) / sd) / sd;
                    wsum += k;
                    for (std::size_t c = 0; c < q; ++c) g[c] += k * ac.h_y[c][i];
                }
                if (wsum > 0.0)
                    for (double& v : g) v /= wsum;  // renormalize the truncated kernel
            }
            for (std::size_t c = 0; c < q; ++c)
                for (std::size_t cc = 0; cc < q; ++cc)
                    r(c, cc) += ac.x0_weight[jx] * g[c] * ac.h_x0[cc][jx];
        }
        return r;
    }

    const Matrix ft = psd_factor(pt);
    const auto& rule = gauss_hermite(ac.order);
    for_each_tensor_node(rule, ac.d, [&](const Vec& w0, double weight0) {
        const Vec x0 = ac.f0 * w0;
        Vec h0 = s.observable(x0);
        for (std::size_t c = 0; c < q; ++c) h0[c] -= ac.mean[c];
        const Vec m = e * x0;
        Vec g(q, 0.0);
        for_each_tensor_node(rule, ac.d, [&](const Vec& z, double wz) {
            const Vec h = s.observable(m + ft * z);
            for (std::size_t c = 0; c < q; ++c) g[c] += wz * (h[c] - ac.mean[c]);
        });
        for (std::size_t c = 0; c < q; ++c)
            for (std::size_t cc = 0; cc < q; ++cc) r(c, cc) += weight0 * g[c] * h0[cc];
    });
    return r;
}

CovarianceQ green_kubo_linear(const DiffusionScenario& s, const GreenKuboOptions& options) {
    const LinearAutocov ac = make_linear_autocov(s, options.hermite_order);
    const double lambda_a = -spectral_abscissa(s.linear_part->a);

    auto symmetrized = [&](double t) {
        const Matrix r = autocov_at(ac, t);
        return r + r.transposed();
    };

    const Matrix c0 = symmetrized(0.0);
    const double c0_norm = std::max(c0.frobenius_norm(), 1e-300);

    // Fit the exponential decay rate of the integrand from a few probes, then
    // set the horizon with a x1.5 safety factor.
    double rate = lambda_a;
    {
        Vec ts, logs;
        for (int k = 1; k <= 6; ++k) {
            const double t = static_cast<double>(k) * 0.8 / lambda_a;
            const double v = symmetrized(t).frobenius_norm();
            if (v > 1e-11 * c0_norm) {
                ts.push_back(t);
                logs.push_back(std::log(v));
            }
        }
        if (ts.size() >= 2) {
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (std::size_t i = 0; i < ts.size(); ++i) {
                sx += ts[i];
                sy += logs[i];
                sxx += ts[i] * ts[i];
                sxy += ts[i] * logs[i];
            }
            const double n = static_cast<double>(ts.size());
            const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            if (slope < -1e-3) rate = -slope;
        }
    }
    const double horizon =
        options.horizon > 0.0
            ? options.horizon
            : std::min(1.5 * std::log(1.0 / options.tail_tol) / rate, 80.0 / lambda_a);

    const std::size_t nt = options.time_points | 1;  // odd
    const double dt = horizon / static_cast<double>(nt - 1);
    std::vector<Matrix> cs(nt);
    for (std::size_t k = 0; k < nt; ++k) cs[k] = symmetrized(dt * static_cast<double>(k));

    auto integrate = [&](std::size_t stride) {
        Matrix acc(ac.q, ac.q);
        for (std::size_t k = 0; k + 2 * stride < nt; k += 2 * stride)
            acc += (dt * static_cast<double>(stride) / 3.0) *
                   (cs[k] + 4.0 * cs[k + stride] + cs[k + 2 * stride]);
        return acc;
    };
    const Matrix fine = integrate(1);
    const Matrix coarse = integrate(2);
    const double tail = cs.back().frobenius_norm() / rate;

    CovarianceQ out;
    out.q = psd_clip(fine);
    out.method = QMethod::GreenKubo;
    out.estimated_error = (fine - coarse).max_abs() + tail;
    out.validate();
    return out;
}

CovarianceQ green_kubo_monte_carlo(const DiffusionScenario& s, const GreenKuboOptions& options) {
    const std::size_t d = s.dimension;
    const std::size_t q = s.observable_dim;
    const std::size_t m = s.noise_dimension;
    const double h = options.mc_step;
    const auto stride = static_cast<std::size_t>(std::round(options.mc_sample_spacing / h));
    if (stride == 0) throw std::invalid_argument("compute_Q_green_kubo: sample spacing below step");
    const double spacing = h * static_cast<double>(stride);
    const auto n_lags = static_cast<std::size_t>(std::floor(options.mc_max_lag / spacing)) + 1;
    const auto n_samples = static_cast<std::size_t>(std::floor(options.mc_path_time / spacing));
    if (n_samples < 4 * n_lags)
        throw std::invalid_argument("compute_Q_green_kubo: path too short for the requested lags");

    // One long path; taming is mandatory for superlinear drifts.
    NormalStream rng(options.seed, 0);
    Vec x = s.initial_point;
    Vec noise(m);
    const double sqrt_h = std::sqrt(h);
    auto step_once = [&]() {
        Vec b = s.drift(x);
        if (s.superlinear_drift) {
            const double taming = 1.0 + h * norm(b);
            for (double& v : b) v /= taming;
        }
        rng.fill(noise.data(), m);
        const Vec kick = s.diffusion(x) * noise;
        for (std::size_t i = 0; i < d; ++i) {
            x[i] += b[i] * h + sqrt_h * kick[i];
            if (!std::isfinite(x[i]))
                throw NumericError("compute_Q_green_kubo: path diverged (use a smaller step)");
        }
    };
    const auto burn_steps = static_cast<std::size_t>(std::round(options.mc_burn_in / h));
    for (std::size_t i = 0; i < burn_steps; ++i) step_once();

    std::vector<Vec> samples(q, Vec(n_samples));
    for (std::size_t k = 0; k < n_samples; ++k) {
        for (std::size_t i = 0; i < stride; ++i) step_once();
        const Vec hx = s.observable(x);
        for (std::size_t c = 0; c < q; ++c) samples[c][k] = hx[c];
    }
    for (std::size_t c = 0; c < q; ++c) {
        double mean = 0.0;
        for (double v : samples[c]) mean += v;
        mean /= static_cast<double>(n_samples);
        for (double& v : samples[c]) v -= mean;
    }

    // Batch means over contiguous segments give the error bar.
    const std::size_t nb = std::max<std::size_t>(options.batches, 2);
    const std::size_t batch_len = n_samples / nb;
    auto q_of_range = [&](std::size_t lo, std::size_t hi) {
        Matrix out(q, q);
        Vec cov(n_lags);
        for (std::size_t c = 0; c < q; ++c)
            for (std::size_t cc = 0; cc < q; ++cc) {
                for (std::size_t lag = 0; lag < n_lags; ++lag) {
                    double acc = 0.0;
                    for (std::size_t k = lo; k + lag < hi; ++k)
                        acc += samples[c][k + lag] * samples[cc][k];
                    cov[lag] = acc / static_cast<double>(hi - lo - lag);
                }
                out(c, cc) = simpson_tabulated(cov, spacing);
            }
        return out + out.transposed();
    };

    const Matrix full = q_of_range(0, n_samples);
    double max_se = 0.0;
    {
        std::vector<Matrix> batch(nb);
        for (std::size_t b = 0; b < nb; ++b)
            batch[b] = q_of_range(b * batch_len, (b + 1) * batch_len);
        for (std::size_t c = 0; c < q; ++c)
            for (std::size_t cc = 0; cc < q; ++cc) {
                double mean = 0.0, var = 0.0;
                for (const auto& bq : batch) mean += bq(c, cc);
                mean /= static_cast<double>(nb);
                for (const auto& bq : batch) var += (bq(c, cc) - mean) * (bq(c, cc) - mean);
                var /= static_cast<double>(nb - 1);
                max_se = std::max(max_se, std::sqrt(var / static_cast<double>(nb)));
            }
    }

    CovarianceQ out;
    out.q = psd_clip(full);
    out.method = QMethod::GreenKubo;
    out.estimated_error = max_se;
    out.validate();
    return out;
}

}  // namespace

CovarianceQ compute_Q_green_kubo(const DiffusionScenario& s, const GreenKuboOptions& options) {
    s.validate();
    if (s.linear_part) return green_kubo_linear(s, options);
    return green_kubo_monte_carlo(s, options);
}

CovarianceQ q_closed_form_quadratic(const LinearPart& sys, const Matrix& gamma) {
    const Matrix bbt = sys.b * sys.b.transposed();
    if (symmetric_eigen(bbt).values.front() <= 0.0 && gamma.max_abs() > 0.0)
        throw std::invalid_argument("q_closed_form_quadratic: BB* must be positive definite");
    const Matrix upsilon = solve_lyapunov(sys.a, gamma, LyapunovConvention::Transposed);
    const Matrix p = solve_lyapunov(sys.a, bbt);
    CovarianceQ out;
    out.q = Matrix(1, 1, {4.0 * (upsilon * bbt * upsilon * p).trace()});
    out.method = QMethod::ClosedForm;
    out.estimated_error = 1e-12 * std::max(1.0, out.q.max_abs());
    out.validate();
    return out;
}

double generator_residual(const DiffusionScenario& s, const Corrector& u,
                          const std::vector<Vec>& probes, double fd_step) {
    const std::size_t d = s.dimension;
    const std::size_t q = s.observable_dim;
    double step = fd_step;
    if (u.table) step = std::max(step, 4.0 * u.table->step);

    double worst = 0.0;
    for (const Vec& x : probes) {
        const Matrix g = u.gradient(x);
        const Matrix a = s.diffusion_squared(x);
        const Vec b = s.drift(x);
        const Vec h = s.observable(x);
        for (std::size_t c = 0; c < q; ++c) {
            double second = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                Vec xp = x, xm = x;
                xp[j] += step;
                xm[j] -= step;
                const Matrix gp = u.gradient(xp);
                const Matrix gm = u.gradient(xm);
                for (std::size_t i = 0; i < d; ++i)
                    second += a(i, j) * (gp(c, i) - gm(c, i)) / (2.0 * step);
            }
            double first = 0.0;
            for (std::size_t i = 0; i < d; ++i) first += b[i] * g(c, i);
            worst = std::max(worst, std::abs(0.5 * second + first + h[c]));
        }
    }
    return worst;
}

}  // namespace mdev
