#include "mdev/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace mdev {

namespace {

// Pade-13 numerator coefficients (Higham's scaling-and-squaring method).
constexpr double kPade13[] = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};
constexpr double kPade13Theta = 5.371920351148152;

}  // namespace

Matrix mat_exp(const Matrix& a, double t) {
    if (!a.square()) throw std::invalid_argument("mat_exp: matrix must be square");
    if (!std::isfinite(t)) throw std::invalid_argument("mat_exp: t must be finite");
    const std::size_t n = a.rows();
    Matrix m = a;
    m *= t;

    int squarings = 0;
    const double nrm = m.one_norm();
    if (nrm > kPade13Theta) {
        squarings = static_cast<int>(std::ceil(std::log2(nrm / kPade13Theta)));
        m *= std::ldexp(1.0, -squarings);
    }

    const Matrix id = Matrix::identity(n);
    const Matrix m2 = m * m;
    const Matrix m4 = m2 * m2;
    const Matrix m6 = m4 * m2;

    Matrix u = m6 * (kPade13[13] * m6 + kPade13[11] * m4 + kPade13[9] * m2);
    u += kPade13[7] * m6 + kPade13[5] * m4 + kPade13[3] * m2 + kPade13[1] * id;
    u = m * u;
    Matrix v = m6 * (kPade13[12] * m6 + kPade13[10] * m4 + kPade13[8] * m2);
    v += kPade13[6] * m6 + kPade13[4] * m4 + kPade13[2] * m2 + kPade13[0] * id;

    Matrix r = solve_linear(v - u, v + u);
    for (int s = 0; s < squarings; ++s) r = r * r;
    return r;
}

double spectral_abscissa(const Matrix& a) {
    if (!a.square()) throw std::invalid_argument("spectral_abscissa: matrix must be square");
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& lambda : general_eigenvalues(a)) worst = std::max(worst, lambda.real());
    return worst;
}

Matrix solve_lyapunov(const Matrix& a, const Matrix& c, LyapunovConvention convention) {
    if (!a.square()) throw std::invalid_argument("solve_lyapunov: A must be square");
    if (a.rows() != c.rows() || a.rows() != c.cols())
        throw std::invalid_argument("solve_lyapunov: dimension mismatch between A and C");
    if (!c.is_symmetric(1e-10))
        throw std::invalid_argument("solve_lyapunov: C must be symmetric");
    const double abscissa = spectral_abscissa(a);
    if (!(abscissa < 0.0))
        throw std::invalid_argument("solve_lyapunov: A is not Hurwitz (abscissa " +
                                    std::to_string(abscissa) + "), no stable solution");

    const Matrix& aa = (convention == LyapunovConvention::Covariance) ? a : a.transposed();
    const std::size_t n = a.rows();

    // Column-major vec: (I (x) A + A (x) I) vec(P) = -vec(C) solves AP + PA* + C = 0.
    Matrix k(n * n, n * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t row = j * n + i;
            for (std::size_t p = 0; p < n; ++p) k(row, j * n + p) += aa(i, p);
            for (std::size_t p = 0; p < n; ++p) k(row, p * n + i) += aa(j, p);
        }
    Vec rhs(n * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) rhs[j * n + i] = -c(i, j);

    const Vec sol = solve_linear(k, std::move(rhs));
    Matrix p(n, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) p(i, j) = sol[j * n + i];
    p.symmetrize();
    return p;
}

Matrix covariance_horizon(const Matrix& a, const Matrix& b, double t, double rel_tol) {
    if (!a.square()) throw std::invalid_argument("covariance_horizon: A must be square");
    if (b.rows() != a.rows()) throw std::invalid_argument("covariance_horizon: B row mismatch");
    if (!(t >= 0.0)) throw std::invalid_argument("covariance_horizon: t must be nonnegative");
    const std::size_t n = a.rows();
    const Matrix bbt = b * b.transposed();
    Matrix p(n, n);
    if (t == 0.0) return p;

    auto deriv = [&](const Matrix& m) { return a * m + (a * m).transposed() + bbt; };
    auto rk4 = [&](const Matrix& m, double h) {
        const Matrix k1 = deriv(m);
        const Matrix k2 = deriv(m + (h / 2) * k1);
        const Matrix k3 = deriv(m + (h / 2) * k2);
        const Matrix k4 = deriv(m + h * k3);
        Matrix out = m + (h / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.symmetrize();
        return out;
    };

    // Step doubling: one full step vs two halves; |difference|/15 estimates the
    // local error of the fourth-order scheme.
    double s = 0.0;
    double h = std::min(t, 0.1 / std::max(a.one_norm(), 1e-3));
    const double floor_h = t * 1e-14;
    while (s < t) {
        h = std::min(h, t - s);
        const Matrix full = rk4(p, h);
        const Matrix half = rk4(rk4(p, h / 2), h / 2);
        const double err = (full - half).max_abs() / 15.0;
        const double tol = rel_tol * (1.0 + half.max_abs());
        if (err <= tol || h <= floor_h) {
            p = half;
            s += h;
            const double grow = err > 0.0 ? 0.9 * std::pow(tol / err, 0.2) : 5.0;
            h *= std::clamp(grow, 0.2, 5.0);
        } else {
            h *= std::clamp(0.9 * std::pow(tol / err, 0.2), 0.1, 0.9);
        }
        if (!p.all_finite())
            throw NumericError("covariance_horizon: integration diverged (non-finite P)");
    }
    return p;
}

PseudoInverse pseudo_inverse(const Matrix& q, RankTolerance tol) {
    tol.validate();
    if (!q.square()) throw std::invalid_argument("pseudo_inverse: matrix must be square");
    if (!q.is_symmetric(1e-8))
        throw std::invalid_argument("pseudo_inverse: matrix is not symmetric within tolerance");
    const std::size_t n = q.rows();
    const SymmetricEigen eig = symmetric_eigen(q);
    double sigma_max = 0.0;
    for (double v : eig.values) sigma_max = std::max(sigma_max, std::abs(v));
    const double cut = tol.relative * sigma_max;

    PseudoInverse out;
    out.pinv = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        if (std::abs(eig.values[k]) <= cut || eig.values[k] == 0.0) continue;
        ++out.rank;
        const double inv = 1.0 / eig.values[k];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out.pinv(i, j) += inv * eig.vectors(i, k) * eig.vectors(j, k);
    }
    out.range_projector = q * out.pinv;
    out.range_projector.symmetrize();
    return out;
}

ControllabilityGramian controllability_gramian(const Matrix& a, const Matrix& b,
                                               RankTolerance tol) {
    tol.validate();
    if (!a.square()) throw std::invalid_argument("controllability_gramian: A must be square");
    if (b.rows() != a.rows())
        throw std::invalid_argument("controllability_gramian: B must have as many rows as A");
    const std::size_t n = a.rows();
    const Matrix bbt = b * b.transposed();

    ControllabilityGramian out;
    out.d = Matrix(n, n);
    Matrix apow = Matrix::identity(n);  // A^i
    for (std::size_t i = 0; i < n; ++i) {
        out.d += apow.transposed() * bbt * apow;
        if (i + 1 < n) apow = a * apow;
    }
    out.d.symmetrize();

    const SymmetricEigen eig = symmetric_eigen(out.d);
    double sigma_max = 0.0;
    for (double v : eig.values) sigma_max = std::max(sigma_max, std::abs(v));
    for (double v : eig.values)
        if (std::abs(v) > tol.relative * sigma_max && v != 0.0) ++out.rank;
    out.nonsingular = (out.rank == n);
    return out;
}

}  // namespace mdev
