#include "mdev/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mdev {

namespace {
constexpr double kEps = std::numeric_limits<double>::epsilon();

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> entries)
    : rows_(rows), cols_(cols), data_(entries) {
    require(data_.size() == rows * cols, "Matrix: entry count does not match dimensions");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(const Vec& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    require(r > 0, "Matrix::from_rows: empty");
    const std::size_t c = rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        require(row.size() == c, "Matrix::from_rows: ragged rows");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::column(const Vec& v) {
    Matrix m(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require(rows_ == other.rows_ && cols_ == other.cols_, "Matrix +=: dimension mismatch");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require(rows_ == other.rows_ && cols_ == other.cols_, "Matrix -=: dimension mismatch");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double Matrix::frobenius_norm() const {
    double sum = 0.0;
    for (double v : data_) sum += v * v;
    return std::sqrt(sum);
}

double Matrix::one_norm() const {
    double best = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < rows_; ++i) col += std::abs((*this)(i, j));
        best = std::max(best, col);
    }
    return best;
}

double Matrix::max_abs() const {
    double best = 0.0;
    for (double v : data_) best = std::max(best, std::abs(v));
    return best;
}

double Matrix::trace() const {
    require(square(), "Matrix::trace: not square");
    double t = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) t += (*this)(i, i);
    return t;
}

double Matrix::symmetry_defect() const {
    if (!square()) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = i + 1; j < cols_; ++j) {
            const double d = std::abs((*this)(i, j) - (*this)(j, i)) / (1.0 + std::abs((*this)(i, j)));
            worst = std::max(worst, d);
        }
    return worst;
}

void Matrix::symmetrize() {
    require(square(), "Matrix::symmetrize: not square");
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = i + 1; j < cols_; ++j) {
            const double avg = 0.5 * ((*this)(i, j) + (*this)(j, i));
            (*this)(i, j) = avg;
            (*this)(j, i) = avg;
        }
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }

Matrix operator*(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "Matrix *: dimension mismatch");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

Matrix operator*(double s, Matrix a) { return a *= s; }

Vec operator*(const Matrix& a, const Vec& x) {
    require(a.cols() == x.size(), "Matrix * Vec: dimension mismatch");
    Vec y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

double dot(const Vec& a, const Vec& b) {
    require(a.size() == b.size(), "dot: dimension mismatch");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

Vec operator+(Vec a, const Vec& b) {
    require(a.size() == b.size(), "Vec +: dimension mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

Vec operator-(Vec a, const Vec& b) {
    require(a.size() == b.size(), "Vec -: dimension mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    return a;
}

Vec operator*(double s, Vec a) {
    for (double& v : a) v *= s;
    return a;
}

LuDecomposition::LuDecomposition(Matrix a) : lu_(std::move(a)) {
    require(lu_.square(), "LuDecomposition: matrix must be square");
    const std::size_t n = lu_.rows();
    perm_.resize(n);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t pivot = k;
        double best = std::abs(lu_(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            const double v = std::abs(lu_(i, k));
            if (v > best) {
                best = v;
                pivot = i;
            }
        }
        if (best == 0.0) {
            singular_ = true;
            continue;
        }
        if (pivot != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(pivot, j));
            std::swap(perm_[k], perm_[pivot]);
            perm_sign_ = -perm_sign_;
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            lu_(i, k) /= lu_(k, k);
            const double lik = lu_(i, k);
            if (lik == 0.0) continue;
            for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= lik * lu_(k, j);
        }
    }
}

Vec LuDecomposition::solve(Vec b) const {
    if (singular_) throw NumericError("LuDecomposition::solve: matrix is singular");
    const std::size_t n = lu_.rows();
    require(b.size() == n, "LuDecomposition::solve: dimension mismatch");
    Vec x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[perm_[i]];
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) x[i] -= lu_(i, j) * x[j];
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t j = ii + 1; j < n; ++j) x[ii] -= lu_(ii, j) * x[j];
        x[ii] /= lu_(ii, ii);
    }
    return x;
}

Matrix LuDecomposition::solve(const Matrix& b) const {
    require(b.rows() == lu_.rows(), "LuDecomposition::solve: dimension mismatch");
    Matrix x(b.rows(), b.cols());
    Vec col(b.rows());
    for (std::size_t j = 0; j < b.cols(); ++j) {
        for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
        Vec sol = solve(col);
        for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = sol[i];
    }
    return x;
}

double LuDecomposition::determinant() const {
    if (singular_) return 0.0;
    double det = perm_sign_;
    for (std::size_t i = 0; i < lu_.rows(); ++i) det *= lu_(i, i);
    return det;
}

Vec solve_linear(const Matrix& a, Vec b) { return LuDecomposition(a).solve(std::move(b)); }
Matrix solve_linear(const Matrix& a, const Matrix& b) { return LuDecomposition(a).solve(b); }

SymmetricEigen symmetric_eigen(const Matrix& a, double sym_tol) {
    require(a.square(), "symmetric_eigen: matrix must be square");
    if (a.symmetry_defect() > sym_tol)
        throw std::invalid_argument("symmetric_eigen: matrix is not symmetric within tolerance");
    const std::size_t n = a.rows();
    Matrix m = a;
    m.symmetrize();
    Matrix v = Matrix::identity(n);

    auto off_norm = [&m, n]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += m(i, j) * m(i, j);
        return std::sqrt(2.0 * s);
    };

    const double scale = std::max(m.frobenius_norm(), 1e-300);
    for (int sweep = 0; sweep < 100 && off_norm() > 1e2 * kEps * scale; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m(p, q);
                if (std::abs(apq) <= kEps * scale) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&m](std::size_t i, std::size_t j) { return m(i, i) < m(j, j); });
    SymmetricEigen result;
    result.values.resize(n);
    result.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        result.values[j] = m(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) result.vectors(i, j) = v(i, order[j]);
    }
    return result;
}

namespace {

using Cplx = std::complex<double>;

struct Givens {
    Cplx c;  // real in exact arithmetic but kept complex for uniformity
    Cplx s;
};

// Rotation with [c s; -conj(s) c] [f; g] = [r; 0].
Givens make_givens(Cplx f, Cplx g) {
    if (g == 0.0) return {1.0, 0.0};
    if (f == 0.0) return {0.0, std::conj(g) / std::abs(g)};
    const double af = std::abs(f), ag = std::abs(g);
    const double r = std::hypot(af, ag);
    return {af / r, (f / af) * (std::conj(g) / r)};
}

Cplx wilkinson_shift(Cplx a, Cplx b, Cplx c, Cplx d) {
    // Eigenvalue of [a b; c d] closest to d.
    const Cplx tr = a + d;
    const Cplx disc = std::sqrt(tr * tr - 4.0 * (a * d - b * c));
    const Cplx l1 = 0.5 * (tr + disc);
    const Cplx l2 = 0.5 * (tr - disc);
    return std::abs(l1 - d) < std::abs(l2 - d) ? l1 : l2;
}

}  // namespace

std::vector<std::complex<double>> general_eigenvalues(const Matrix& a) {
    require(a.square(), "general_eigenvalues: matrix must be square");
    if (!a.all_finite()) throw std::invalid_argument("general_eigenvalues: non-finite entries");
    const std::size_t n = a.rows();
    std::vector<std::vector<Cplx>> h(n, std::vector<Cplx>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) h[i][j] = a(i, j);

    auto rotate_rows = [&h, n](std::size_t r1, std::size_t r2, const Givens& g, std::size_t j0,
                               std::size_t j1) {
        for (std::size_t j = j0; j < j1 && j < n; ++j) {
            const Cplx x = h[r1][j], y = h[r2][j];
            h[r1][j] = g.c * x + g.s * y;
            h[r2][j] = -std::conj(g.s) * x + std::conj(g.c) * y;
        }
    };
    auto rotate_cols = [&h, n](std::size_t c1, std::size_t c2, const Givens& g, std::size_t i0,
                               std::size_t i1) {
        for (std::size_t i = i0; i < i1 && i < n; ++i) {
            const Cplx x = h[i][c1], y = h[i][c2];
            h[i][c1] = x * std::conj(g.c) + y * std::conj(g.s);
            h[i][c2] = -x * g.s + y * g.c;
        }
    };

    // Hessenberg reduction by similarity Givens rotations.
    for (std::size_t j = 0; j + 2 < n; ++j)
        for (std::size_t i = j + 2; i < n; ++i) {
            if (h[i][j] == 0.0) continue;
            const Givens g = make_givens(h[j + 1][j], h[i][j]);
            rotate_rows(j + 1, i, g, j, n);
            rotate_cols(j + 1, i, g, 0, n);
            h[i][j] = 0.0;
        }

    const double hnorm = [&h, n]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) s += std::norm(h[i][j]);
        return std::sqrt(s);
    }();

    std::vector<Cplx> eig(n);
    if (hnorm == 0.0) return eig;

    std::size_t hi = n - 1;
    long iterations_left = 80 * static_cast<long>(n) + 80;
    int its_this_block = 0;
    while (true) {
        // Deflate converged subdiagonal entries from the bottom.
        while (hi > 0) {
            double small = kEps * (std::abs(h[hi - 1][hi - 1]) + std::abs(h[hi][hi]));
            if (small == 0.0) small = kEps * hnorm;
            if (std::abs(h[hi][hi - 1]) <= small) {
                h[hi][hi - 1] = 0.0;
                eig[hi] = h[hi][hi];
                --hi;
                its_this_block = 0;
            } else {
                break;
            }
        }
        if (hi == 0) {
            eig[0] = h[0][0];
            break;
        }
        // Active block [lo, hi].
        std::size_t lo = hi;
        while (lo > 0) {
            double small = kEps * (std::abs(h[lo - 1][lo - 1]) + std::abs(h[lo][lo]));
            if (small == 0.0) small = kEps * hnorm;
            if (std::abs(h[lo][lo - 1]) <= small) {
                h[lo][lo - 1] = 0.0;
                break;
            }
            --lo;
        }

        if (--iterations_left < 0)
            throw NumericError("general_eigenvalues: QR iteration failed to converge");

        Cplx mu = wilkinson_shift(h[hi - 1][hi - 1], h[hi - 1][hi], h[hi][hi - 1], h[hi][hi]);
        if (++its_this_block % 24 == 0) {
            // Exceptional shift to break rare cycling.
            mu = h[hi][hi] + Cplx(1.5 * std::abs(h[hi][hi - 1]), 0.5 * std::abs(h[hi][hi - 1]));
        }

        // Explicit shifted QR step on the active block: H - mu I = QR, H <- RQ + mu I.
        for (std::size_t i = lo; i <= hi; ++i) h[i][i] -= mu;
        std::vector<Givens> gs;
        gs.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            const Givens g = make_givens(h[i][i], h[i + 1][i]);
            rotate_rows(i, i + 1, g, i, n);
            h[i + 1][i] = 0.0;
            gs.push_back(g);
        }
        for (std::size_t i = lo; i < hi; ++i) rotate_cols(i, i + 1, gs[i - lo], lo, std::min(i + 2, hi + 1));
        for (std::size_t i = lo; i <= hi; ++i) h[i][i] += mu;
    }
    return eig;
}

Matrix psd_factor(const Matrix& a, double clip_rel) {
    const SymmetricEigen eig = symmetric_eigen(a);
    const std::size_t n = a.rows();
    double max_eig = 0.0;
    for (double v : eig.values) max_eig = std::max(max_eig, std::abs(v));
    const double floor = clip_rel * max_eig;
    Matrix f(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const double lam = eig.values[j] > floor ? std::sqrt(eig.values[j]) : 0.0;
        for (std::size_t i = 0; i < n; ++i) f(i, j) = eig.vectors(i, j) * lam;
    }
    return f;
}

}  // namespace mdev
