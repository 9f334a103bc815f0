#pragma once

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdev {

using Vec = std::vector<double>;

/// Thrown when a factorization or eigen-iteration cannot proceed.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Small dense real matrix, row-major. Sized for the d <= ~10 systems this
/// library deals with; no attempt at cache blocking or sparsity.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> entries);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(const Vec& d);
    /// Row-major construction, e.g. Matrix::from_rows({{0,1},{-1,-1}}).
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix column(const Vec& v);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }
    bool square() const { return rows_ == cols_ && rows_ > 0; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    Matrix transposed() const;
    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    double frobenius_norm() const;
    double one_norm() const;   // max absolute column sum
    double max_abs() const;
    double trace() const;

    /// Max relative symmetry defect |m_ij - m_ji| / (1 + |m_ij|).
    double symmetry_defect() const;
    bool is_symmetric(double tol = 1e-12) const { return square() && symmetry_defect() <= tol; }
    /// Averages with the transpose in place.
    void symmetrize();

    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator*(double s, Matrix a);
Vec operator*(const Matrix& a, const Vec& x);

double dot(const Vec& a, const Vec& b);
double norm(const Vec& a);
Vec operator+(Vec a, const Vec& b);
Vec operator-(Vec a, const Vec& b);
Vec operator*(double s, Vec a);

/// LU decomposition with partial pivoting.
class LuDecomposition {
public:
    explicit LuDecomposition(Matrix a);

    Vec solve(Vec b) const;
    Matrix solve(const Matrix& b) const;
    double determinant() const;
    bool singular() const { return singular_; }

private:
    Matrix lu_;
    std::vector<std::size_t> perm_;
    int perm_sign_ = 1;
    bool singular_ = false;
};

/// Solves a x = b; throws NumericError on singular a.
Vec solve_linear(const Matrix& a, Vec b);
Matrix solve_linear(const Matrix& a, const Matrix& b);

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// values ascending; vectors stored as columns, orthonormal.
struct SymmetricEigen {
    Vec values;
    Matrix vectors;
};
SymmetricEigen symmetric_eigen(const Matrix& a, double sym_tol = 1e-8);

/// Eigenvalues of a general square real matrix: Givens reduction to Hessenberg
/// form followed by shifted complex QR iteration. Throws NumericError if the
/// iteration stalls.
std::vector<std::complex<double>> general_eigenvalues(const Matrix& a);

/// Factor F (n x n) with F F^T = a for symmetric PSD a; eigenvalues below
/// clip_rel * max |eigenvalue| are treated as zero, so singular directions
/// (rank-deficient noise) are handled.
Matrix psd_factor(const Matrix& a, double clip_rel = 1e-13);

}  // namespace mdev
