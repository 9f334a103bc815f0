#pragma once

#include "mdev/matrix.hpp"

namespace mdev {

/// Relative singular-value threshold for rank decisions: values below
/// relative * sigma_max are treated as zero.
struct RankTolerance {
    double relative = 1e-10;

    void validate() const {
        if (!(relative > 0.0) || !(relative < 1.0))
            throw std::invalid_argument("RankTolerance: relative threshold must be in (0,1)");
    }
};

/// e^{tA} by Pade-13 scaling and squaring.
Matrix mat_exp(const Matrix& a, double t);

/// Largest real part over the spectrum of A; Hurwitz iff negative.
double spectral_abscissa(const Matrix& a);

/// Which Lyapunov form to solve. Covariance is A P + P A* + C = 0 (the
/// stationary covariance equation of dX = AX dt + B dW); Transposed is
/// A* P + P A + C = 0, kept for cross-checking.
enum class LyapunovConvention { Covariance, Transposed };

/// Solves A P + P A* + C = 0 (or the transposed form) for symmetric C and
/// Hurwitz A by Kronecker vectorization. Throws if A is not Hurwitz.
Matrix solve_lyapunov(const Matrix& a, const Matrix& c,
                      LyapunovConvention convention = LyapunovConvention::Covariance);

/// P_t = integral_0^t e^{sA} B B* e^{sA*} ds, integrated as
/// dP/ds = A P + P A* + B B* with adaptive RK4.
Matrix covariance_horizon(const Matrix& a, const Matrix& b, double t, double rel_tol = 1e-13);

struct PseudoInverse {
    Matrix pinv;              // Q+
    Matrix range_projector;   // Q Q+
    std::size_t rank = 0;
};

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix via eigendecomposition.
PseudoInverse pseudo_inverse(const Matrix& q, RankTolerance tol = {});

struct ControllabilityGramian {
    Matrix d;  // sum_{i=0}^{d-1} (A*)^i B B* A^i
    bool nonsingular = false;
    std::size_t rank = 0;
};

/// Kalman-style controllability test for the pair (A, B).
ControllabilityGramian controllability_gramian(const Matrix& a, const Matrix& b,
                                               RankTolerance tol = {});

}  // namespace mdev
