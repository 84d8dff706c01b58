#pragma once

#include <Eigen/Dense>

namespace levybt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix kron(const Matrix& a, const Matrix& b);

/// Column-stacking vectorization, so vec(A X B) = (B^T ⊗ A) vec(X).
Vector vec(const Matrix& m);
Matrix unvec(const Vector& v, int rows, int cols);

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Extremal eigenvalues of a symmetric matrix. Inputs are symmetrized first
/// so callers may pass matrices with rounding-level asymmetry.
double min_eig_sym(const Matrix& m);
double max_eig_sym(const Matrix& m);

/// Spectral square root of a symmetric PSD matrix. Eigenvalues below
/// -tol·max|λ| raise; those in [-tol·max|λ|, 0) are clamped to zero.
Matrix psd_sqrt(const Matrix& m, double rel_tol = 1e-12);

bool is_psd(const Matrix& m, double rel_tol = 1e-12);

/// Solves A^T X + X A = W (W symmetric, A real) via complex Schur
/// reduction. The factorization of A is reused across solve() calls, which
/// is what makes lagged sweeps cheap.
class LyapunovSchurSolver {
  public:
    explicit LyapunovSchurSolver(const Matrix& a);

    /// Returns the symmetric solution X. Throws if λ_i(A) + λ_j(A) ≈ 0 for
    /// some pair (the equation is then singular).
    Matrix solve(const Matrix& w) const;

  private:
    Eigen::MatrixXcd u_;  // unitary Schur vectors of A
    Eigen::MatrixXcd t_;  // upper triangular Schur factor of A
};

}  // namespace levybt
