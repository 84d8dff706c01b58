#include "levybt/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace levybt {

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

Vector vec(const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unvec(const Vector& v, int rows, int cols) {
    if (v.size() != static_cast<Eigen::Index>(rows) * cols) {
        throw std::invalid_argument("unvec: size mismatch");
    }
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

double min_eig_sym(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double max_eig_sym(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

Matrix psd_sqrt(const Matrix& m, double rel_tol) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
    const Vector& lam = es.eigenvalues();
    const double scale = std::max(std::abs(lam.minCoeff()), std::abs(lam.maxCoeff()));
    Vector root(lam.size());
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam(i) < -rel_tol * std::max(1.0, scale)) {
            throw std::invalid_argument("psd_sqrt: matrix is not positive semidefinite (min eig " +
                                        std::to_string(lam.minCoeff()) + ")");
        }
        root(i) = std::sqrt(std::max(lam(i), 0.0));
    }
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

bool is_psd(const Matrix& m, double rel_tol) {
    if (m.rows() != m.cols()) {
        return false;
    }
    if (m.size() == 0) {
        return true;
    }
    const double mineig = min_eig_sym(m);
    const double scale = std::max(1.0, m.norm());
    return mineig >= -rel_tol * scale;
}

LyapunovSchurSolver::LyapunovSchurSolver(const Matrix& a) {
    Eigen::ComplexSchur<Matrix> schur(a);
    if (schur.info() != Eigen::Success) {
        throw std::runtime_error("LyapunovSchurSolver: Schur decomposition failed");
    }
    u_ = schur.matrixU();
    t_ = schur.matrixT();
}

Matrix LyapunovSchurSolver::solve(const Matrix& w) const {
    // A = U T U^*, hence A^T = conj(U) T^T conj(U)^*. With V = conj(U) and
    // Z = V^* X U the equation A^T X + X A = W becomes T^T Z + Z T = V^* W U,
    // a triangular system solved one column at a time.
    const Eigen::Index n = t_.rows();
    if (w.rows() != n || w.cols() != n) {
        throw std::invalid_argument("LyapunovSchurSolver: RHS dimension mismatch");
    }
    const Eigen::MatrixXcd v = u_.conjugate();
    Eigen::MatrixXcd rhs = v.adjoint() * w * u_;
    Eigen::MatrixXcd z(n, n);
    const Eigen::MatrixXcd l = t_.transpose();  // lower triangular
    const double diag_scale = t_.diagonal().cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::VectorXcd col = rhs.col(j);
        for (Eigen::Index i = 0; i < j; ++i) {
            col -= z.col(i) * t_(i, j);
        }
        // forward substitution on (L + t_jj I) z_j = col
        for (Eigen::Index i = 0; i < n; ++i) {
            std::complex<double> diag = l(i, i) + t_(j, j);
            if (std::abs(diag) < 1e-14 * std::max(1.0, diag_scale)) {
                throw std::runtime_error("Lyapunov equation is singular: eigenvalue pair sums to zero");
            }
            std::complex<double> s = col(i);
            for (Eigen::Index k = 0; k < i; ++k) {
                s -= l(i, k) * z(k, j);
            }
            z(i, j) = s / diag;
        }
    }
    Matrix x = (v * z * u_.adjoint()).real();
    return symmetrize(x);
}

}  // namespace levybt
