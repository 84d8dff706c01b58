#pragma once

#include <optional>
#include <string>
#include <vector>

#include "levybt/system.hpp"

namespace levybt {

enum class GramianMethod {
    newton,             // maximal-Y Newton iteration for the reachability equation
    lagged_fixed_point  // conservative fallback; converges to the minimal-Y solution
};

enum class InnerLyapunov {
    automatic,             // direct Kronecker solve up to direct_dimension_cap, lagged sweeps beyond
    direct_kronecker,      // exact n²×n² vectorized solve, O(n⁶)
    lagged_bartels_stewart // Schur-based two-sided Lyapunov sweeps with lagged noise terms
};

struct SolverOptions {
    /// Absolute shift for the reachability equation. Unset means
    /// 1e-8·‖A‖_F, chosen so the strict inequality has margin without
    /// distorting the Hankel singular values.
    std::optional<double> epsilon;
    int max_iterations = 100;       // Newton steps; lagged sweeps get 10× this
    double convergence_tol = 1e-12;
    GramianMethod method = GramianMethod::newton;
    InnerLyapunov inner_lyapunov = InnerLyapunov::automatic;
    int direct_dimension_cap = 60;
};

struct GramianInfo {
    double residual_norm = 0.0;  // Frobenius norm of the defining-equation residual
    double min_eig = 0.0;        // smallest eigenvalue of the computed Gramian
    int iterations = 0;
    std::string method;          // what actually ran, including fallbacks
    std::string warning;         // definiteness warnings and similar non-fatal findings
};

struct GramianPair {
    Matrix P;  // reachability Gramian, symmetric positive definite
    Matrix Q;  // observability Gramian, symmetric positive definite
    double p_residual_mineig = 0.0;  // min eig of the negated reachability residual
    double q_residual_norm = 0.0;    // Frobenius norm of the Lyapunov residual for Q
    double epsilon = 0.0;            // shift actually used for P
    GramianInfo p_info;
    GramianInfo q_info;
};

struct ReachabilityResidual {
    Matrix R;              // A^T Y + Y A + Π(Y) + Y B B^T Y with Y = P^{-1}
    double min_eig = 0.0;  // smallest eigenvalue of -R; P is accepted iff ≥ -tol
    double schur_max_eig = 0.0;  // largest eigenvalue of the (n+m) block form
};

/// Σ_ij A_i^T Y A_j k_ij assembled from the factored form
/// Σ_l w_l M_l^T M_l (K = Σ_l w_l q_l q_l^T, M_l = Y^{1/2} Σ_i q_li A_i),
/// so the result is positive semidefinite by construction.
/// Throws if Y or K fails its PSD tolerance.
Matrix apply_noise_operator(const std::vector<Matrix>& mats, const Matrix& y, const Matrix& k);

/// Π(Y) = Σ_k N_k^T Y N_k + Σ_ij H_i^T Y H_j k_ij by direct double sum.
/// No PSD projection; used for residuals and solver internals.
Matrix noise_quadratic(const StochasticBilinearSystem& sys, const Matrix& y);

/// Value used when SolverOptions::epsilon is unset.
double default_epsilon(const StochasticBilinearSystem& sys);

/// Solves A^T X + X A + Σ N_k^T X N_k + Σ H_i^T X H_j k_ij = RHS for the
/// symmetric PSD X. Requires a mean-square stable system and symmetric
/// negative semidefinite RHS; instability surfaces as a singular lifted
/// operator or an indefinite solution, both reported.
Matrix solve_generalized_lyapunov(const StochasticBilinearSystem& sys, const Matrix& rhs,
                                  const SolverOptions& opts = {}, GramianInfo* info = nullptr);

/// Q from the generalized Lyapunov equation with RHS = -C^T C. Emits a
/// definiteness warning in info when Q is only semidefinite.
Matrix solve_observability_gramian(const StochasticBilinearSystem& sys,
                                   const SolverOptions& opts = {}, GramianInfo* info = nullptr);

/// P = Y^{-1} where Y is the maximal symmetric positive definite solution
/// of the shifted Riccati-type equation
///   A^T Y + Y A + Π(Y) + Y B B^T Y + εI = 0.
/// Newton steps solve the generalized Lyapunov equation with closed-loop
/// drift A + B B^T Y_j; every result is gated by residual_reachability.
/// Newton always uses the direct Kronecker inner solve (the closed loop is
/// not mean-square stable, so lagged sweeps do not contract); expect O(n⁶).
Matrix solve_reachability_gramian(const StochasticBilinearSystem& sys,
                                  const SolverOptions& opts = {}, GramianInfo* info = nullptr);

/// Residual diagnostics for a candidate P against the reachability
/// inequality, in both the quadratic form and the (n+m)×(n+m) Schur block
/// form [[A^T Y + Y A + Π(Y), Y B], [B^T Y, -I]].
ReachabilityResidual residual_reachability(const StochasticBilinearSystem& sys, const Matrix& p);

GramianPair solve_gramians(const StochasticBilinearSystem& sys, const SolverOptions& opts = {});

void save_gramians(const GramianPair& pair, const std::string& path);
GramianPair load_gramians(const std::string& path);

}  // namespace levybt
