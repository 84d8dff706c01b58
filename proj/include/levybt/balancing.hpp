#pragma once

#include <string>
#include <vector>

#include "levybt/gramians.hpp"

namespace levybt {

struct BalancedRealization {
    StochasticBilinearSystem sys_balanced;
    Matrix S;      // state transform, x̃ = S x
    Matrix S_inv;
    Vector sigma;  // Hankel singular values, non-increasing and positive
};

struct DistinctHsv {
    double value = 0.0;
    int multiplicity = 0;
};

struct ReducedModel {
    StochasticBilinearSystem sys_r;  // order-r leading blocks of the balanced system
    int r = 0;
    Vector sigma2;                           // truncated HSVs σ_{r+1..n}
    std::vector<DistinctHsv> distinct_values;  // strictly decreasing values with multiplicities
    bool split_multiplicity_group = false;   // σ_r and σ_{r+1} coincide within the grouping tolerance
};

/// σ_i = singular values of L_Q^T L_P = sqrt of the eigenvalues of P·Q.
Vector hankel_singular_values(const Matrix& p, const Matrix& q);

/// Square-root balancing: P = L_P L_P^T, Q = L_Q L_Q^T, SVD X Σ Y^T =
/// L_Q^T L_P, S = Σ^{-1/2} X^T L_Q^T and S^{-1} = L_P Y Σ^{-1/2}, which
/// yields S P S^T = S^{-T} Q S^{-1} = Σ. Throws when P or Q is numerically
/// indefinite or σ_n < 1e-14·σ_1.
BalancedRealization balance(const StochasticBilinearSystem& sys, const GramianPair& gramians);

/// Leading-block truncation to order r with the distinct-value partition of
/// the removed HSVs (relative equality threshold 1e-10·σ_1).
ReducedModel truncate(const BalancedRealization& bal, int r);

/// 2·(σ̃_1 + … + σ̃_κ)·‖u‖·exp(0.5‖u‖²) over the distinct truncated HSVs.
double error_bound(const ReducedModel& model, double u_l2_norm);

/// Same bound with every truncated HSV counted by multiplicity.
double error_bound_with_multiplicity(const ReducedModel& model, double u_l2_norm);

struct TruncatedInequalityCheck {
    double reach_max_eig = 0.0;    // λ_max of the truncated reachability LHS (+ B₁ term)
    double observe_max_eig = 0.0;  // λ_max of the truncated observability LHS (+ C₁ᵀC₁)
    double reach_scale = 1.0;
    double observe_scale = 1.0;
};

/// Left-upper-block inequalities inherited from the balanced system:
///   A₁₁ᵀΣ₁⁻¹ + Σ₁⁻¹A₁₁ + ΣN₁₁ᵀΣ₁⁻¹N₁₁ + ΣH₁₁ᵀΣ₁⁻¹H₁₁k ⪯ -Σ₁⁻¹B₁B₁ᵀΣ₁⁻¹
///   A₁₁ᵀΣ₁  + Σ₁A₁₁  + ΣN₁₁ᵀΣ₁N₁₁  + ΣH₁₁ᵀΣ₁H₁₁k  ⪯ -C₁ᵀC₁
/// Both hold whenever the full Gramian pair was accepted; scales are the
/// Frobenius norms of the assembled left-hand sides.
TruncatedInequalityCheck check_truncated_inequalities(const BalancedRealization& bal, int r);

void write_hsv_csv(const Vector& sigma, const std::string& path);

struct BoundTableRow {
    int r = 0;
    double bound_distinct = 0.0;
    double bound_with_multiplicity = 0.0;
};
void write_bound_table_csv(const std::vector<BoundTableRow>& rows, const std::string& path);

}  // namespace levybt
