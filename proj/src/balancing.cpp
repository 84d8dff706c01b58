#include "levybt/balancing.hpp"

#include <cmath>
#include <sstream>

#include "levybt/util.hpp"

namespace levybt {

namespace {

Matrix cholesky_factor(const Matrix& m, const char* what) {
    Eigen::LLT<Matrix> llt(symmetrize(m));
    if (llt.info() != Eigen::Success) {
        throw std::runtime_error(std::string(what) + " is numerically indefinite (min eig " +
                                 format_g17(min_eig_sym(m)) + ")");
    }
    return llt.matrixL();
}

constexpr double kGroupingRelTol = 1e-10;  // |σ_i - σ_j| ≤ tol·σ_1 treated as equal

std::vector<DistinctHsv> distinct_partition(const Vector& sigma2, double sigma1) {
    std::vector<DistinctHsv> groups;
    const double tol = kGroupingRelTol * sigma1;
    for (Eigen::Index i = 0; i < sigma2.size(); ++i) {
        if (!groups.empty() && std::abs(groups.back().value - sigma2(i)) <= tol) {
            ++groups.back().multiplicity;
        } else {
            groups.push_back({sigma2(i), 1});
        }
    }
    return groups;
}

}  // namespace

Vector hankel_singular_values(const Matrix& p, const Matrix& q) {
    const Matrix lp = cholesky_factor(p, "reachability Gramian P");
    const Matrix lq = cholesky_factor(q, "observability Gramian Q");
    Eigen::JacobiSVD<Matrix> svd(lq.transpose() * lp);
    return svd.singularValues();
}

BalancedRealization balance(const StochasticBilinearSystem& sys, const GramianPair& gramians) {
    const int n = sys.n;
    if (gramians.P.rows() != n || gramians.Q.rows() != n) {
        throw std::invalid_argument("balance: Gramian dimensions do not match the system");
    }
    const Matrix lp = cholesky_factor(gramians.P, "reachability Gramian P");
    const Matrix lq = cholesky_factor(gramians.Q, "observability Gramian Q");

    Eigen::JacobiSVD<Matrix> svd(lq.transpose() * lp, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector sigma = svd.singularValues();
    if (sigma(n - 1) < 1e-14 * sigma(0)) {
        throw std::runtime_error("balance: system is near-unbalanceable (σ_n/σ_1 = " +
                                 format_g17(sigma(n - 1) / sigma(0)) + ")");
    }

    const Vector inv_sqrt = sigma.cwiseSqrt().cwiseInverse();
    BalancedRealization bal;
    bal.sigma = sigma;
    bal.S = inv_sqrt.asDiagonal() * svd.matrixU().transpose() * lq.transpose();
    bal.S_inv = lp * svd.matrixV() * inv_sqrt.asDiagonal();

    StochasticBilinearSystem out;
    out.n = n;
    out.m = sys.m;
    out.p = sys.p;
    out.v = sys.v;
    out.A = bal.S * sys.A * bal.S_inv;
    out.B = bal.S * sys.B;
    out.C = sys.C * bal.S_inv;
    out.K = sys.K;
    for (const auto& nk : sys.N) {
        out.N.push_back(bal.S * nk * bal.S_inv);
    }
    for (const auto& hi : sys.H) {
        out.H.push_back(bal.S * hi * bal.S_inv);
    }
    bal.sys_balanced = std::move(out);
    return bal;
}

ReducedModel truncate(const BalancedRealization& bal, int r) {
    const int n = bal.sys_balanced.n;
    if (r < 1 || r >= n) {
        throw std::invalid_argument("truncate: r must satisfy 1 <= r < n, got r = " + std::to_string(r));
    }
    const auto& sys = bal.sys_balanced;

    ReducedModel model;
    model.r = r;
    model.sigma2 = bal.sigma.segment(r, n - r);
    model.distinct_values = distinct_partition(model.sigma2, bal.sigma(0));
    model.split_multiplicity_group =
        std::abs(bal.sigma(r - 1) - bal.sigma(r)) <= kGroupingRelTol * bal.sigma(0);

    StochasticBilinearSystem& rom = model.sys_r;
    rom.n = r;
    rom.m = sys.m;
    rom.p = sys.p;
    rom.v = sys.v;
    rom.A = sys.A.topLeftCorner(r, r);
    rom.B = sys.B.topRows(r);
    rom.C = sys.C.leftCols(r);
    rom.K = sys.K;
    for (const auto& nk : sys.N) {
        rom.N.push_back(nk.topLeftCorner(r, r));
    }
    for (const auto& hi : sys.H) {
        rom.H.push_back(hi.topLeftCorner(r, r));
    }
    return model;
}

double error_bound(const ReducedModel& model, double u_l2_norm) {
    if (u_l2_norm < 0.0) {
        throw std::invalid_argument("error_bound: control norm must be nonnegative");
    }
    double sum = 0.0;
    for (const auto& group : model.distinct_values) {
        sum += group.value;
    }
    return 2.0 * sum * u_l2_norm * std::exp(0.5 * u_l2_norm * u_l2_norm);
}

double error_bound_with_multiplicity(const ReducedModel& model, double u_l2_norm) {
    if (u_l2_norm < 0.0) {
        throw std::invalid_argument("error_bound: control norm must be nonnegative");
    }
    const double sum = model.sigma2.sum();
    return 2.0 * sum * u_l2_norm * std::exp(0.5 * u_l2_norm * u_l2_norm);
}

TruncatedInequalityCheck check_truncated_inequalities(const BalancedRealization& bal, int r) {
    const int n = bal.sys_balanced.n;
    if (r < 1 || r >= n) {
        throw std::invalid_argument("check_truncated_inequalities: r out of range");
    }
    const auto& sys = bal.sys_balanced;
    const Vector sigma1 = bal.sigma.head(r);
    const Matrix sig = sigma1.asDiagonal();
    const Matrix sig_inv = sigma1.cwiseInverse().asDiagonal();

    const Matrix a11 = sys.A.topLeftCorner(r, r);
    const Matrix b1 = sys.B.topRows(r);
    const Matrix c1 = sys.C.leftCols(r);

    Matrix reach = symmetrize(a11.transpose() * sig_inv + sig_inv * a11) +
                   sig_inv * b1 * b1.transpose() * sig_inv;
    Matrix observe = symmetrize(a11.transpose() * sig + sig * a11) + c1.transpose() * c1;
    for (const auto& nk : sys.N) {
        const Matrix n11 = nk.topLeftCorner(r, r);
        reach += n11.transpose() * sig_inv * n11;
        observe += n11.transpose() * sig * n11;
    }
    for (int i = 0; i < sys.v; ++i) {
        for (int j = 0; j < sys.v; ++j) {
            if (sys.K(i, j) == 0.0) {
                continue;
            }
            const Matrix hi11 = sys.H[i].topLeftCorner(r, r);
            const Matrix hj11 = sys.H[j].topLeftCorner(r, r);
            reach += sys.K(i, j) * hi11.transpose() * sig_inv * hj11;
            observe += sys.K(i, j) * hi11.transpose() * sig * hj11;
        }
    }
    reach = symmetrize(reach);
    observe = symmetrize(observe);

    TruncatedInequalityCheck check;
    check.reach_max_eig = max_eig_sym(reach);
    check.observe_max_eig = max_eig_sym(observe);
    check.reach_scale = std::max(1.0, reach.norm());
    check.observe_scale = std::max(1.0, observe.norm());
    return check;
}

void write_hsv_csv(const Vector& sigma, const std::string& path) {
    std::ostringstream out;
    out << "index,value\n";
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        out << (i + 1) << "," << format_g17(sigma(i)) << "\n";
    }
    atomic_write_file(path, out.str());
}

void write_bound_table_csv(const std::vector<BoundTableRow>& rows, const std::string& path) {
    std::ostringstream out;
    out << "r,bound_distinct,bound_with_multiplicity\n";
    for (const auto& row : rows) {
        out << row.r << "," << format_g17(row.bound_distinct) << ","
            << format_g17(row.bound_with_multiplicity) << "\n";
    }
    atomic_write_file(path, out.str());
}

}  // namespace levybt
