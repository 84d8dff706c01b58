#include "levybt/gramians.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "levybt/util.hpp"

namespace levybt {

namespace {

void require_square(const std::vector<Matrix>& mats, const Matrix& k, const Matrix& y) {
    if (static_cast<Eigen::Index>(mats.size()) != k.rows() || k.rows() != k.cols()) {
        throw std::invalid_argument("apply_noise_operator: weight matrix must be v×v for v matrices");
    }
    for (const auto& mat : mats) {
        if (mat.rows() != y.rows() || mat.cols() != y.cols()) {
            throw std::invalid_argument("apply_noise_operator: matrix dimension mismatch");
        }
    }
}

Matrix gen_lyap_operator(const Matrix& drift, const StochasticBilinearSystem& sys) {
    const int n = sys.n;
    const Matrix eye = Matrix::Identity(n, n);
    const Matrix at = drift.transpose();
    Matrix op = kron(eye, at) + kron(at, eye);
    for (const auto& nk : sys.N) {
        op += kron(nk.transpose(), nk.transpose());
    }
    for (int i = 0; i < sys.v; ++i) {
        for (int j = 0; j < sys.v; ++j) {
            if (sys.K(i, j) != 0.0) {
                op += sys.K(i, j) * kron(sys.H[j].transpose(), sys.H[i].transpose());
            }
        }
    }
    return op;
}

Matrix gen_lyap_residual(const Matrix& drift, const StochasticBilinearSystem& sys,
                         const Matrix& x, const Matrix& rhs) {
    return symmetrize(drift.transpose() * x + x * drift) + noise_quadratic(sys, x) - rhs;
}

/// Exact vectorized solve of the generalized Lyapunov equation with an
/// arbitrary drift matrix. The drift need not be stable; only
/// nonsingularity of the lifted operator is required.
Matrix solve_gen_lyap_direct(const Matrix& drift, const StochasticBilinearSystem& sys,
                             const Matrix& rhs, double& residual_out) {
    const int n = sys.n;
    const Matrix op = gen_lyap_operator(drift, sys);
    Eigen::PartialPivLU<Matrix> lu(op);
    Vector solution = lu.solve(vec(rhs));
    Matrix x = symmetrize(unvec(solution, n, n));
    residual_out = gen_lyap_residual(drift, sys, x, rhs).norm();
    return x;
}

/// Lagged sweeps X_{l+1} = L_A^{-1}(RHS - Π(X_l)) around the Schur-factored
/// standard Lyapunov solve. Contracts exactly when the system is
/// mean-square stable.
Matrix solve_gen_lyap_lagged(const Matrix& drift, const StochasticBilinearSystem& sys,
                             const Matrix& rhs, int max_sweeps, double tol,
                             double& residual_out, int& iterations_out) {
    LyapunovSchurSolver lyap(drift);
    const double rhs_scale = std::max(1.0, rhs.norm());
    Matrix x = Matrix::Zero(sys.n, sys.n);
    double residual = gen_lyap_residual(drift, sys, x, rhs).norm();
    for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
        x = lyap.solve(rhs - noise_quadratic(sys, x));
        residual = gen_lyap_residual(drift, sys, x, rhs).norm();
        iterations_out = sweep;
        if (residual <= tol * rhs_scale) {
            residual_out = residual;
            return x;
        }
        if (!x.allFinite() || x.norm() > 1e14 * rhs_scale) {
            throw std::runtime_error(
                "generalized Lyapunov lagged iteration diverged; "
                "the system is likely not mean-square stable");
        }
    }
    throw std::runtime_error("generalized Lyapunov lagged iteration did not converge; final residual " +
                             format_g17(residual));
}

/// Riccati-type map whose maximal root defines the reachability Gramian.
Matrix riccati_residual(const StochasticBilinearSystem& sys, const Matrix& y, double epsilon) {
    const Matrix bbt = sys.B * sys.B.transpose();
    return symmetrize(sys.A.transpose() * y + y * sys.A) + noise_quadratic(sys, y) +
           y * bbt * y + epsilon * Matrix::Identity(sys.n, sys.n);
}

Matrix invert_spd(const Matrix& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
    const Vector& lam = es.eigenvalues();
    if (lam.minCoeff() <= 1e-14 * std::max(1.0, lam.maxCoeff())) {
        throw std::runtime_error(std::string(what) + " is not invertible to working precision (min eig " +
                                 format_g17(lam.minCoeff()) + ")");
    }
    return es.eigenvectors() * lam.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Matrix apply_noise_operator(const std::vector<Matrix>& mats, const Matrix& y, const Matrix& k) {
    if (mats.empty()) {
        return Matrix::Zero(y.rows(), y.cols());
    }
    require_square(mats, k, y);
    if (!is_psd(y, 1e-10)) {
        throw std::invalid_argument("apply_noise_operator: Y is not PSD within tolerance (min eig " +
                                    format_g17(min_eig_sym(y)) + ")");
    }
    if (!is_psd(k, 1e-10)) {
        throw std::invalid_argument("apply_noise_operator: weight matrix is not PSD within tolerance "
                                    "(min eig " + format_g17(min_eig_sym(k)) + ")");
    }
    const Matrix root = psd_sqrt(y, 1e-10);
    std::vector<Matrix> factors;
    factors.reserve(mats.size());
    for (const auto& mat : mats) {
        factors.push_back(root * mat);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(k));
    Matrix out = Matrix::Zero(y.rows(), y.cols());
    for (Eigen::Index l = 0; l < es.eigenvalues().size(); ++l) {
        const double weight = std::max(es.eigenvalues()(l), 0.0);
        if (weight == 0.0) {
            continue;
        }
        Matrix mixed = Matrix::Zero(y.rows(), y.cols());
        for (std::size_t i = 0; i < factors.size(); ++i) {
            mixed += es.eigenvectors()(static_cast<Eigen::Index>(i), l) * factors[i];
        }
        out += weight * mixed.transpose() * mixed;
    }
    return symmetrize(out);
}

Matrix noise_quadratic(const StochasticBilinearSystem& sys, const Matrix& y) {
    Matrix out = Matrix::Zero(sys.n, sys.n);
    for (const auto& nk : sys.N) {
        out += nk.transpose() * y * nk;
    }
    for (int i = 0; i < sys.v; ++i) {
        for (int j = 0; j < sys.v; ++j) {
            if (sys.K(i, j) != 0.0) {
                out += sys.K(i, j) * sys.H[i].transpose() * y * sys.H[j];
            }
        }
    }
    return symmetrize(out);
}

double default_epsilon(const StochasticBilinearSystem& sys) {
    return 1e-8 * sys.A.norm();
}

Matrix solve_generalized_lyapunov(const StochasticBilinearSystem& sys, const Matrix& rhs,
                                  const SolverOptions& opts, GramianInfo* info) {
    if (rhs.rows() != sys.n || rhs.cols() != sys.n) {
        throw std::invalid_argument("solve_generalized_lyapunov: RHS must be n×n");
    }
    const double rhs_scale = std::max(1.0, rhs.norm());
    if ((rhs - rhs.transpose()).norm() > 1e-10 * rhs_scale) {
        throw std::invalid_argument("solve_generalized_lyapunov: RHS must be symmetric");
    }
    if (max_eig_sym(rhs) > 1e-10 * rhs_scale) {
        throw std::invalid_argument("solve_generalized_lyapunov: RHS must be negative semidefinite");
    }

    const bool direct = opts.inner_lyapunov == InnerLyapunov::direct_kronecker ||
                        (opts.inner_lyapunov == InnerLyapunov::automatic &&
                         sys.n <= opts.direct_dimension_cap);
    GramianInfo local;
    Matrix x;
    if (direct) {
        double residual = 0.0;
        x = solve_gen_lyap_direct(sys.A, sys, rhs, residual);
        local.residual_norm = residual;
        local.iterations = 1;
        local.method = "direct_kronecker";
        if (residual > opts.convergence_tol * rhs_scale * 1e3) {
            throw std::runtime_error("generalized Lyapunov operator is singular or severely "
                                     "ill-conditioned (residual " + format_g17(residual) +
                                     "); is the system mean-square stable?");
        }
    } else {
        double residual = 0.0;
        int sweeps = 0;
        x = solve_gen_lyap_lagged(sys.A, sys, rhs, opts.max_iterations * 10, opts.convergence_tol,
                                  residual, sweeps);
        local.residual_norm = residual;
        local.iterations = sweeps;
        local.method = "lagged_bartels_stewart";
    }

    local.min_eig = min_eig_sym(x);
    if (local.min_eig < -1e-8 * std::max(1.0, x.norm())) {
        throw std::runtime_error("generalized Lyapunov solution is indefinite (min eig " +
                                 format_g17(local.min_eig) +
                                 "); the system is likely not mean-square stable");
    }
    if (info) {
        *info = local;
    }
    return x;
}

Matrix solve_observability_gramian(const StochasticBilinearSystem& sys, const SolverOptions& opts,
                                   GramianInfo* info) {
    const Matrix rhs = -(sys.C.transpose() * sys.C);
    GramianInfo local;
    Matrix q = solve_generalized_lyapunov(sys, rhs, opts, &local);
    if (local.min_eig <= 1e-12 * std::max(1.0, q.norm())) {
        local.warning = "observability Gramian is not positive definite (min eig " +
                        format_g17(local.min_eig) + ")";
    }
    if (info) {
        *info = local;
    }
    return q;
}

ReachabilityResidual residual_reachability(const StochasticBilinearSystem& sys, const Matrix& p) {
    if (p.rows() != sys.n || p.cols() != sys.n) {
        throw std::invalid_argument("residual_reachability: P must be n×n");
    }
    const Matrix y = invert_spd(p, "reachability Gramian P");
    const Matrix bbt = sys.B * sys.B.transpose();
    const Matrix linear_part = symmetrize(sys.A.transpose() * y + y * sys.A) + noise_quadratic(sys, y);

    ReachabilityResidual out;
    out.R = symmetrize(linear_part + y * bbt * y);
    out.min_eig = -max_eig_sym(out.R);

    const int n = sys.n, m = sys.m;
    Matrix block(n + m, n + m);
    block.topLeftCorner(n, n) = linear_part;
    block.topRightCorner(n, m) = y * sys.B;
    block.bottomLeftCorner(m, n) = sys.B.transpose() * y;
    block.bottomRightCorner(m, m) = -Matrix::Identity(m, m);
    out.schur_max_eig = max_eig_sym(block);
    return out;
}

namespace {

/// Initialization ladder for the Newton iteration. The scalar recipe
/// (double c until R(cI) is PSD) terminates only when B B^T has full rank;
/// with a thin B the residual stays indefinite for every c, so we fall
/// through to a warm start computed from the minimal-P fixed point in
/// P-coordinates, and lastly to the identity.
Matrix newton_initial_guess(const StochasticBilinearSystem& sys, double epsilon) {
    const int n = sys.n;

    double c = 1.0;
    for (int attempt = 0; attempt < 21; ++attempt) {
        const Matrix candidate = c * Matrix::Identity(n, n);
        if (min_eig_sym(riccati_residual(sys, candidate, epsilon)) >= 0.0) {
            return candidate;
        }
        c *= 2.0;
    }

    try {
        LyapunovSchurSolver lyap_adjoint(sys.A.transpose());  // solves A X + X A^T = W
        const Matrix bbt = sys.B * sys.B.transpose();
        const double reg = epsilon * std::max(1.0, bbt.norm());
        Matrix p = lyap_adjoint.solve(-bbt - reg * Matrix::Identity(n, n));
        for (int sweep = 0; sweep < 60; ++sweep) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(p));
            if (es.eigenvalues().minCoeff() <= 1e-13 * std::max(1.0, es.eigenvalues().maxCoeff())) {
                break;  // losing definiteness; keep the last PD iterate
            }
            const Matrix p_inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                                 es.eigenvectors().transpose();
            Matrix next = lyap_adjoint.solve(-bbt - p * noise_quadratic(sys, p_inv) * p -
                                             epsilon * p * p);
            next = symmetrize(next);
            if (!next.allFinite() || next.norm() > 1e14) {
                break;
            }
            const double change = (next - p).norm();
            p = next;
            if (change <= 1e-12 * std::max(1.0, p.norm())) {
                break;
            }
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(p));
        if (es.eigenvalues().minCoeff() > 1e-13 * std::max(1.0, es.eigenvalues().maxCoeff())) {
            return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                   es.eigenvectors().transpose();
        }
    } catch (const std::exception&) {
        // fall through to the identity start
    }
    return Matrix::Identity(n, n);
}

struct NewtonOutcome {
    Matrix y;
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

NewtonOutcome newton_iterate(const StochasticBilinearSystem& sys, double epsilon,
                             const SolverOptions& opts) {
    const int n = sys.n;
    const Matrix bbt = sys.B * sys.B.transpose();
    const Matrix eye = Matrix::Identity(n, n);

    NewtonOutcome out;
    out.y = newton_initial_guess(sys, epsilon);
    double residual = riccati_residual(sys, out.y, epsilon).norm();
    const auto scale = [&](const Matrix& y) {
        return std::max(1.0, sys.A.norm() * std::max(1.0, y.norm()));
    };

    for (int j = 0; j < opts.max_iterations; ++j) {
        if (residual <= opts.convergence_tol * scale(out.y)) {
            out.converged = true;
            break;
        }
        const Matrix drift = sys.A + bbt * out.y;
        const Matrix rhs = symmetrize(out.y * bbt * out.y) - epsilon * eye;
        double inner_residual = 0.0;
        Matrix full_step;
        try {
            full_step = solve_gen_lyap_direct(drift, sys, rhs, inner_residual);
        } catch (const std::exception&) {
            break;
        }
        if (!full_step.allFinite() ||
            inner_residual > 1e-6 * std::max(1.0, rhs.norm())) {
            break;  // linearization singular at this iterate
        }

        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving) {
            const Matrix candidate = symmetrize(out.y + t * (full_step - out.y));
            const double cand_residual = riccati_residual(sys, candidate, epsilon).norm();
            if (cand_residual < residual * (1.0 - 0.25 * t) ||
                cand_residual <= opts.convergence_tol * scale(candidate)) {
                out.y = candidate;
                residual = cand_residual;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        out.iterations = j + 1;
        if (!accepted) {
            break;  // stalled; the residual gate decides below
        }
    }
    out.residual = residual;
    if (!out.converged) {
        out.converged = residual <= opts.convergence_tol * scale(out.y) * 1e3;
    }
    return out;
}

NewtonOutcome lagged_iterate(const StochasticBilinearSystem& sys, double epsilon,
                             const SolverOptions& opts) {
    // Both the noise terms and the quadratic term are lagged; each sweep is
    // one standard Lyapunov solve with the stable open-loop drift. Converges
    // to the minimal-Y (largest-P, conservative) solution.
    const int n = sys.n;
    const Matrix bbt = sys.B * sys.B.transpose();
    const Matrix eye = Matrix::Identity(n, n);
    LyapunovSchurSolver lyap(sys.A);

    NewtonOutcome out;
    out.y = Matrix::Zero(n, n);
    const int max_sweeps = opts.max_iterations * 10;
    for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
        Matrix next = lyap.solve(-epsilon * eye - noise_quadratic(sys, out.y) -
                                 symmetrize(out.y * bbt * out.y));
        next = symmetrize(next);
        const double change = (next - out.y).norm();
        out.y = next;
        out.iterations = sweep;
        if (!out.y.allFinite() || out.y.norm() > 1e14) {
            throw std::runtime_error("reachability lagged iteration diverged; "
                                     "the system is likely not mean-square stable");
        }
        out.residual = riccati_residual(sys, out.y, epsilon).norm();
        const double tol_scale = std::max(1.0, sys.A.norm() * std::max(1.0, out.y.norm()));
        if (out.residual <= opts.convergence_tol * tol_scale && change <= 1e-10 * std::max(1.0, out.y.norm())) {
            out.converged = true;
            return out;
        }
    }
    throw std::runtime_error("reachability lagged iteration did not converge; final residual " +
                             format_g17(out.residual));
}

}  // namespace

Matrix solve_reachability_gramian(const StochasticBilinearSystem& sys, const SolverOptions& opts,
                                  GramianInfo* info) {
    const double epsilon = opts.epsilon.value_or(default_epsilon(sys));
    if (epsilon <= 0.0) {
        throw std::invalid_argument("solve_reachability_gramian: epsilon must be positive");
    }

    GramianInfo local;
    const double accept_tol = 1e-8 * std::max(1.0, sys.A.norm());

    auto finish = [&](const NewtonOutcome& outcome, const std::string& method) -> std::optional<Matrix> {
        const double y_mineig = min_eig_sym(outcome.y);
        if (y_mineig <= 0.0) {
            return std::nullopt;
        }
        Matrix p = invert_spd(outcome.y, "iterate Y");
        const ReachabilityResidual gate = residual_reachability(sys, p);
        if (gate.min_eig < -accept_tol) {
            return std::nullopt;
        }
        local.residual_norm = outcome.residual;
        local.iterations = outcome.iterations;
        local.method = method;
        local.min_eig = min_eig_sym(p);
        return p;
    };

    if (opts.method == GramianMethod::newton) {
        NewtonOutcome newton = newton_iterate(sys, epsilon, opts);
        if (newton.converged) {
            if (auto p = finish(newton, "newton")) {
                if (info) *info = local;
                return *p;
            }
        }
        NewtonOutcome lagged = lagged_iterate(sys, epsilon, opts);
        if (auto p = finish(lagged, "lagged_fixed_point")) {
            local.warning = "newton iteration rejected (residual " + format_g17(newton.residual) +
                            "); conservative lagged solution returned";
            if (info) *info = local;
            return *p;
        }
        throw std::runtime_error("reachability Gramian: both newton and lagged iterations were "
                                 "rejected by the residual gate");
    }

    NewtonOutcome lagged = lagged_iterate(sys, epsilon, opts);
    if (auto p = finish(lagged, "lagged_fixed_point")) {
        if (info) *info = local;
        return *p;
    }
    throw std::runtime_error("reachability Gramian: lagged iteration rejected by the residual gate");
}

GramianPair solve_gramians(const StochasticBilinearSystem& sys, const SolverOptions& opts) {
    GramianPair pair;
    pair.epsilon = opts.epsilon.value_or(default_epsilon(sys));
    pair.Q = solve_observability_gramian(sys, opts, &pair.q_info);
    pair.P = solve_reachability_gramian(sys, opts, &pair.p_info);
    pair.q_residual_norm = pair.q_info.residual_norm;
    pair.p_residual_mineig = residual_reachability(sys, pair.P).min_eig;
    return pair;
}

namespace {

std::string gramian_matrix_json(const Matrix& m) {
    std::ostringstream out;
    out << "[";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (i > 0) out << ",";
        out << "\n    [";
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j > 0) out << ", ";
            out << format_g17(m(i, j));
        }
        out << "]";
    }
    out << "\n  ]";
    return out.str();
}

Matrix gramian_matrix_parse(const nlohmann::json& node, const std::string& field) {
    if (!node.is_array() || node.empty() || !node[0].is_array()) {
        throw parse_error("gramian file: field \"" + field + "\" must be a matrix");
    }
    const std::size_t rows = node.size();
    const std::size_t cols = node[0].size();
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (node[i].size() != cols) {
            throw parse_error("gramian file: field \"" + field + "\" is not rectangular");
        }
        for (std::size_t j = 0; j < cols; ++j) {
            out(i, j) = node[i][j].get<double>();
        }
    }
    return out;
}

}  // namespace

void save_gramians(const GramianPair& pair, const std::string& path) {
    std::ostringstream out;
    out << "{\n";
    out << "  \"P\": " << gramian_matrix_json(pair.P) << ",\n";
    out << "  \"Q\": " << gramian_matrix_json(pair.Q) << ",\n";
    out << "  \"metadata\": {\n";
    out << "    \"epsilon\": " << format_g17(pair.epsilon) << ",\n";
    out << "    \"method_p\": \"" << pair.p_info.method << "\",\n";
    out << "    \"method_q\": \"" << pair.q_info.method << "\",\n";
    out << "    \"p_residual_mineig\": " << format_g17(pair.p_residual_mineig) << ",\n";
    out << "    \"q_residual_norm\": " << format_g17(pair.q_residual_norm) << ",\n";
    out << "    \"iterations_p\": " << pair.p_info.iterations << ",\n";
    out << "    \"iterations_q\": " << pair.q_info.iterations << "\n";
    out << "  }\n";
    out << "}\n";
    atomic_write_file(path, out.str());
}

GramianPair load_gramians(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw parse_error("cannot open gramian file: " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(buffer.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw parse_error(path + ": " + e.what());
    }

    GramianPair pair;
    if (!j.contains("P") || !j.contains("Q")) {
        throw parse_error(path + ": missing field \"P\" or \"Q\"");
    }
    pair.P = gramian_matrix_parse(j["P"], "P");
    pair.Q = gramian_matrix_parse(j["Q"], "Q");
    if (j.contains("metadata")) {
        const auto& meta = j["metadata"];
        pair.epsilon = meta.value("epsilon", 0.0);
        pair.p_info.method = meta.value("method_p", "");
        pair.q_info.method = meta.value("method_q", "");
        pair.p_residual_mineig = meta.value("p_residual_mineig", 0.0);
        pair.q_residual_norm = meta.value("q_residual_norm", 0.0);
        pair.p_info.iterations = meta.value("iterations_p", 0);
        pair.q_info.iterations = meta.value("iterations_q", 0);
    }
    return pair;
}

}  // namespace levybt
