#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "levybt/linalg.hpp"

namespace levybt {

/// State equation
///   dx = [A x + B u + Σ_k N_k x u_k] dt + Σ_i H_i x(t-) dM_i,   y = C x,
/// where M is a mean-zero square-integrable Lévy process with
/// E[M(t) M^T(t)] = K t.
struct StochasticBilinearSystem {
    int n = 0;  // state dimension
    int m = 0;  // input dimension
    int p = 0;  // output dimension
    int v = 0;  // noise dimension
    Matrix A;
    Matrix B;
    Matrix C;
    std::vector<Matrix> N;  // one n×n matrix per input channel
    std::vector<Matrix> H;  // one n×n matrix per noise channel
    Matrix K;               // v×v noise covariance

    bool equals(const StochasticBilinearSystem& other) const;
};

struct Violation {
    std::string name;
    double magnitude = 0.0;
};

struct ValidationReport {
    bool passed = true;
    std::vector<Violation> violations;

    void add(const std::string& name, double magnitude) {
        passed = false;
        violations.push_back({name, magnitude});
    }
};

struct StabilityReport {
    double spectral_abscissa = 0.0;
    bool stable = false;
    double margin = 0.0;  // distance of the spectrum to the imaginary axis
};

/// Thrown on malformed system files (bad JSON, missing fields, ragged or
/// non-square matrix data).
class parse_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Reports dimension consistency, K symmetry and positive semidefiniteness
/// (min eig ≥ -1e-12·max(1,‖K‖)), and finiteness. Never throws; every
/// failure lands in the violation list.
ValidationReport validate_system(const StochasticBilinearSystem& sys);

/// Second-moment operator A⊗I + I⊗A + Σ_k N_k⊗N_k + Σ_ij H_i⊗H_j k_ij.
/// Mean-square asymptotic stability means its spectrum lies in the open
/// left half-plane.
Matrix lifted_operator(const StochasticBilinearSystem& sys);

/// Dense eigensolve of the n²×n² lifted operator (O(n⁶); guarded by
/// dimension_cap). Throws std::invalid_argument past the cap.
StabilityReport check_mean_square_stability(const StochasticBilinearSystem& sys,
                                            int dimension_cap = 200);

/// Semi-discretized 1-D Dirichlet heat equation benchmark:
/// A = (n+1)²·tridiag(1,-2,1); B holds min(4,n) spaced point actuators with
/// the 1/h = (n+1) weight of discretized point sources; C = diag(1..n)/n²
/// reads every node with gain growing along the rod (p = n);
/// N_1 = bilinear_scale·I on the first channel, H_1 = noise_scale·I,
/// K = [1]. Rejects parameterizations whose lifted operator is unstable,
/// reporting the offending abscissa.
StochasticBilinearSystem build_heat_example(int n, double noise_scale, double bilinear_scale);

/// JSON file format: integer fields n,m,p,v; matrices as row-major nested
/// arrays under "A","B","C","N" (array of matrices), "H" (array of
/// matrices), "K"; doubles written with 17 significant digits so that
/// load(save(sys)) reproduces the matrices bit-exactly.
void save_system(const StochasticBilinearSystem& sys, const std::string& path);
StochasticBilinearSystem load_system(const std::string& path);

std::string system_to_json(const StochasticBilinearSystem& sys);
StochasticBilinearSystem system_from_json(const std::string& text, const std::string& context);

}  // namespace levybt
