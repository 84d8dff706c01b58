#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "levybt/balancing.hpp"

namespace levybt {

enum class ControlKind { zero, constant, sine, decaying_exp, piecewise_constant };

/// Deterministic square-integrable control u(t) ∈ R^m. All channels carry
/// the same scalar signal except for piecewise_constant, which holds one
/// value per channel per segment.
struct ControlSignal {
    ControlKind kind = ControlKind::zero;
    int m = 1;
    double amplitude = 1.0;
    double rate = 1.0;       // decaying_exp: u = amplitude·e^{-rate·t}
    double frequency = 1.0;  // sine: u = amplitude·sin(2π·frequency·t + phase)
    double phase = 0.0;
    std::vector<double> breakpoints;  // piecewise segment start times, ascending, first = 0
    Matrix values;                    // piecewise values, m × #segments

    Vector evaluate(double t) const;

    /// ‖u‖_{L²_T}; adaptive Simpson quadrature to 1e-9 relative (exact
    /// segment sums for piecewise_constant).
    double l2_norm_on(double horizon) const;

    /// Scaled copy with l2_norm_on(horizon) == target_norm.
    ControlSignal normalized_to(double target_norm, double horizon) const;
};

ControlSignal zero_control(int m);
ControlSignal constant_control(int m, double value);
ControlSignal sine_control(int m, double amplitude, double frequency, double phase = 0.0);
ControlSignal decaying_exp_control(int m, double amplitude, double rate);
ControlSignal piecewise_constant_control(int m, std::vector<double> breakpoints, Matrix values);

struct TimeGrid {
    double dt = 1e-3;
    int steps = 1000;  // increments; the grid has steps+1 nodes
    double horizon() const { return dt * steps; }
    double time(int j) const { return dt * j; }
};

/// Uniform grid covering [0, horizon]. Throws unless horizon is an integer
/// multiple of dt (to 1e-9 relative).
TimeGrid make_grid(double horizon, double dt);

/// Mean-zero Lévy driver M(t) = Λ_c W(t) + compound Poisson with
/// Λ_c Λ_c^T = θK, jump intensity jump_rate and N(0, (1-θ)K/jump_rate)
/// jumps, so that E[M(t) M^T(t)] = K·t for every θ ∈ [0,1].
struct LevyConfig {
    Matrix K;
    double theta = 1.0;      // Gaussian fraction of the covariance
    double jump_rate = 1.0;  // Poisson intensity of the jump part
    std::uint64_t seed = 0;
};

/// Increments of M over one path (steps × v). Depends only on
/// (cfg.seed, path_index); scheduling cannot change it.
Matrix levy_path_increments(const LevyConfig& cfg, const TimeGrid& grid, std::uint64_t path_index);

struct IncrementArray {
    int n_paths = 0;
    int steps = 0;
    int v = 0;
    std::vector<double> data;  // path-major, then step, then component
    double at(int path, int step, int i) const {
        return data[(static_cast<std::size_t>(path) * steps + step) * v + i];
    }
};

IncrementArray sample_levy_increments(const LevyConfig& cfg, const TimeGrid& grid, int n_paths);

struct Trajectory {
    Matrix states;   // (steps+1) × n, row j is x(t_j)^T
    Matrix outputs;  // (steps+1) × p
};

/// Euler–Maruyama with left-limit coefficient evaluation:
/// x_{j+1} = x_j + [A x_j + B u(t_j) + Σ N_k x_j u_k(t_j)]Δt + Σ H_i x_j ΔM_i.
/// Deterministic given the increments. Throws on state blow-up, naming the
/// offending step.
Trajectory simulate_path(const StochasticBilinearSystem& sys, const ControlSignal& u,
                         const Matrix& increments, const Vector& x0, double dt);

struct TrajectoryEnsemble {
    TimeGrid grid;
    int n_paths = 0;
    int n = 0;
    int p = 0;
    std::vector<double> states;   // path-major, then node, then component
    std::vector<double> outputs;
    std::uint64_t base_seed = 0;
    std::vector<std::uint64_t> path_seeds;
};

TrajectoryEnsemble simulate_ensemble(const StochasticBilinearSystem& sys, const ControlSignal& u,
                                     const LevyConfig& levy, const TimeGrid& grid, const Vector& x0,
                                     int n_paths, int n_threads = 1);

/// Flat binary dump (native little-endian float64) with a JSON sidecar
/// describing shapes, dtype and seed. Writes <prefix>_states.bin,
/// <prefix>_outputs.bin and <prefix>.json.
void dump_ensemble(const TrajectoryEnsemble& ensemble, const std::string& prefix);

struct BoundCheckReport {
    double mc_error_estimate = 0.0;  // (Ê‖y - y_r‖²_{L²_T})^{1/2}
    double mc_stderr = 0.0;          // delta-method stderr of the estimate
    double theoretical_bound = 0.0;
    bool satisfied = false;  // estimate + 3·stderr ≤ bound
    int paths = 0;
    double dt = 0.0;
};

/// Monte Carlo estimate of the output error between the full model and a
/// reduced model, both driven by identical noise paths and zero initial
/// states, compared against the distinct-HSV bound.
BoundCheckReport monte_carlo_output_error(const StochasticBilinearSystem& full,
                                          const ReducedModel& rom, const ControlSignal& u,
                                          const LevyConfig& levy, double horizon, double dt,
                                          int n_paths, int n_threads = 1);

/// Sweep variant sharing one full-model simulation per path across all
/// reduced models.
std::vector<BoundCheckReport> monte_carlo_output_error_sweep(
    const StochasticBilinearSystem& full, const std::vector<ReducedModel>& roms,
    const ControlSignal& u, const LevyConfig& levy, double horizon, double dt, int n_paths,
    int n_threads = 1);

struct EnergyRow {
    int k = 0;               // eigendirection index, sorted by decreasing eigenvalue
    double lhs = 0.0;        // sup over the grid of sqrt(Ê⟨x, p_k⟩²)
    double lhs_stderr = 0.0; // stderr of the lhs at the maximizing node
    double bound = 0.0;      // λ_k^{1/2}·‖u‖·exp(0.5‖u‖²)
    double margin = 0.0;     // bound - lhs
    bool satisfied = false;  // lhs ≤ bound + 3·stderr
};

struct ReachabilityEnergyReport {
    std::vector<EnergyRow> rows;
    bool all_satisfied = true;
};

ReachabilityEnergyReport check_reachability_energy(const StochasticBilinearSystem& sys,
                                                   const Matrix& p, const ControlSignal& u,
                                                   const LevyConfig& levy, double horizon, double dt,
                                                   int n_paths, int n_threads = 1);

struct ObservabilityEnergyReport {
    double mc_energy = 0.0;  // Ê ∫‖y‖² dt with B forced to zero
    double mc_stderr = 0.0;
    double bound = 0.0;      // x0^T Q x0 · exp(‖u‖²)
    double margin = 0.0;
    bool satisfied = false;
};

/// Observation-energy bound check. The simulation runs with B = 0 (the
/// observation problem treats the known control contribution as removed).
ObservabilityEnergyReport check_observability_energy(const StochasticBilinearSystem& sys,
                                                     const Matrix& q, const Vector& x0,
                                                     const ControlSignal& u, const LevyConfig& levy,
                                                     double horizon, double dt, int n_paths,
                                                     int n_threads = 1);

struct SecondMomentOptions {
    double theta = 1.0;
    double jump_rate = 1.0;
    std::uint64_t seed = 0;
    int n_paths = 4000;
    int steps = 100;
};

struct SecondMomentReport {
    double mc_value = 0.0;   // Ê‖x(T)‖²
    double mc_stderr = 0.0;
    double analytic = 0.0;   // ‖a‖²T² + T·Σ b_i^T b_j k_ij
};

/// Simulator oracle for dx = a dt + Σ b_i dM_i with constants a, b_i and
/// x(0) = 0.
SecondMomentReport verify_second_moment(const Vector& a, const std::vector<Vector>& b,
                                        const Matrix& k, double horizon,
                                        const SecondMomentOptions& opts = {});

struct BoundCheckRow {
    int r = 0;
    BoundCheckReport report;
    double bound_ratio = 0.0;  // bound / mc_error (inf-safe)
    bool informative = true;   // bound_ratio below the configured threshold
};

void write_bound_check_csv(const std::vector<BoundCheckRow>& rows, const std::string& path);
void write_energy_reach_csv(const ReachabilityEnergyReport& report, const std::string& path);
void write_energy_observe_csv(const ObservabilityEnergyReport& report, const std::string& path);

}  // namespace levybt
