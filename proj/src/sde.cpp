#include "levybt/sde.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "levybt/util.hpp"

namespace levybt {

namespace {

constexpr int kMcChunk = 64;  // paths per reduction chunk; fixed so the thread count cannot affect roundoff

double simpson_panel(const std::function<double(double)>& f, double a, double fa, double b,
                     double fb, double m, double fm, double whole, double tol, int depth) {
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
        return left + right + (left + right - whole) / 15.0;
    }
    return simpson_panel(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
           simpson_panel(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double rel_tol,
                        int initial_panels) {
    if (b <= a) {
        return 0.0;
    }
    // Coarse fixed split first so oscillatory integrands cannot alias the
    // initial Simpson estimate.
    double coarse = 0.0;
    const double h = (b - a) / initial_panels;
    for (int i = 0; i < initial_panels; ++i) {
        const double x0 = a + i * h;
        coarse += h / 6.0 * (f(x0) + 4.0 * f(x0 + 0.5 * h) + f(x0 + h));
    }
    const double tol = rel_tol * std::max(std::abs(coarse), 1e-300);
    double total = 0.0;
    for (int i = 0; i < initial_panels; ++i) {
        const double x0 = a + i * h;
        const double x1 = x0 + h;
        const double xm = x0 + 0.5 * h;
        const double f0 = f(x0), f1 = f(x1), fm = f(xm);
        const double whole = h / 6.0 * (f0 + 4.0 * fm + f1);
        total += simpson_panel(f, x0, f0, x1, f1, xm, fm, whole, tol / initial_panels, 48);
    }
    return total;
}

void validate_common(const ControlSignal& u) {
    if (u.m < 1) {
        throw std::invalid_argument("control signal: channel count must be positive");
    }
    if (!std::isfinite(u.amplitude) || !std::isfinite(u.rate) || !std::isfinite(u.frequency) ||
        !std::isfinite(u.phase)) {
        throw std::invalid_argument("control signal: parameters must be finite");
    }
}

}  // namespace

Vector ControlSignal::evaluate(double t) const {
    switch (kind) {
        case ControlKind::zero:
            return Vector::Zero(m);
        case ControlKind::constant:
            return Vector::Constant(m, amplitude);
        case ControlKind::sine:
            return Vector::Constant(m, amplitude * std::sin(2.0 * M_PI * frequency * t + phase));
        case ControlKind::decaying_exp:
            return Vector::Constant(m, amplitude * std::exp(-rate * t));
        case ControlKind::piecewise_constant: {
            auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), t);
            const auto idx = std::max<std::ptrdiff_t>(0, std::distance(breakpoints.begin(), it) - 1);
            return values.col(std::min<Eigen::Index>(idx, values.cols() - 1));
        }
    }
    throw std::logic_error("control signal: unknown kind");
}

double ControlSignal::l2_norm_on(double horizon) const {
    if (horizon < 0.0) {
        throw std::invalid_argument("l2_norm_on: horizon must be nonnegative");
    }
    if (horizon == 0.0 || kind == ControlKind::zero) {
        return 0.0;
    }
    if (kind == ControlKind::constant) {
        return std::abs(amplitude) * std::sqrt(static_cast<double>(m) * horizon);
    }
    if (kind == ControlKind::piecewise_constant) {
        double sum = 0.0;
        for (std::size_t s = 0; s < breakpoints.size(); ++s) {
            const double start = std::min(breakpoints[s], horizon);
            const double end = (s + 1 < breakpoints.size()) ? std::min(breakpoints[s + 1], horizon)
                                                            : horizon;
            if (end > start) {
                sum += values.col(static_cast<Eigen::Index>(s)).squaredNorm() * (end - start);
            }
        }
        return std::sqrt(sum);
    }
    const int panels = kind == ControlKind::sine
                           ? std::max(32, static_cast<int>(std::ceil(8.0 * frequency * horizon)))
                           : 32;
    const auto integrand = [this](double t) { return evaluate(t).squaredNorm(); };
    return std::sqrt(adaptive_simpson(integrand, 0.0, horizon, 1e-9, panels));
}

ControlSignal ControlSignal::normalized_to(double target_norm, double horizon) const {
    if (target_norm < 0.0) {
        throw std::invalid_argument("normalized_to: target norm must be nonnegative");
    }
    const double current = l2_norm_on(horizon);
    if (current <= 0.0) {
        throw std::invalid_argument("normalized_to: signal has zero norm on the horizon");
    }
    ControlSignal out = *this;
    const double scale = target_norm / current;
    out.amplitude *= scale;
    if (kind == ControlKind::piecewise_constant) {
        out.values *= scale;
    }
    return out;
}

ControlSignal zero_control(int m) {
    ControlSignal u;
    u.kind = ControlKind::zero;
    u.m = m;
    validate_common(u);
    return u;
}

ControlSignal constant_control(int m, double value) {
    ControlSignal u;
    u.kind = ControlKind::constant;
    u.m = m;
    u.amplitude = value;
    validate_common(u);
    return u;
}

ControlSignal sine_control(int m, double amplitude, double frequency, double phase) {
    ControlSignal u;
    u.kind = ControlKind::sine;
    u.m = m;
    u.amplitude = amplitude;
    u.frequency = frequency;
    u.phase = phase;
    validate_common(u);
    if (frequency < 0.0) {
        throw std::invalid_argument("sine_control: frequency must be nonnegative");
    }
    return u;
}

ControlSignal decaying_exp_control(int m, double amplitude, double rate) {
    ControlSignal u;
    u.kind = ControlKind::decaying_exp;
    u.m = m;
    u.amplitude = amplitude;
    u.rate = rate;
    validate_common(u);
    if (rate < 0.0) {
        throw std::invalid_argument("decaying_exp_control: rate must be nonnegative");
    }
    return u;
}

ControlSignal piecewise_constant_control(int m, std::vector<double> breakpoints, Matrix values) {
    ControlSignal u;
    u.kind = ControlKind::piecewise_constant;
    u.m = m;
    u.breakpoints = std::move(breakpoints);
    u.values = std::move(values);
    validate_common(u);
    if (u.breakpoints.empty() || u.breakpoints.front() != 0.0) {
        throw std::invalid_argument("piecewise_constant_control: breakpoints must start at 0");
    }
    if (!std::is_sorted(u.breakpoints.begin(), u.breakpoints.end())) {
        throw std::invalid_argument("piecewise_constant_control: breakpoints must be ascending");
    }
    if (u.values.rows() != m || u.values.cols() != static_cast<Eigen::Index>(u.breakpoints.size())) {
        throw std::invalid_argument("piecewise_constant_control: values must be m × #segments");
    }
    return u;
}

TimeGrid make_grid(double horizon, double dt) {
    if (dt <= 0.0 || horizon <= 0.0) {
        throw std::invalid_argument("make_grid: horizon and dt must be positive");
    }
    const double ratio = horizon / dt;
    const int steps = static_cast<int>(std::lround(ratio));
    if (steps < 1 || std::abs(steps * dt - horizon) > 1e-9 * horizon) {
        throw std::invalid_argument("make_grid: horizon must be an integer multiple of dt");
    }
    TimeGrid grid;
    grid.dt = dt;
    grid.steps = steps;
    return grid;
}

Matrix levy_path_increments(const LevyConfig& cfg, const TimeGrid& grid, std::uint64_t path_index) {
    if (cfg.theta < 0.0 || cfg.theta > 1.0) {
        throw std::invalid_argument("levy increments: theta must lie in [0, 1]");
    }
    if (cfg.K.rows() != cfg.K.cols() || cfg.K.rows() < 1) {
        throw std::invalid_argument("levy increments: K must be square");
    }
    const int v = static_cast<int>(cfg.K.rows());
    const Matrix gauss_factor = psd_sqrt(cfg.theta * cfg.K, 1e-10);
    const bool with_jumps = cfg.theta < 1.0;
    Matrix jump_factor;
    if (with_jumps) {
        if (cfg.jump_rate <= 0.0) {
            throw std::invalid_argument("levy increments: jump_rate must be positive when theta < 1");
        }
        jump_factor = psd_sqrt(((1.0 - cfg.theta) / cfg.jump_rate) * cfg.K, 1e-10);
    }

    std::mt19937_64 rng(derive_stream_seed(cfg.seed, path_index));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::poisson_distribution<int> poisson(cfg.jump_rate * grid.dt);

    const double sqrt_dt = std::sqrt(grid.dt);
    Matrix increments(grid.steps, v);
    Vector z(v);
    Vector step_value(v);
    for (int j = 0; j < grid.steps; ++j) {
        for (int i = 0; i < v; ++i) {
            z(i) = normal(rng);
        }
        step_value.noalias() = sqrt_dt * (gauss_factor * z);
        if (with_jumps) {
            const int jumps = poisson(rng);
            for (int jump = 0; jump < jumps; ++jump) {
                for (int i = 0; i < v; ++i) {
                    z(i) = normal(rng);
                }
                step_value.noalias() += jump_factor * z;
            }
        }
        increments.row(j) = step_value.transpose();
    }
    return increments;
}

IncrementArray sample_levy_increments(const LevyConfig& cfg, const TimeGrid& grid, int n_paths) {
    if (n_paths < 1) {
        throw std::invalid_argument("sample_levy_increments: need at least one path");
    }
    IncrementArray out;
    out.n_paths = n_paths;
    out.steps = grid.steps;
    out.v = static_cast<int>(cfg.K.rows());
    out.data.resize(static_cast<std::size_t>(n_paths) * grid.steps * out.v);
    for (int path = 0; path < n_paths; ++path) {
        const Matrix inc = levy_path_increments(cfg, grid, static_cast<std::uint64_t>(path));
        for (int j = 0; j < grid.steps; ++j) {
            for (int i = 0; i < out.v; ++i) {
                out.data[(static_cast<std::size_t>(path) * grid.steps + j) * out.v + i] = inc(j, i);
            }
        }
    }
    return out;
}

namespace {

Matrix control_table(const ControlSignal& u, const TimeGrid& grid) {
    Matrix table(grid.steps, u.m);
    for (int j = 0; j < grid.steps; ++j) {
        table.row(j) = u.evaluate(grid.time(j)).transpose();
    }
    return table;
}

/// Euler–Maruyama core. Calls visit(j, x_j) for j = 0..steps with
/// left-point coefficient evaluation between visits.
template <typename Visitor>
void run_euler(const StochasticBilinearSystem& sys, const Matrix& controls, const Matrix& increments,
               const Vector& x0, double dt, Visitor&& visit) {
    const int steps = static_cast<int>(increments.rows());
    if (increments.cols() != sys.v) {
        throw std::invalid_argument("simulate: increment array has wrong noise dimension");
    }
    if (controls.cols() != sys.m || controls.rows() != steps) {
        throw std::invalid_argument("simulate: control table has wrong shape");
    }
    if (x0.size() != sys.n) {
        throw std::invalid_argument("simulate: x0 has wrong dimension");
    }
    const double blowup = 1e12 * std::max(1.0, x0.norm());

    Vector x = x0;
    Vector update(sys.n);
    visit(0, x);
    for (int j = 0; j < steps; ++j) {
        update.noalias() = sys.A * x;
        update.noalias() += sys.B * controls.row(j).transpose();
        for (int k = 0; k < sys.m; ++k) {
            const double uk = controls(j, k);
            if (uk != 0.0) {
                update.noalias() += uk * (sys.N[k] * x);
            }
        }
        update *= dt;
        for (int i = 0; i < sys.v; ++i) {
            const double dm = increments(j, i);
            if (dm != 0.0) {
                update.noalias() += dm * (sys.H[i] * x);
            }
        }
        x += update;
        if (!x.allFinite() || x.norm() > blowup) {
            throw std::runtime_error("simulation blow-up at step " + std::to_string(j + 1) + " (t = " +
                                     format_g17((j + 1) * dt) + ")");
        }
        visit(j + 1, x);
    }
}

double trapezoid_weight(int j, int steps) {
    return (j == 0 || j == steps) ? 0.5 : 1.0;
}

struct MeanStderr {
    double mean = 0.0;
    double stderr_of_mean = 0.0;
};

/// Sequential reduction in path order; the values vector is indexed by path.
MeanStderr reduce_mean(const std::vector<double>& values) {
    MeanStderr out;
    const std::size_t count = values.size();
    if (count == 0) {
        return out;
    }
    double sum = 0.0;
    for (double value : values) {
        sum += value;
    }
    out.mean = sum / static_cast<double>(count);
    if (count > 1) {
        double ss = 0.0;
        for (double value : values) {
            const double d = value - out.mean;
            ss += d * d;
        }
        const double variance = ss / static_cast<double>(count - 1);
        out.stderr_of_mean = std::sqrt(variance / static_cast<double>(count));
    }
    return out;
}

}  // namespace

Trajectory simulate_path(const StochasticBilinearSystem& sys, const ControlSignal& u,
                         const Matrix& increments, const Vector& x0, double dt) {
    if (dt <= 0.0) {
        throw std::invalid_argument("simulate_path: dt must be positive");
    }
    if (u.m != sys.m) {
        throw std::invalid_argument("simulate_path: control channel count does not match the system");
    }
    TimeGrid grid;
    grid.dt = dt;
    grid.steps = static_cast<int>(increments.rows());
    const Matrix controls = control_table(u, grid);

    Trajectory traj;
    traj.states.resize(grid.steps + 1, sys.n);
    run_euler(sys, controls, increments, x0, dt,
              [&](int j, const Vector& x) { traj.states.row(j) = x.transpose(); });
    traj.outputs = traj.states * sys.C.transpose();
    return traj;
}

TrajectoryEnsemble simulate_ensemble(const StochasticBilinearSystem& sys, const ControlSignal& u,
                                     const LevyConfig& levy, const TimeGrid& grid, const Vector& x0,
                                     int n_paths, int n_threads) {
    if (n_paths < 1) {
        throw std::invalid_argument("simulate_ensemble: need at least one path");
    }
    TrajectoryEnsemble ens;
    ens.grid = grid;
    ens.n_paths = n_paths;
    ens.n = sys.n;
    ens.p = sys.p;
    ens.base_seed = levy.seed;
    ens.path_seeds.resize(n_paths);
    const std::size_t nodes = static_cast<std::size_t>(grid.steps) + 1;
    ens.states.resize(static_cast<std::size_t>(n_paths) * nodes * sys.n);
    ens.outputs.resize(static_cast<std::size_t>(n_paths) * nodes * sys.p);

    const Matrix controls = control_table(u, grid);
    parallel_for(static_cast<std::size_t>(n_paths), n_threads, [&](std::size_t path) {
        ens.path_seeds[path] = derive_stream_seed(levy.seed, path);
        const Matrix inc = levy_path_increments(levy, grid, path);
        double* states_out = ens.states.data() + path * nodes * sys.n;
        double* outputs_out = ens.outputs.data() + path * nodes * sys.p;
        run_euler(sys, controls, inc, x0, grid.dt, [&](int j, const Vector& x) {
            for (int c = 0; c < sys.n; ++c) {
                states_out[static_cast<std::size_t>(j) * sys.n + c] = x(c);
            }
            const Vector y = sys.C * x;
            for (int c = 0; c < sys.p; ++c) {
                outputs_out[static_cast<std::size_t>(j) * sys.p + c] = y(c);
            }
        });
    });
    return ens;
}

void dump_ensemble(const TrajectoryEnsemble& ensemble, const std::string& prefix) {
    const auto write_bin = [](const std::string& path, const std::vector<double>& data) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open for writing: " + path);
        }
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!out) {
            throw std::runtime_error("write failed: " + path);
        }
    };
    write_bin(prefix + "_states.bin", ensemble.states);
    write_bin(prefix + "_outputs.bin", ensemble.outputs);

    const int nodes = ensemble.grid.steps + 1;
    std::ostringstream header;
    header << "{\n";
    header << "  \"dtype\": \"<f8\",\n";
    header << "  \"seed\": " << ensemble.base_seed << ",\n";
    header << "  \"dt\": " << format_g17(ensemble.grid.dt) << ",\n";
    header << "  \"horizon\": " << format_g17(ensemble.grid.horizon()) << ",\n";
    header << "  \"states\": {\"file\": \"" << prefix << "_states.bin\", \"shape\": ["
           << ensemble.n_paths << ", " << nodes << ", " << ensemble.n << "]},\n";
    header << "  \"outputs\": {\"file\": \"" << prefix << "_outputs.bin\", \"shape\": ["
           << ensemble.n_paths << ", " << nodes << ", " << ensemble.p << "]}\n";
    header << "}\n";
    atomic_write_file(prefix + ".json", header.str());
}

std::vector<BoundCheckReport> monte_carlo_output_error_sweep(
    const StochasticBilinearSystem& full, const std::vector<ReducedModel>& roms,
    const ControlSignal& u, const LevyConfig& levy, double horizon, double dt, int n_paths,
    int n_threads) {
    if (roms.empty()) {
        return {};
    }
    if (u.m != full.m) {
        throw std::invalid_argument("output error: control channel count does not match the system");
    }
    for (const auto& rom : roms) {
        if (rom.sys_r.v != full.v || (rom.sys_r.K - full.K).norm() > 1e-12 * std::max(1.0, full.K.norm())) {
            throw std::invalid_argument("output error: full and reduced systems must share v and K");
        }
    }
    if ((levy.K - full.K).norm() > 1e-12 * std::max(1.0, full.K.norm())) {
        throw std::invalid_argument("output error: Levy covariance must match the system's K");
    }
    const TimeGrid grid = make_grid(horizon, dt);
    const Matrix controls = control_table(u, grid);
    const double u_norm = u.l2_norm_on(horizon);
    const Vector x0_full = Vector::Zero(full.n);

    std::vector<std::vector<double>> err2(roms.size());
    for (auto& column : err2) {
        column.resize(n_paths);
    }

    parallel_for(static_cast<std::size_t>(n_paths), n_threads, [&](std::size_t path) {
        const Matrix inc = levy_path_increments(levy, grid, path);
        Matrix y_full(grid.steps + 1, full.p);
        run_euler(full, controls, inc, x0_full, grid.dt, [&](int j, const Vector& x) {
            y_full.row(j) = (full.C * x).transpose();
        });
        for (std::size_t k = 0; k < roms.size(); ++k) {
            const auto& rom = roms[k].sys_r;
            const Vector x0_rom = Vector::Zero(rom.n);
            double acc = 0.0;
            run_euler(rom, controls, inc, x0_rom, grid.dt, [&](int j, const Vector& x) {
                const Vector diff = y_full.row(j).transpose() - rom.C * x;
                acc += trapezoid_weight(j, grid.steps) * diff.squaredNorm();
            });
            err2[k][path] = acc * grid.dt;
        }
    });

    std::vector<BoundCheckReport> reports;
    reports.reserve(roms.size());
    for (std::size_t k = 0; k < roms.size(); ++k) {
        const MeanStderr stats = reduce_mean(err2[k]);
        BoundCheckReport report;
        report.paths = n_paths;
        report.dt = dt;
        report.theoretical_bound = error_bound(roms[k], u_norm);
        report.mc_error_estimate = std::sqrt(std::max(stats.mean, 0.0));
        // stderr of sqrt(mean) by the delta method
        report.mc_stderr = (stats.mean > 0.0)
                               ? stats.stderr_of_mean / (2.0 * report.mc_error_estimate)
                               : 0.0;
        report.satisfied =
            report.mc_error_estimate + 3.0 * report.mc_stderr <= report.theoretical_bound;
        reports.push_back(report);
    }
    return reports;
}

BoundCheckReport monte_carlo_output_error(const StochasticBilinearSystem& full,
                                          const ReducedModel& rom, const ControlSignal& u,
                                          const LevyConfig& levy, double horizon, double dt,
                                          int n_paths, int n_threads) {
    return monte_carlo_output_error_sweep(full, {rom}, u, levy, horizon, dt, n_paths, n_threads)
        .front();
}

ReachabilityEnergyReport check_reachability_energy(const StochasticBilinearSystem& sys,
                                                   const Matrix& p, const ControlSignal& u,
                                                   const LevyConfig& levy, double horizon, double dt,
                                                   int n_paths, int n_threads) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(p));
    if (es.eigenvalues().minCoeff() <= 0.0) {
        throw std::invalid_argument("check_reachability_energy: P must be positive definite");
    }
    const TimeGrid grid = make_grid(horizon, dt);
    const Matrix controls = control_table(u, grid);
    const double u_norm = u.l2_norm_on(horizon);
    const double growth = std::exp(0.5 * u_norm * u_norm);
    const Vector x0 = Vector::Zero(sys.n);
    const Matrix eigvecs = es.eigenvectors();
    const int nodes = grid.steps + 1;

    // Fixed-size chunks keep the accumulation order independent of the
    // thread count: each chunk sums its paths in order, then chunks are
    // combined sequentially.
    const int n_chunks = (n_paths + kMcChunk - 1) / kMcChunk;
    struct Sums {
        Matrix sum;
        Matrix sumsq;
    };
    std::vector<Sums> partials(n_chunks);
    parallel_for(static_cast<std::size_t>(n_chunks), n_threads, [&](std::size_t chunk) {
        Sums local;
        local.sum = Matrix::Zero(nodes, sys.n);
        local.sumsq = Matrix::Zero(nodes, sys.n);
        const int begin = static_cast<int>(chunk) * kMcChunk;
        const int end = std::min(begin + kMcChunk, n_paths);
        for (int path = begin; path < end; ++path) {
            const Matrix inc = levy_path_increments(levy, grid, static_cast<std::uint64_t>(path));
            run_euler(sys, controls, inc, x0, grid.dt, [&](int j, const Vector& x) {
                const Vector proj = eigvecs.transpose() * x;
                for (int k = 0; k < sys.n; ++k) {
                    const double sq = proj(k) * proj(k);
                    local.sum(j, k) += sq;
                    local.sumsq(j, k) += sq * sq;
                }
            });
        }
        partials[chunk] = std::move(local);
    });

    Matrix sum = Matrix::Zero(nodes, sys.n);
    Matrix sumsq = Matrix::Zero(nodes, sys.n);
    for (const auto& partial : partials) {
        sum += partial.sum;
        sumsq += partial.sumsq;
    }

    ReachabilityEnergyReport report;
    const double count = static_cast<double>(n_paths);
    for (int rank = 0; rank < sys.n; ++rank) {
        const int eig_index = sys.n - 1 - rank;  // descending eigenvalues
        double best_mean = 0.0;
        int best_node = 0;
        for (int j = 0; j < nodes; ++j) {
            const double mean = sum(j, eig_index) / count;
            if (mean > best_mean) {
                best_mean = mean;
                best_node = j;
            }
        }
        EnergyRow row;
        row.k = rank + 1;
        row.lhs = std::sqrt(std::max(best_mean, 0.0));
        if (n_paths > 1 && best_mean > 0.0) {
            const double ss = sumsq(best_node, eig_index) - count * best_mean * best_mean;
            const double variance = std::max(ss, 0.0) / (count - 1.0);
            const double se_mean = std::sqrt(variance / count);
            row.lhs_stderr = se_mean / (2.0 * row.lhs);
        }
        row.bound = std::sqrt(es.eigenvalues()(eig_index)) * u_norm * growth;
        row.margin = row.bound - row.lhs;
        row.satisfied = row.lhs <= row.bound + 3.0 * row.lhs_stderr;
        report.all_satisfied = report.all_satisfied && row.satisfied;
        report.rows.push_back(row);
    }
    return report;
}

ObservabilityEnergyReport check_observability_energy(const StochasticBilinearSystem& sys,
                                                     const Matrix& q, const Vector& x0,
                                                     const ControlSignal& u, const LevyConfig& levy,
                                                     double horizon, double dt, int n_paths,
                                                     int n_threads) {
    if (q.rows() != sys.n || q.cols() != sys.n) {
        throw std::invalid_argument("check_observability_energy: Q must be n×n");
    }
    // Observation problem: the control enters only through the bilinear
    // coupling, the B-path is treated as known and removed.
    StochasticBilinearSystem no_input = sys;
    no_input.B.setZero();

    const TimeGrid grid = make_grid(horizon, dt);
    const Matrix controls = control_table(u, grid);
    const double u_norm = u.l2_norm_on(horizon);

    std::vector<double> energies(n_paths);
    parallel_for(static_cast<std::size_t>(n_paths), n_threads, [&](std::size_t path) {
        const Matrix inc = levy_path_increments(levy, grid, path);
        double acc = 0.0;
        run_euler(no_input, controls, inc, x0, grid.dt, [&](int j, const Vector& x) {
            acc += trapezoid_weight(j, grid.steps) * (no_input.C * x).squaredNorm();
        });
        energies[path] = acc * grid.dt;
    });

    const MeanStderr stats = reduce_mean(energies);
    ObservabilityEnergyReport report;
    report.mc_energy = stats.mean;
    report.mc_stderr = stats.stderr_of_mean;
    report.bound = x0.dot(q * x0) * std::exp(u_norm * u_norm);
    report.margin = report.bound - report.mc_energy;
    report.satisfied = report.mc_energy <= report.bound + 3.0 * report.mc_stderr;
    return report;
}

SecondMomentReport verify_second_moment(const Vector& a, const std::vector<Vector>& b,
                                        const Matrix& k, double horizon,
                                        const SecondMomentOptions& opts) {
    const int d = static_cast<int>(a.size());
    const int v = static_cast<int>(b.size());
    if (v < 1 || k.rows() != v || k.cols() != v) {
        throw std::invalid_argument("verify_second_moment: K must be v×v for v vectors b_i");
    }
    Matrix b_mat(d, v);
    for (int i = 0; i < v; ++i) {
        if (b[i].size() != d) {
            throw std::invalid_argument("verify_second_moment: b_i dimension mismatch");
        }
        b_mat.col(i) = b[i];
    }

    LevyConfig levy;
    levy.K = k;
    levy.theta = opts.theta;
    levy.jump_rate = opts.jump_rate;
    levy.seed = opts.seed;
    TimeGrid grid;
    grid.steps = opts.steps;
    grid.dt = horizon / opts.steps;

    std::vector<double> values(opts.n_paths);
    for (int path = 0; path < opts.n_paths; ++path) {
        const Matrix inc = levy_path_increments(levy, grid, static_cast<std::uint64_t>(path));
        Vector x = Vector::Zero(d);
        for (int j = 0; j < grid.steps; ++j) {
            x += a * grid.dt;
            x.noalias() += b_mat * inc.row(j).transpose();
        }
        values[path] = x.squaredNorm();
    }

    const MeanStderr stats = reduce_mean(values);
    SecondMomentReport report;
    report.mc_value = stats.mean;
    report.mc_stderr = stats.stderr_of_mean;
    double noise_term = 0.0;
    for (int i = 0; i < v; ++i) {
        for (int j = 0; j < v; ++j) {
            noise_term += b[i].dot(b[j]) * k(i, j);
        }
    }
    report.analytic = a.squaredNorm() * horizon * horizon + noise_term * horizon;
    return report;
}

void write_bound_check_csv(const std::vector<BoundCheckRow>& rows, const std::string& path) {
    std::ostringstream out;
    out << "r,mc_error,stderr,bound,satisfied,bound_ratio,informative\n";
    for (const auto& row : rows) {
        out << row.r << "," << format_g17(row.report.mc_error_estimate) << ","
            << format_g17(row.report.mc_stderr) << "," << format_g17(row.report.theoretical_bound)
            << "," << (row.report.satisfied ? 1 : 0) << "," << format_g17(row.bound_ratio) << ","
            << (row.informative ? 1 : 0) << "\n";
    }
    atomic_write_file(path, out.str());
}

void write_energy_reach_csv(const ReachabilityEnergyReport& report, const std::string& path) {
    std::ostringstream out;
    out << "k,lhs,bound,margin,stderr,satisfied\n";
    for (const auto& row : report.rows) {
        out << row.k << "," << format_g17(row.lhs) << "," << format_g17(row.bound) << ","
            << format_g17(row.margin) << "," << format_g17(row.lhs_stderr) << ","
            << (row.satisfied ? 1 : 0) << "\n";
    }
    atomic_write_file(path, out.str());
}

void write_energy_observe_csv(const ObservabilityEnergyReport& report, const std::string& path) {
    std::ostringstream out;
    out << "lhs,bound,margin,stderr,satisfied\n";
    out << format_g17(report.mc_energy) << "," << format_g17(report.bound) << ","
        << format_g17(report.margin) << "," << format_g17(report.mc_stderr) << ","
        << (report.satisfied ? 1 : 0) << "\n";
    atomic_write_file(path, out.str());
}

}  // namespace levybt
