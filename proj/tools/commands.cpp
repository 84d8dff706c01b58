#include "commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "levybt/balancing.hpp"
#include "levybt/gramians.hpp"
#include "levybt/sde.hpp"
#include "levybt/system.hpp"
#include "levybt/util.hpp"

namespace levybt::cli {

namespace {

struct RunConfig {
    std::string config_path;
    std::string system_path;
    int heat_n = 0;
    double noise_scale = 0.5;
    double bilinear_scale = 0.5;

    int r = -1;
    std::string r_sweep;

    int paths = 2000;
    double dt = 1e-3;
    double horizon = 1.0;
    std::uint64_t seed = 0;
    double theta = 1.0;
    double jump_rate = 10.0;

    std::string out_dir = "out";
    std::string gramians_path;  // reuse a previously written gramian file

    double epsilon = -1.0;  // <= 0 means the solver default 1e-8·‖A‖_F
    std::string method = "newton";
    int threads = 1;
    int stability_cap = 200;

    std::string control = "decaying_exp";
    double control_amplitude = 1.0;
    double control_rate = 2.0;
    double control_frequency = 1.0;
    double control_phase = 0.0;
    double control_norm = 1.0;  // <= 0 disables normalization
    std::vector<double> control_breakpoints;
    std::vector<std::vector<double>> control_values;

    bool energy = false;
    std::string x0 = "ones";
    double u_norm_for_bounds = 1.0;
    double informative_ratio = 1e6;
    bool dump_ensemble_flag = false;
};

void apply_config_file(const std::string& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) {
        throw parse_error("cannot open config file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw parse_error(path + ": " + e.what());
    }
    const auto get = [&](const char* key, auto& slot) {
        if (j.contains(key)) {
            j.at(key).get_to(slot);
        }
    };
    get("system", cfg.system_path);
    get("heat", cfg.heat_n);
    get("noise_scale", cfg.noise_scale);
    get("bilinear_scale", cfg.bilinear_scale);
    get("r", cfg.r);
    get("r_sweep", cfg.r_sweep);
    get("paths", cfg.paths);
    get("dt", cfg.dt);
    get("horizon", cfg.horizon);
    get("seed", cfg.seed);
    get("theta", cfg.theta);
    get("jump_rate", cfg.jump_rate);
    get("out", cfg.out_dir);
    get("gramians", cfg.gramians_path);
    get("epsilon", cfg.epsilon);
    get("method", cfg.method);
    get("threads", cfg.threads);
    get("stability_cap", cfg.stability_cap);
    get("control", cfg.control);
    get("control_amplitude", cfg.control_amplitude);
    get("control_rate", cfg.control_rate);
    get("control_frequency", cfg.control_frequency);
    get("control_phase", cfg.control_phase);
    get("control_norm", cfg.control_norm);
    get("control_breakpoints", cfg.control_breakpoints);
    get("control_values", cfg.control_values);
    get("energy", cfg.energy);
    get("x0", cfg.x0);
    get("u_norm", cfg.u_norm_for_bounds);
    get("informative_ratio", cfg.informative_ratio);
    get("dump_ensemble", cfg.dump_ensemble_flag);
}

StochasticBilinearSystem acquire_system(const RunConfig& cfg) {
    StochasticBilinearSystem sys;
    if (!cfg.system_path.empty()) {
        sys = load_system(cfg.system_path);
    } else if (cfg.heat_n >= 2) {
        sys = build_heat_example(cfg.heat_n, cfg.noise_scale, cfg.bilinear_scale);
    } else {
        throw std::invalid_argument("provide either --system PATH or --heat N");
    }
    const ValidationReport report = validate_system(sys);
    if (!report.passed) {
        std::ostringstream msg;
        msg << "system validation failed:";
        for (const auto& violation : report.violations) {
            msg << " [" << violation.name << " magnitude " << violation.magnitude << "]";
        }
        throw std::runtime_error(msg.str());
    }
    return sys;
}

SolverOptions solver_options(const RunConfig& cfg) {
    SolverOptions opts;
    if (cfg.epsilon > 0.0) {
        opts.epsilon = cfg.epsilon;
    }
    if (cfg.method == "newton") {
        opts.method = GramianMethod::newton;
    } else if (cfg.method == "lagged_fixed_point" || cfg.method == "lagged") {
        opts.method = GramianMethod::lagged_fixed_point;
    } else if (cfg.method == "direct_kronecker") {
        opts.method = GramianMethod::newton;
        opts.inner_lyapunov = InnerLyapunov::direct_kronecker;
    } else {
        throw std::invalid_argument("unknown --method: " + cfg.method);
    }
    return opts;
}

std::vector<int> r_list(const RunConfig& cfg, int n, bool allow_full_order) {
    const int max_r = allow_full_order ? n : n - 1;
    std::vector<int> out;
    if (cfg.r >= 1) {
        out.push_back(cfg.r);
    } else if (!cfg.r_sweep.empty()) {
        const auto sep = cfg.r_sweep.find("..");
        if (sep == std::string::npos) {
            throw std::invalid_argument("--r-sweep expects the form A..B");
        }
        const int lo = std::stoi(cfg.r_sweep.substr(0, sep));
        const int hi = std::stoi(cfg.r_sweep.substr(sep + 2));
        for (int r = lo; r <= hi; ++r) {
            out.push_back(r);
        }
    } else {
        throw std::invalid_argument("provide --r R or --r-sweep A..B");
    }
    for (int r : out) {
        if (r < 1 || r > max_r) {
            throw std::invalid_argument("reduction order r = " + std::to_string(r) +
                                        " out of range [1, " + std::to_string(max_r) + "]");
        }
    }
    return out;
}

ControlSignal build_control(const RunConfig& cfg, int m) {
    ControlSignal u;
    if (cfg.control == "zero") {
        u = zero_control(m);
    } else if (cfg.control == "constant") {
        u = constant_control(m, cfg.control_amplitude);
    } else if (cfg.control == "sine") {
        u = sine_control(m, cfg.control_amplitude, cfg.control_frequency, cfg.control_phase);
    } else if (cfg.control == "decaying_exp") {
        u = decaying_exp_control(m, cfg.control_amplitude, cfg.control_rate);
    } else if (cfg.control == "piecewise_constant") {
        Matrix values(m, static_cast<Eigen::Index>(cfg.control_values.size()));
        for (std::size_t s = 0; s < cfg.control_values.size(); ++s) {
            if (static_cast<int>(cfg.control_values[s].size()) != m) {
                throw std::invalid_argument("control_values rows must match the input dimension");
            }
            for (int c = 0; c < m; ++c) {
                values(c, static_cast<Eigen::Index>(s)) = cfg.control_values[s][c];
            }
        }
        u = piecewise_constant_control(m, cfg.control_breakpoints, values);
    } else {
        throw std::invalid_argument("unknown control kind: " + cfg.control);
    }
    if (cfg.control_norm > 0.0 && cfg.control != "zero") {
        u = u.normalized_to(cfg.control_norm, cfg.horizon);
    }
    return u;
}

Vector initial_state(const RunConfig& cfg, int n) {
    Vector x0(n);
    if (cfg.x0 == "ones") {
        x0.setConstant(1.0 / std::sqrt(static_cast<double>(n)));
    } else if (cfg.x0 == "e1") {
        x0.setZero();
        x0(0) = 1.0;
    } else {
        throw std::invalid_argument("unknown --x0 choice: " + cfg.x0 + " (expected ones|e1)");
    }
    return x0;
}

void require_stability(const StochasticBilinearSystem& sys, const RunConfig& cfg) {
    const StabilityReport report = check_mean_square_stability(sys, cfg.stability_cap);
    if (!report.stable) {
        throw std::runtime_error("system is not mean-square stable (spectral abscissa " +
                                 format_g17(report.spectral_abscissa) + ")");
    }
}

GramianPair obtain_gramians(const RunConfig& cfg, const StochasticBilinearSystem& sys) {
    if (!cfg.gramians_path.empty()) {
        return load_gramians(cfg.gramians_path);
    }
    return solve_gramians(sys, solver_options(cfg));
}

int cmd_stability(const RunConfig& cfg) {
    const StochasticBilinearSystem sys = acquire_system(cfg);
    const StabilityReport report = check_mean_square_stability(sys, cfg.stability_cap);
    std::cout << "spectral_abscissa " << format_g17(report.spectral_abscissa) << "\n";
    std::cout << "stable " << (report.stable ? "yes" : "no") << "\n";
    std::cout << "margin " << format_g17(report.margin) << "\n";
    return report.stable ? 0 : 1;
}

int cmd_gramians(const RunConfig& cfg) {
    const StochasticBilinearSystem sys = acquire_system(cfg);
    require_stability(sys, cfg);

    const GramianPair pair = solve_gramians(sys, solver_options(cfg));
    const std::string out_path = (std::filesystem::path(cfg.out_dir) / "gramians.json").string();
    save_gramians(pair, out_path);

    const double q_scale = std::max(1.0, (sys.C.transpose() * sys.C).norm());
    const double p_gate = -1e-8 * std::max(1.0, sys.A.norm());
    std::cout << "q_residual_norm " << format_g17(pair.q_residual_norm) << " (gate "
              << format_g17(1e-10 * q_scale) << ")\n";
    std::cout << "p_residual_mineig " << format_g17(pair.p_residual_mineig) << " (gate "
              << format_g17(p_gate) << ")\n";
    std::cout << "epsilon " << format_g17(pair.epsilon) << "\n";
    std::cout << "method_p " << pair.p_info.method << " iterations " << pair.p_info.iterations << "\n";
    std::cout << "method_q " << pair.q_info.method << " iterations " << pair.q_info.iterations << "\n";
    if (!pair.q_info.warning.empty()) {
        std::cerr << "warning: " << pair.q_info.warning << "\n";
    }
    if (!pair.p_info.warning.empty()) {
        std::cerr << "warning: " << pair.p_info.warning << "\n";
    }
    std::cout << "wrote " << out_path << "\n";

    const bool ok = pair.q_residual_norm <= 1e-10 * q_scale && pair.p_residual_mineig >= p_gate;
    if (!ok) {
        std::cerr << "residual gates failed\n";
    }
    return ok ? 0 : 1;
}

int cmd_reduce(const RunConfig& cfg) {
    const StochasticBilinearSystem sys = acquire_system(cfg);
    require_stability(sys, cfg);
    const GramianPair pair = obtain_gramians(cfg, sys);
    const BalancedRealization bal = balance(sys, pair);

    const std::filesystem::path out_dir(cfg.out_dir);
    write_hsv_csv(bal.sigma, (out_dir / "hsv.csv").string());
    save_system(bal.sys_balanced, (out_dir / "balanced_system.json").string());

    const std::vector<int> orders = r_list(cfg, sys.n, /*allow_full_order=*/false);
    std::vector<BoundTableRow> bound_rows;
    for (int r : orders) {
        const ReducedModel rom = truncate(bal, r);
        if (rom.split_multiplicity_group) {
            std::cerr << "warning: truncation at r = " << r
                      << " splits a group of equal Hankel singular values\n";
        }
        save_system(rom.sys_r, (out_dir / ("rom_r" + std::to_string(r) + ".json")).string());
        bound_rows.push_back({r, error_bound(rom, cfg.u_norm_for_bounds),
                              error_bound_with_multiplicity(rom, cfg.u_norm_for_bounds)});
    }
    write_bound_table_csv(bound_rows, (out_dir / "bounds.csv").string());
    std::cout << "wrote " << orders.size() << " reduced model(s) to " << cfg.out_dir << "\n";
    return 0;
}

int cmd_validate(const RunConfig& cfg) {
    const StochasticBilinearSystem sys = acquire_system(cfg);
    require_stability(sys, cfg);
    const GramianPair pair = obtain_gramians(cfg, sys);
    const BalancedRealization bal = balance(sys, pair);

    const ControlSignal u = build_control(cfg, sys.m);
    LevyConfig levy;
    levy.K = sys.K;
    levy.theta = cfg.theta;
    levy.jump_rate = cfg.jump_rate;
    levy.seed = cfg.seed;

    const std::vector<int> orders = r_list(cfg, sys.n, /*allow_full_order=*/true);
    std::vector<ReducedModel> roms;
    for (int r : orders) {
        if (r == sys.n) {
            // No truncation: the "reduced" model is the balanced system and
            // the bound degenerates to zero.
            ReducedModel identity;
            identity.sys_r = bal.sys_balanced;
            identity.r = sys.n;
            identity.sigma2 = Vector::Zero(0);
            roms.push_back(std::move(identity));
        } else {
            roms.push_back(truncate(bal, r));
        }
    }

    std::vector<BoundCheckRow> rows(orders.size());
    bool all_satisfied = true;
    bool sweep_ok = true;
    try {
        const auto reports = monte_carlo_output_error_sweep(sys, roms, u, levy, cfg.horizon, cfg.dt,
                                                            cfg.paths, cfg.threads);
        for (std::size_t i = 0; i < orders.size(); ++i) {
            rows[i].r = orders[i];
            rows[i].report = reports[i];
        }
    } catch (const std::exception&) {
        sweep_ok = false;
    }
    if (!sweep_ok) {
        // Re-run one order at a time so a blow-up in a single reduced model
        // is reported on its own row.
        for (std::size_t i = 0; i < orders.size(); ++i) {
            rows[i].r = orders[i];
            try {
                rows[i].report = monte_carlo_output_error(sys, roms[i], u, levy, cfg.horizon, cfg.dt,
                                                          cfg.paths, cfg.threads);
            } catch (const std::exception& e) {
                std::cerr << "r = " << orders[i] << ": " << e.what() << "\n";
                rows[i].report.mc_error_estimate = std::numeric_limits<double>::quiet_NaN();
                rows[i].report.theoretical_bound =
                    error_bound(roms[i], u.l2_norm_on(cfg.horizon));
                rows[i].report.satisfied = false;
            }
        }
    }

    for (auto& row : rows) {
        auto& rep = row.report;
        if (row.r == static_cast<int>(sys.n) && rep.theoretical_bound == 0.0) {
            // full-order row: accept at the integrator noise floor
            rep.satisfied = rep.mc_error_estimate <= 1e-10;
        }
        row.bound_ratio = rep.theoretical_bound / std::max(rep.mc_error_estimate, 1e-300);
        row.informative = row.bound_ratio <= cfg.informative_ratio;
        if (!row.informative && std::isfinite(row.bound_ratio)) {
            std::cerr << "r = " << row.r << ": bound not informative (bound/error ratio "
                      << format_g17(row.bound_ratio) << " exceeds " << format_g17(cfg.informative_ratio)
                      << ")\n";
        }
        all_satisfied = all_satisfied && rep.satisfied;
        std::cout << "r " << row.r << " mc_error " << format_g17(rep.mc_error_estimate) << " stderr "
                  << format_g17(rep.mc_stderr) << " bound " << format_g17(rep.theoretical_bound)
                  << " satisfied " << (rep.satisfied ? 1 : 0) << "\n";
    }

    const std::filesystem::path out_dir(cfg.out_dir);
    write_bound_check_csv(rows, (out_dir / "bounds_check.csv").string());

    if (cfg.energy) {
        const auto reach = check_reachability_energy(sys, pair.P, u, levy, cfg.horizon, cfg.dt,
                                                     cfg.paths, cfg.threads);
        write_energy_reach_csv(reach, (out_dir / "energy_reach.csv").string());
        const Vector x0 = initial_state(cfg, sys.n);
        const auto observe = check_observability_energy(sys, pair.Q, x0, u, levy, cfg.horizon,
                                                        cfg.dt, cfg.paths, cfg.threads);
        write_energy_observe_csv(observe, (out_dir / "energy_observe.csv").string());
        std::cout << "energy_reach all_satisfied " << (reach.all_satisfied ? 1 : 0) << "\n";
        std::cout << "energy_observe satisfied " << (observe.satisfied ? 1 : 0) << "\n";
        all_satisfied = all_satisfied && reach.all_satisfied && observe.satisfied;
    }

    if (cfg.dump_ensemble_flag) {
        const TimeGrid grid = make_grid(cfg.horizon, cfg.dt);
        const auto ensemble = simulate_ensemble(sys, u, levy, grid, Vector::Zero(sys.n), cfg.paths,
                                                cfg.threads);
        dump_ensemble(ensemble, (out_dir / "ensemble").string());
    }
    return all_satisfied ? 0 : 1;
}

void add_common_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--config", cfg.config_path, "JSON run-configuration file (flags override it)");
    sub->add_option("--system", cfg.system_path, "path to a system JSON file");
    sub->add_option("--heat", cfg.heat_n, "build the heat example of this order instead of loading");
    sub->add_option("--noise-scale", cfg.noise_scale, "heat example noise scale");
    sub->add_option("--bilinear-scale", cfg.bilinear_scale, "heat example bilinear scale");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--epsilon", cfg.epsilon, "reachability shift (<=0 -> 1e-8*frob(A))");
    sub->add_option("--method", cfg.method, "newton | lagged_fixed_point | direct_kronecker");
    sub->add_option("--threads", cfg.threads, "worker threads (results are thread-count invariant)");
    sub->add_option("--stability-cap", cfg.stability_cap, "max n for the dense stability eigensolve");
}

void add_reduction_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--r", cfg.r, "single reduction order");
    sub->add_option("--r-sweep", cfg.r_sweep, "range of reduction orders, e.g. 2..15");
    sub->add_option("--gramians", cfg.gramians_path, "reuse a gramians.json instead of solving");
}

void add_simulation_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--paths", cfg.paths, "Monte Carlo paths");
    sub->add_option("--dt", cfg.dt, "time step");
    sub->add_option("--horizon", cfg.horizon, "time horizon T");
    sub->add_option("--seed", cfg.seed, "base RNG seed");
    sub->add_option("--theta", cfg.theta, "Gaussian fraction of the noise covariance, in [0,1]");
    sub->add_option("--jump-rate", cfg.jump_rate, "Poisson jump intensity");
    sub->add_option("--control", cfg.control,
                    "zero | constant | sine | decaying_exp | piecewise_constant");
    sub->add_option("--control-amplitude", cfg.control_amplitude, "control amplitude");
    sub->add_option("--control-rate", cfg.control_rate, "decay rate for decaying_exp");
    sub->add_option("--control-frequency", cfg.control_frequency, "frequency for sine");
    sub->add_option("--control-phase", cfg.control_phase, "phase for sine");
    sub->add_option("--control-norm", cfg.control_norm,
                    "rescale the control to this L2 norm on [0,T] (<=0 disables)");
    sub->add_flag("--energy", cfg.energy, "also run the reachability/observability energy checks");
    sub->add_option("--x0", cfg.x0, "initial state for the observation-energy check: ones | e1");
    sub->add_option("--informative-ratio", cfg.informative_ratio,
                    "flag rows whose bound/error ratio exceeds this");
    sub->add_flag("--dump-ensemble", cfg.dump_ensemble_flag,
                  "dump the full-model output ensemble as binary + JSON header");
}

}  // namespace

int run_args(const std::vector<std::string>& args) {
    RunConfig cfg;

    // The config file is applied before flag parsing so that flags override.
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") {
            try {
                apply_config_file(args[i + 1], cfg);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 2;
            }
        }
    }

    CLI::App app{"balanced truncation for stochastic bilinear systems driven by Levy noise"};
    app.require_subcommand(1);

    CLI::App* stability = app.add_subcommand("stability", "mean-square stability check");
    add_common_options(stability, cfg);

    CLI::App* gramians = app.add_subcommand("gramians", "solve the reachability/observability Gramians");
    add_common_options(gramians, cfg);

    CLI::App* reduce = app.add_subcommand("reduce", "balance, truncate and write reduced models");
    add_common_options(reduce, cfg);
    add_reduction_options(reduce, cfg);
    reduce->add_option("--u-norm", cfg.u_norm_for_bounds, "control norm used in the bound table");

    CLI::App* validate = app.add_subcommand("validate", "Monte Carlo check of the L2 error bound");
    add_common_options(validate, cfg);
    add_reduction_options(validate, cfg);
    add_simulation_options(validate, cfg);

    std::vector<const char*> argv_like;
    argv_like.push_back("levybt");
    for (const auto& arg : args) {
        argv_like.push_back(arg.c_str());
    }
    try {
        app.parse(static_cast<int>(argv_like.size()), argv_like.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (stability->parsed()) {
            return cmd_stability(cfg);
        }
        if (gramians->parsed()) {
            return cmd_gramians(cfg);
        }
        if (reduce->parsed()) {
            return cmd_reduce(cfg);
        }
        if (validate->parsed()) {
            return cmd_validate(cfg);
        }
    } catch (const parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run_args(args);
}

}  // namespace levybt::cli
