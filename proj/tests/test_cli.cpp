#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "commands.hpp"
#include "levybt/gramians.hpp"
#include "levybt/system.hpp"

namespace fs = std::filesystem;
using levybt::cli::run_args;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_unstable_system(const fs::path& path) {
    std::ofstream out(path);
    out << R"({"n":1,"m":1,"p":1,"v":1,
               "A":[[1.0]],"B":[[1.0]],"C":[[1.0]],
               "N":[[[0.0]]],"H":[[[0.0]]],"K":[[1.0]]})";
}

}  // namespace

TEST_CASE("cmd stability: exit codes for stable, unstable and missing inputs") {
    CHECK(run_args({"stability", "--heat", "6"}) == 0);

    const auto dir = temp_dir("levybt_cli_stab");
    write_unstable_system(dir / "unstable.json");
    CHECK(run_args({"stability", "--system", (dir / "unstable.json").string()}) == 1);

    CHECK(run_args({"stability", "--system", (dir / "missing.json").string()}) == 2);
    CHECK(run_args({"stability"}) == 2);  // neither --system nor --heat
    fs::remove_all(dir);
}

TEST_CASE("cmd gramians: writes the gramian file and honors gates") {
    const auto dir = temp_dir("levybt_cli_gram");
    CHECK(run_args({"gramians", "--heat", "6", "--out", (dir / "out").string()}) == 0);
    CHECK(fs::exists(dir / "out" / "gramians.json"));
    const auto pair = levybt::load_gramians((dir / "out" / "gramians.json").string());
    CHECK(pair.P.rows() == 6);
    CHECK(pair.Q.rows() == 6);

    write_unstable_system(dir / "unstable.json");
    CHECK(run_args({"gramians", "--system", (dir / "unstable.json").string(), "--out",
                    (dir / "out2").string()}) == 1);
    fs::remove_all(dir);
}

TEST_CASE("cmd gramians: zero output matrix produces a definiteness warning but passes gates") {
    const auto dir = temp_dir("levybt_cli_gram_c0");
    auto sys = levybt::build_heat_example(4, 0.3, 0.3);
    sys.C.setZero();
    levybt::save_system(sys, (dir / "c0.json").string());
    CHECK(run_args({"gramians", "--system", (dir / "c0.json").string(), "--out",
                    (dir / "out").string()}) == 0);
    fs::remove_all(dir);
}

TEST_CASE("cmd gramians accepts the lagged method") {
    const auto dir = temp_dir("levybt_cli_gram_lagged");
    CHECK(run_args({"gramians", "--heat", "5", "--method", "lagged_fixed_point", "--out",
                    (dir / "out").string()}) == 0);
    CHECK(run_args({"gramians", "--heat", "5", "--method", "bogus", "--out",
                    (dir / "out").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cmd reduce: sweep writes one ROM per order plus HSV and bound tables") {
    const auto dir = temp_dir("levybt_cli_reduce");
    CHECK(run_args({"reduce", "--heat", "6", "--r-sweep", "1..5", "--out", dir.string()}) == 0);
    CHECK(fs::exists(dir / "hsv.csv"));
    CHECK(fs::exists(dir / "balanced_system.json"));
    CHECK(fs::exists(dir / "bounds.csv"));
    for (int r = 1; r <= 5; ++r) {
        const auto rom =
            levybt::load_system((dir / ("rom_r" + std::to_string(r) + ".json")).string());
        CHECK(rom.n == r);
    }

    // hsv.csv values are non-increasing
    std::ifstream hsv(dir / "hsv.csv");
    std::string line;
    std::getline(hsv, line);  // header
    double previous = std::numeric_limits<double>::infinity();
    while (std::getline(hsv, line)) {
        const auto comma = line.find(',');
        const double value = std::stod(line.substr(comma + 1));
        CHECK(value <= previous * (1.0 + 1e-14));
        previous = value;
    }
    fs::remove_all(dir);
}

TEST_CASE("cmd reduce: out-of-range orders are usage errors") {
    const auto dir = temp_dir("levybt_cli_reduce_bad");
    CHECK(run_args({"reduce", "--heat", "4", "--r", "4", "--out", dir.string()}) == 2);
    CHECK(run_args({"reduce", "--heat", "4", "--r", "0", "--out", dir.string()}) == 2);
    CHECK(run_args({"reduce", "--heat", "4", "--out", dir.string()}) == 2);  // no r given
    fs::remove_all(dir);
}

TEST_CASE("cmd validate: small benchmark run satisfies the bound and writes the table") {
    const auto dir = temp_dir("levybt_cli_validate");
    CHECK(run_args({"validate", "--heat", "6", "--r-sweep", "2..4", "--paths", "60", "--dt",
                    "2e-3", "--horizon", "0.5", "--seed", "7", "--theta", "0.6", "--jump-rate",
                    "8", "--energy", "--out", dir.string()}) == 0);
    CHECK(fs::exists(dir / "bounds_check.csv"));
    CHECK(fs::exists(dir / "energy_reach.csv"));
    CHECK(fs::exists(dir / "energy_observe.csv"));
    const std::string table = read_file(dir / "bounds_check.csv");
    CHECK(table.find("r,mc_error,stderr,bound,satisfied,bound_ratio,informative") == 0);
    fs::remove_all(dir);
}

TEST_CASE("cmd validate: identical seeds give bitwise-identical CSVs across thread counts") {
    const auto dir_a = temp_dir("levybt_cli_det_a");
    const auto dir_b = temp_dir("levybt_cli_det_b");
    const std::vector<std::string> common = {
        "validate", "--heat",    "6",   "--r-sweep", "2..4", "--paths", "80",
        "--dt",     "2e-3",      "--horizon", "0.5", "--seed", "5",    "--theta",
        "0.5",      "--jump-rate", "8", "--energy"};

    auto args_a = common;
    args_a.insert(args_a.end(), {"--threads", "1", "--out", dir_a.string()});
    auto args_b = common;
    args_b.insert(args_b.end(), {"--threads", "2", "--out", dir_b.string()});
    CHECK(run_args(args_a) == 0);
    CHECK(run_args(args_b) == 0);

    CHECK(read_file(dir_a / "bounds_check.csv") == read_file(dir_b / "bounds_check.csv"));
    CHECK(read_file(dir_a / "energy_reach.csv") == read_file(dir_b / "energy_reach.csv"));
    CHECK(read_file(dir_a / "energy_observe.csv") == read_file(dir_b / "energy_observe.csv"));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("cmd validate: r = n row is accepted at the integrator noise floor") {
    const auto dir = temp_dir("levybt_cli_rn");
    CHECK(run_args({"validate", "--heat", "4", "--r", "4", "--paths", "10", "--dt", "2e-3",
                    "--horizon", "0.25", "--out", dir.string()}) == 0);
    const std::string table = read_file(dir / "bounds_check.csv");
    CHECK(table.find("\n4,") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cmd validate: a norm-5 control is satisfied but flagged as uninformative") {
    const auto dir = temp_dir("levybt_cli_norm5");
    CHECK(run_args({"validate", "--heat", "6", "--r", "3", "--paths", "40", "--dt", "2e-3",
                    "--horizon", "0.5", "--seed", "11", "--control-norm", "5",
                    "--informative-ratio", "1e4", "--out", dir.string()}) == 0);
    const std::string table = read_file(dir / "bounds_check.csv");
    // last CSV column is the informative flag; the exp(0.5*25) factor pushes
    // the bound/error ratio far past the default threshold
    const auto line_start = table.find("\n3,");
    REQUIRE(line_start != std::string::npos);
    const auto line_end = table.find('\n', line_start + 1);
    const std::string row = table.substr(line_start + 1, line_end - line_start - 1);
    CHECK(row.substr(row.size() - 2) == ",0");
    fs::remove_all(dir);
}

TEST_CASE("cmd gramians honors an explicit epsilon") {
    const auto dir = temp_dir("levybt_cli_eps");
    CHECK(run_args({"gramians", "--heat", "4", "--epsilon", "1e-6", "--out", dir.string()}) == 0);
    const auto pair = levybt::load_gramians((dir / "gramians.json").string());
    CHECK(pair.epsilon == 1e-6);
    fs::remove_all(dir);
}

TEST_CASE("cmd validate: simulation blow-up is reported per row with exit 1") {
    const auto dir = temp_dir("levybt_cli_blowup");
    // dt past the explicit-Euler stability limit of the stiffest heat mode
    CHECK(run_args({"validate", "--heat", "12", "--r", "3", "--paths", "5", "--dt", "5e-3",
                    "--horizon", "0.5", "--out", dir.string()}) == 1);
    const std::string table = read_file(dir / "bounds_check.csv");
    CHECK(table.find("nan") != std::string::npos);
    CHECK(table.find(",0\n") != std::string::npos);  // unsatisfied row
    fs::remove_all(dir);
}

TEST_CASE("cmd validate: --dump-ensemble writes the binary arrays and header") {
    const auto dir = temp_dir("levybt_cli_dump");
    CHECK(run_args({"validate", "--heat", "4", "--r", "2", "--paths", "8", "--dt", "2e-3",
                    "--horizon", "0.25", "--dump-ensemble", "--out", dir.string()}) == 0);
    CHECK(fs::exists(dir / "ensemble.json"));
    CHECK(fs::exists(dir / "ensemble_states.bin"));
    CHECK(fs::exists(dir / "ensemble_outputs.bin"));
    // 8 paths x 126 nodes x 4 states x 8 bytes
    CHECK(fs::file_size(dir / "ensemble_states.bin") == 8u * 126u * 4u * sizeof(double));
    fs::remove_all(dir);
}

TEST_CASE("config file supplies defaults and flags override it") {
    const auto dir = temp_dir("levybt_cli_config");
    {
        std::ofstream out(dir / "run.json");
        out << R"({"heat": 6, "r_sweep": "2..3", "paths": 30, "dt": 2e-3,
                   "horizon": 0.5, "seed": 3, "out": ")"
            << (dir / "from_config").string() << R"("})";
    }
    CHECK(run_args({"validate", "--config", (dir / "run.json").string()}) == 0);
    CHECK(fs::exists(dir / "from_config" / "bounds_check.csv"));

    // --out overrides the config file
    CHECK(run_args({"validate", "--config", (dir / "run.json").string(), "--out",
                    (dir / "override").string()}) == 0);
    CHECK(fs::exists(dir / "override" / "bounds_check.csv"));

    CHECK(run_args({"validate", "--config", (dir / "nope.json").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("the installed binary behaves like the in-process entry point") {
    const std::string binary = LEVYBT_CLI_PATH;
    const auto dir = temp_dir("levybt_cli_bin");
    const auto run = [&](const std::string& args) {
        const int status = std::system((binary + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run("stability --heat 6") == 0);
    CHECK(run("") == 2);  // missing subcommand
    CHECK(run("stability --system /nope") == 2);
    CHECK(run("reduce --heat 5 --r 2 --out " + (dir / "out").string()) == 0);
    fs::remove_all(dir);
}
