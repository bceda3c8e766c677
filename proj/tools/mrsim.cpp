#include <CLI11.hpp>
#include <iostream>

#include "mrsim/driver.hpp"
#include "mrsim/error.hpp"
#include "mrsim/netlist.hpp"

namespace {

// Accepts SPICE suffixes, e.g. 200u.
CLI::Option* add_time(CLI::App* app, const std::string& name, double& target, const std::string& help) {
    return app->add_option_function<std::string>(
        name,
        [&target, name](const std::string& text) {
            const auto v = mrsim::parse_spice_number(text);
            if (!v) throw CLI::ValidationError(name, "not a number: " + text);
            target = *v;
        },
        help);
}

void print_error(const std::exception& e) {
    if (const auto* err = dynamic_cast<const mrsim::Error*>(&e)) {
        std::cerr << "error [" << mrsim::to_string(err->code()) << "]: " << e.what() << '\n';
    } else {
        std::cerr << "error: " << e.what() << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multirate envelope simulator with per-subcircuit spline grids"};
    app.require_subcommand(1);

    mrsim::RunConfig cfg;
    std::string mode = "pss", grid = "multi", method = "bdf2";
    std::vector<std::string> sub_knots;
    bool no_adapt = false;

    auto* run = app.add_subcommand("run", "simulate a netlist and write CSV artifacts");
    run->add_option("--netlist", cfg.netlist, "netlist file")->required()->check(CLI::ExistingFile);
    run->add_option("--mode", mode, "pss or envelope")->check(CLI::IsMember({"pss", "envelope"}));
    run->add_option("--grid", grid, "single (one shared grid) or multi")->check(CLI::IsMember({"single", "multi"}));
    run->add_option("--degree", cfg.degree, "spline degree (1-5)");
    run->add_option("--knots", cfg.knots, "initial uniform knots per subcircuit");
    run->add_option("--knots-sub", sub_knots, "initial knots for one subcircuit, NAME=N");
    add_time(run, "--tau-end", cfg.tau_end, "slow-time end of an envelope run");
    run->add_option("--newton-tol", cfg.newton_tol, "Newton absolute and relative tolerance");
    run->add_option("--adapt-tol", cfg.adapt_tol, "relative refinement threshold");
    run->add_flag("--no-adapt", no_adapt, "keep the initial grids");
    run->add_option("--max-knots", cfg.max_knots, "knot limit per grid");
    run->add_option("--env-tol", cfg.env_tol, "envelope step tolerance; 0 gives fixed steps");
    run->add_option("--method", method, "bdf1 or bdf2")->check(CLI::IsMember({"bdf1", "bdf2"}));
    add_time(run, "--dtau", cfg.dtau, "initial (or fixed) envelope step");
    add_time(run, "--dtau-max", cfg.dtau_max, "largest envelope step");
    run->add_option("--out", cfg.out, "output directory");
    run->add_option("--signals", cfg.signals, "columns to write, e.g. out,i_V1")->delimiter(',');
    run->add_option("--samples", cfg.samples, "samples per period in waveform files");
    run->add_option("--output-every", cfg.output_every, "also write every N-th envelope step");

    std::string stats_a, stats_b;
    bool kv = false;
    auto* cmp = app.add_subcommand("compare", "ratios b/a of two stats files");
    cmp->add_option("stats_a", stats_a, "baseline stats.txt")->required();
    cmp->add_option("stats_b", stats_b, "compared stats.txt")->required();
    cmp->add_flag("--kv", kv, "print key=value lines only");

    std::string netlist;
    auto* val = app.add_subcommand("validate", "report the partitioned structure of a netlist");
    val->add_option("netlist", netlist, "netlist file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            cfg.mode = mode == "pss" ? mrsim::RunMode::Pss : mrsim::RunMode::Envelope;
            cfg.grid = grid == "single" ? mrsim::GridMode::Single : mrsim::GridMode::Multi;
            cfg.method = method == "bdf1" ? mrsim::Multistep::Bdf1 : mrsim::Multistep::Bdf2;
            cfg.adapt = !no_adapt;
            for (const auto& s : sub_knots) {
                const auto eq = s.find('=');
                if (eq == std::string::npos) throw mrsim::Error(mrsim::ErrorCode::InvalidConfig, "--knots-sub needs NAME=N");
                cfg.knots_per_subcircuit[s.substr(0, eq)] = std::stoi(s.substr(eq + 1));
            }
            const auto summary = mrsim::run_simulation(cfg);
            if (!summary.ok) {
                std::cerr << "error in stage " << summary.failure_stage << ": " << summary.message << '\n';
                return 1;
            }
            std::cout << "status=ok\n";
            for (const char* key : {"total_unknowns", "jacobian_nnz", "steps", "total_time_s"}) {
                auto it = summary.stats.find(key);
                if (it != summary.stats.end()) std::cout << key << '=' << it->second << '\n';
            }
            return 0;
        }
        if (*cmp) {
            const auto c = mrsim::compare_stats(mrsim::read_stats_file(stats_a), mrsim::read_stats_file(stats_b));
            if (!kv) std::cout << c.table();
            std::cout << c.key_values();
            return 0;
        }
        if (*val) {
            const auto circuit = mrsim::parse_netlist_file(netlist);
            const auto report = mrsim::validate_circuit(mrsim::apply_node_tearing(circuit));
            std::cout << report.table() << report.key_values();
            return 0;
        }
    } catch (const std::exception& e) {
        print_error(e);
        return 1;
    }
    return 0;
}
