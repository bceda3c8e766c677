#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mrsim/envelope.hpp"
#include "mrsim/netlist.hpp"

namespace mrsim {

enum class RunMode { Pss, Envelope };
enum class GridMode { Single, Multi };

struct RunConfig {
    std::filesystem::path netlist;
    RunMode mode = RunMode::Pss;
    GridMode grid = GridMode::Multi;
    int degree = 3;
    int knots = 32;
    std::map<std::string, int> knots_per_subcircuit;
    double newton_tol = 1e-9;
    double adapt_tol = 1e-3;  // refine threshold; coarsening uses a tenth of it
    bool adapt = true;
    int max_knots = 1 << 14;
    double env_tol = 1e-3;
    Multistep method = Multistep::Bdf2;
    double tau_end = 0.0;
    double dtau = 0.0;
    double dtau_max = 0.0;
    std::filesystem::path out = ".";
    std::vector<std::string> signals;
    int samples = 256;
    int output_every = 0;  // 0: first and last entry only

    /// Throws InvalidConfig.
    void validate() const;
};

using Stats = std::map<std::string, std::string>;

struct RunSummary {
    bool ok = false;
    std::string failure_stage;
    std::string message;
    Stats stats;
};

/// Runs the whole pipeline and writes every artifact into config.out;
/// stats.txt is written even when a stage fails.
RunSummary run_simulation(const RunConfig& config);

/// Column selection for waveform output: node voltages from the home
/// subcircuit, then branch currents.
struct OutputColumn {
    std::string name;
    int subcircuit = 0;
    int column = 0;
};
std::vector<OutputColumn> output_columns(const PartitionedCircuit& pc, const std::vector<std::string>& signals);

void write_waveform_csv(std::ostream& out, const std::vector<SplineWaveform>& wfs,
                        const std::vector<OutputColumn>& columns, int samples);

void write_stats(std::ostream& out, const Stats& stats);
Stats read_stats(std::istream& in);
Stats read_stats_file(const std::filesystem::path& path);

struct ComparisonRow {
    std::string key;
    double a = 0.0;
    double b = 0.0;
    double ratio = 0.0;  // b / a
};

struct Comparison {
    std::vector<ComparisonRow> rows;

    [[nodiscard]] std::string table() const;
    [[nodiscard]] std::string key_values() const;
};

/// Ratios b / a of unknowns, nnz and wall times; throws SchemaMismatch.
Comparison compare_stats(const Stats& a, const Stats& b);

}  // namespace mrsim
