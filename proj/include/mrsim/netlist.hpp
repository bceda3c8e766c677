#pragma once

// Netlist front end: parsing of the line-oriented circuit description,
// validation, serialization and node tearing into subcircuits.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mrsim {

/// Node index reserved for the reference node ("0" or "gnd").
inline constexpr int kGround = -1;

enum class DeviceKind { Resistor, Capacitor, Inductor, VoltageSource, CurrentSource, Diode, Mosfet };

std::string_view device_letter(DeviceKind kind);

/// Piecewise linear table over an increasing abscissa.
class Table {
public:
    Table() = default;
    Table(std::vector<double> x, std::vector<double> y);

    /// Linear interpolation; throws TableOutOfRange outside [x.front(), x.back()].
    [[nodiscard]] double operator()(double x) const;

    [[nodiscard]] bool empty() const noexcept { return x_.empty(); }
    [[nodiscard]] const std::vector<double>& x() const noexcept { return x_; }
    [[nodiscard]] const std::vector<double>& y() const noexcept { return y_; }

    friend bool operator==(const Table&, const Table&) = default;

private:
    std::vector<double> x_;
    std::vector<double> y_;
};

/// Reads a two-column CSV (abscissa, value). Lines starting with '#' or a
/// non-numeric header line are skipped.
Table load_table_csv(const std::filesystem::path& path);

/// Named slow modulation e(tau) referenced by `am` sources.
struct EnvelopeFunction {
    enum class Shape { Constant, Linear, Sine, Table };

    std::string name;
    Shape shape = Shape::Constant;
    std::vector<double> coeffs;  // const: {a}; linear: {a, b}; sine: {a, b, T}
    std::string table_path;
    mrsim::Table table;

    [[nodiscard]] double operator()(double tau) const;

    friend bool operator==(const EnvelopeFunction&, const EnvelopeFunction&) = default;
};

/// Source waveform description: offset + amplitude * e(tau) * sin(2 pi h t / P).
struct SourceSpec {
    enum class Shape { Dc, Sin, Am };

    Shape shape = Shape::Dc;
    double offset = 0.0;
    double amplitude = 0.0;
    int harmonic = 1;
    std::string envelope;

    friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

/// Carrier angular frequency omega(tau) in rad/s.
struct OmegaSpec {
    bool tabulated = false;
    double value = 0.0;
    std::string table_path;
    mrsim::Table table;

    [[nodiscard]] double operator()(double tau) const { return tabulated ? table(tau) : value; }

    friend bool operator==(const OmegaSpec&, const OmegaSpec&) = default;
};

struct Device {
    DeviceKind kind = DeviceKind::Resistor;
    std::string name;
    std::vector<int> terminals;  // global node indices or kGround
    std::vector<double> params;
    SourceSpec source;           // only for voltage/current sources

    friend bool operator==(const Device&, const Device&) = default;
};

struct PartitionDirective {
    std::string name;
    std::vector<std::string> nodes;

    friend bool operator==(const PartitionDirective&, const PartitionDirective&) = default;
};

struct Circuit {
    std::vector<std::string> nodes;  // non-ground nodes, in order of first appearance
    std::vector<Device> devices;
    std::vector<PartitionDirective> partitions;
    std::vector<EnvelopeFunction> envelopes;
    double period = 0.0;
    OmegaSpec omega;

    [[nodiscard]] int find_node(std::string_view name) const;
    [[nodiscard]] const EnvelopeFunction* find_envelope(std::string_view name) const;

    friend bool operator==(const Circuit&, const Circuit&) = default;
};

/// Parses netlist text. Relative table paths are resolved against `base_dir`.
/// Without `.omega`, the carrier defaults to omega = 2 pi / P. Without any
/// `.partition`, every node belongs to one implicit subcircuit named "main".
Circuit parse_netlist(std::string_view text, const std::filesystem::path& base_dir = {});
Circuit parse_netlist_file(const std::filesystem::path& path);

/// Number with an optional SPICE scale suffix (f p n u m k meg g t).
std::optional<double> parse_spice_number(const std::string& text);

/// Writes a netlist that parses back to an identical Circuit.
std::string serialize_netlist(const Circuit& circuit);

// ---------------------------------------------------------------------------
// Node tearing

struct LocalDevice {
    DeviceKind kind = DeviceKind::Resistor;
    std::string name;
    std::vector<int> terminals;  // local node indices or kGround
    std::vector<double> params;
    SourceSpec source;
    int global_index = -1;       // position in Circuit::devices
};

struct Subcircuit {
    std::string name;
    std::vector<std::string> node_names;
    std::vector<int> global_nodes;  // local -> global node index
    std::vector<bool> torn;         // local copy of a node owned by another subcircuit
    std::vector<LocalDevice> devices;
    std::vector<int> connection_ends;   // connection index of each branch-current end, in order
    std::vector<int> connection_nodes;  // local node of each end

    [[nodiscard]] int local_node(int global) const;
};

/// Perfect-conductor link between local node `node_mu` of subcircuit `sub_k`
/// and local node `node_nu` of subcircuit `sub_l`. The voltage condition is
/// tested on the grid of `sub_k`, the current condition on the grid of `sub_l`.
struct Connection {
    int sub_k = 0;
    int node_mu = 0;
    int sub_l = 0;
    int node_nu = 0;
    int global_node = 0;
    /// Positions of the two branch-current ends within
    /// `subcircuits[sub_k].connection_ends` and `subcircuits[sub_l].connection_ends`.
    std::pair<int, int> current_unknowns{0, 0};
};

struct PartitionedCircuit {
    std::vector<Subcircuit> subcircuits;
    std::vector<Connection> connections;
    std::vector<std::string> global_nodes;
    std::vector<int> home_subcircuit;  // per global node
    std::vector<int> home_local;       // per global node
    std::vector<EnvelopeFunction> envelopes;
    double period = 0.0;
    OmegaSpec omega;
    int duplicated_nodes = 0;

    [[nodiscard]] int find_subcircuit(std::string_view name) const;
    [[nodiscard]] std::size_t device_count() const;
};

/// Splits the circuit along its `.partition` directives. A device belongs to
/// the partition of its first non-ground terminal; every foreign terminal is
/// duplicated locally. Nodes used by k >= 2 subcircuits are joined by a chain
/// of k - 1 connections in partition declaration order.
PartitionedCircuit apply_node_tearing(const Circuit& circuit);

/// Single subcircuit view of the whole circuit, ignoring partition directives.
PartitionedCircuit monolithic(const Circuit& circuit);

struct SubcircuitReport {
    std::string name;
    int nodes = 0;
    int devices = 0;
    int unknowns = 0;             // MNA dimension m_k
    int connection_unknowns = 0;  // connection branch currents
    int internal_unknowns = 0;    // everything else
};

struct ValidationReport {
    std::vector<SubcircuitReport> subcircuits;
    int connections = 0;
    int duplicated_nodes = 0;
    std::vector<std::string> warnings;

    [[nodiscard]] std::string table() const;
    [[nodiscard]] std::string key_values() const;
};

ValidationReport validate_circuit(const PartitionedCircuit& pcircuit);

}  // namespace mrsim
