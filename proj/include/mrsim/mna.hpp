#pragma once

// Charge/flux oriented MNA evaluation for one subcircuit:
//   d/dt q(x) + g(x, tau, t) = 0
// with every source folded into g as -s(tau, t).

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <string>
#include <utility>
#include <vector>

#include "mrsim/netlist.hpp"

namespace mrsim {

/// s(tau, t) = offset + amplitude * e(tau) * sin(2 pi h t / P).
struct BivariateSource {
    SourceSpec spec;
    EnvelopeFunction envelope;  // only meaningful for Am sources
    double period = 1.0;

    /// P-periodic fast waveform w(t) (including the offset).
    [[nodiscard]] double fast(double t) const;
    /// Slow envelope factor e(tau); 1 for dc and sin sources.
    [[nodiscard]] double slow(double tau) const;
};

double eval_source(const BivariateSource& src, double tau, double t);

/// Structural nonzeros of dq or dg with a slot per distinct (row, col).
struct SparsityPattern {
    std::vector<std::pair<int, int>> entries;  // sorted by (row, col)
    std::vector<int> calls;                    // slot of every stamp call, in evaluation order
};

/// Scratch space for repeated evaluation; one per thread.
struct StampWorkspace {
    Eigen::VectorXd q;
    Eigen::VectorXd g;
    std::vector<double> dq;  // values aligned with SparsityPattern::entries
    std::vector<double> dg;
};

struct StampResult {
    Eigen::VectorXd q;
    Eigen::VectorXd g;
    Eigen::SparseMatrix<double> dq;
    Eigen::SparseMatrix<double> dg;
};

class SystemLayout {
public:
    enum class UnknownKind { NodeVoltage, BranchCurrent, ConnectionCurrent };

    struct CompiledDevice {
        DeviceKind kind = DeviceKind::Resistor;
        std::vector<int> unknowns;  // terminal unknowns (-1 for ground)
        int branch = -1;            // branch-current unknown, if any
        std::vector<double> params;
        BivariateSource source;
    };

    [[nodiscard]] int dimension() const noexcept { return static_cast<int>(names_.size()); }
    [[nodiscard]] int node_count() const noexcept { return node_count_; }
    [[nodiscard]] int node_unknown(int local_node) const noexcept { return local_node; }
    /// Unknown of the branch current of local device `device`, or -1.
    [[nodiscard]] int branch_unknown(int device) const { return device_branch_.at(device); }
    /// Unknown of the `end`-th connection branch current of this subcircuit.
    [[nodiscard]] int connection_unknown(int end) const { return first_connection_ + end; }
    [[nodiscard]] int connection_count() const noexcept { return dimension() - first_connection_; }
    [[nodiscard]] bool is_connection_unknown(int j) const noexcept { return j >= first_connection_; }
    [[nodiscard]] UnknownKind kind(int j) const { return kinds_.at(j); }
    /// Column names such as "v_n1", "i_V1", "iconn_0".
    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
    [[nodiscard]] const std::vector<CompiledDevice>& devices() const noexcept { return devices_; }
    [[nodiscard]] const SparsityPattern& dq_pattern() const noexcept { return dq_pattern_; }
    [[nodiscard]] const SparsityPattern& dg_pattern() const noexcept { return dg_pattern_; }

    [[nodiscard]] StampWorkspace make_workspace() const;

    /// Fills `ws` with q, g and their Jacobian values at state `x`; every
    /// independent source is multiplied by `source_scale`.
    void eval(StampWorkspace& ws, const double* x, double tau, double t, double source_scale = 1.0) const;

    /// Local node of each connection end.
    [[nodiscard]] const std::vector<int>& connection_nodes() const noexcept { return connection_nodes_; }

    friend SystemLayout build_layout(const Subcircuit&, const std::vector<EnvelopeFunction>&, double);

private:
    template <class Acc>
    void stamp_connections(Acc& acc, const double* x) const;

    int node_count_ = 0;
    int first_connection_ = 0;
    std::vector<std::string> names_;
    std::vector<UnknownKind> kinds_;
    std::vector<int> device_branch_;
    std::vector<CompiledDevice> devices_;
    std::vector<int> connection_nodes_;
    SparsityPattern dq_pattern_;
    SparsityPattern dg_pattern_;
};

/// Unknown order: non-ground local nodes, then branch currents of voltage
/// sources and inductors in declaration order, then connection ends.
SystemLayout build_layout(const Subcircuit& sub, const std::vector<EnvelopeFunction>& envelopes, double period);

/// Throws NonFiniteState for non-finite entries in `x`, ModelDomainError for
/// non-finite device outputs.
StampResult eval_stamps(const SystemLayout& layout, const Eigen::VectorXd& x, double tau, double t);

/// Diode and MOSFET scalar models, exposed for tests.
struct DiodeEval {
    double current;
    double conductance;
};
DiodeEval diode_current(double v, double saturation_current, double thermal_voltage);

struct MosfetEval {
    double id;   // drain-to-source current
    double gm;   // d id / d vgs
    double gds;  // d id / d vds
};
/// Level-1 square law for vds >= 0.
MosfetEval mosfet_forward(double vgs, double vds, double k, double vt, double lambda);

}  // namespace mrsim
