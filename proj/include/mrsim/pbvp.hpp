#pragma once

// Periodic boundary value problem on one fast period. Unknowns are the spline
// coefficients of every subcircuit, ordered offset_i + k * m_i + j. Row
// (i, l, j) integrates component j of the subcircuit equations over test
// interval l; rows of connection-current components carry the coupling
// conditions instead.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <string>
#include <vector>

#include "mrsim/mna.hpp"
#include "mrsim/netlist.hpp"
#include "mrsim/spline.hpp"

namespace mrsim {

/// Interval l is [splits[l], splits[l + 1]] and contains knot l.
struct TestIntervals {
    std::vector<double> splits;  // n + 1 points, splits[n] = splits[0] + P

    [[nodiscard]] int size() const noexcept { return static_cast<int>(splits.size()) - 1; }
    [[nodiscard]] double lo(int l) const { return splits[l]; }
    [[nodiscard]] double hi(int l) const { return splits[l + 1]; }
};

/// Split points t_l + f (t_{l+1} - t_l); f < 0 selects the default fraction.
TestIntervals choose_test_intervals(const PeriodicSplineBasis& basis, double fraction = -1.0);

/// Default split fraction for a degree.
double default_split_fraction(int degree);

/// Multistep history: the residual gains coeff * integral of q(waveforms[i]).
struct HistoryTerm {
    double coeff = 0.0;
    std::vector<SplineWaveform> waveforms;  // one per subcircuit
};

struct RotheContext {
    int step = 0;
    double tau = 0.0;
    double omega = 0.0;
    double kappa = 1.0;  // coefficient of d/dt q, omega P / (2 pi)
    double c0 = 0.0;     // alpha_0 / dtau, multiplies q of the unknown waveform
    std::vector<double> alphas;
    std::vector<double> steps;
    std::vector<HistoryTerm> history;
    double source_scale = 1.0;
};

struct SparseSystem {
    Eigen::VectorXd residual;
    Eigen::SparseMatrix<double, Eigen::RowMajor> jacobian;
    long nnz = 0;
    int dimension = 0;
};

class PeriodicProblem {
public:
    /// `quad_points` per half interval; 0 selects ceil((d + 1) / 2).
    PeriodicProblem(const PartitionedCircuit& pc, std::vector<PeriodicSplineBasis> bases, int quad_points = 0,
                    double split_fraction = -1.0);

    [[nodiscard]] int dimension() const noexcept { return dimension_; }
    [[nodiscard]] int subcircuit_count() const noexcept { return static_cast<int>(layouts_.size()); }
    [[nodiscard]] const SystemLayout& layout(int i) const { return layouts_.at(i); }
    [[nodiscard]] const PeriodicSplineBasis& basis(int i) const { return bases_.at(i); }
    [[nodiscard]] const TestIntervals& intervals(int i) const { return intervals_.at(i); }
    [[nodiscard]] int offset(int i) const { return offsets_.at(i); }
    [[nodiscard]] const std::vector<PeriodicSplineBasis>& bases() const noexcept { return bases_; }
    [[nodiscard]] const PartitionedCircuit& circuit() const noexcept { return *pc_; }

    [[nodiscard]] Eigen::VectorXd pack(const std::vector<SplineWaveform>& wfs) const;
    [[nodiscard]] std::vector<SplineWaveform> unpack(const Eigen::VectorXd& x) const;

    /// Installs the Rothe context and precomputes its history integrals.
    void set_context(const RotheContext& ctx);
    [[nodiscard]] const RotheContext& context() const noexcept { return ctx_; }

    [[nodiscard]] Eigen::VectorXd residual(const Eigen::VectorXd& x) const;
    [[nodiscard]] SparseSystem assemble(const Eigen::VectorXd& x) const;

    /// 1 / |test interval| of every row.
    [[nodiscard]] const Eigen::VectorXd& row_scale() const noexcept { return row_scale_; }

    /// Rows of the coupling conditions of one connection: voltage rows on the
    /// grid of sub_k, current rows on the grid of sub_l.
    [[nodiscard]] std::vector<int> connection_rows(int connection, bool voltage) const;

private:
    void assemble_impl(const Eigen::VectorXd& x, Eigen::VectorXd& r,
                       std::vector<Eigen::Triplet<double>>* trips) const;

    const PartitionedCircuit* pc_;
    std::vector<PeriodicSplineBasis> bases_;
    std::vector<SystemLayout> layouts_;
    std::vector<TestIntervals> intervals_;
    std::vector<int> offsets_;
    std::vector<std::vector<char>> coupling_row_;  // per subcircuit, per component
    int dimension_ = 0;
    int quad_points_ = 0;
    Eigen::SparseMatrix<double, Eigen::RowMajor> coupling_;
    Eigen::VectorXd row_scale_;
    RotheContext ctx_;
    Eigen::VectorXd history_;
};

Eigen::VectorXd assemble_residual(const PartitionedCircuit& pc, const std::vector<SplineWaveform>& waveforms,
                                  const RotheContext& rothe);
SparseSystem assemble_jacobian(const PartitionedCircuit& pc, const std::vector<SplineWaveform>& waveforms,
                               const RotheContext& rothe);

/// Sparse LU (KLU); throws SingularMatrix on a structural or
/// numerically zero pivot (below 1e-14 after row scaling).
Eigen::VectorXd sparse_solve(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& b);
Eigen::VectorXd sparse_solve(const SparseSystem& system, const Eigen::VectorXd& rhs);

struct NewtonOptions {
    double abstol = 1e-9;
    double reltol = 1e-10;
    int max_iter = 50;
    double damping = 0.5;
    double min_step = 1.0 / 1024.0;

    void validate() const;
};

struct NewtonReport {
    int iterations = 0;
    bool converged = false;
    double initial_norm = 0.0;
    double final_norm = 0.0;
    std::vector<double> norms;  // scaled max-norm after each iterate, starting with the initial guess
    std::vector<double> step_norms;
    double assembly_time = 0.0;
    double solve_time = 0.0;
    int dimension = 0;
    long nnz = 0;

    [[nodiscard]] std::string key_values() const;
};

struct NewtonResult {
    Eigen::VectorXd x;
    NewtonReport report;
};

/// Damped Newton on the scaled residual norm. Throws NoConvergence (carrying
/// the report in `last_report`) or SingularMatrix.
NewtonResult newton_solve(const PeriodicProblem& problem, Eigen::VectorXd x0, const NewtonOptions& opts,
                          NewtonReport* last_report = nullptr);

std::pair<std::vector<SplineWaveform>, NewtonReport> newton_solve(const PartitionedCircuit& pc,
                                                                  const std::vector<SplineWaveform>& initial,
                                                                  const RotheContext& rothe,
                                                                  const NewtonOptions& opts);

}  // namespace mrsim
