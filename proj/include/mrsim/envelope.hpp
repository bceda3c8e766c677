#pragma once

// Slow-time marching: BDF1/BDF2 in tau turns the multirate problem into a
// sequence of periodic problems, one per envelope step.

#include <iosfwd>
#include <string>
#include <vector>

#include "mrsim/adapt.hpp"
#include "mrsim/pbvp.hpp"

namespace mrsim {

enum class Multistep { Bdf1, Bdf2 };

/// Accepted solution at one slow time, most recent first in histories.
struct HistoryEntry {
    double tau = 0.0;
    std::vector<SplineWaveform> waveforms;
};

/// kappa = omega P / (2 pi). Order drops to BDF1 when only one entry exists;
/// throws InsufficientHistory on an empty history.
RotheContext rothe_terms(const std::vector<HistoryEntry>& history, double tau_k, double dtau, Multistep method,
                         double omega, double period);

/// Context for the steady state at slow time tau (no tau derivative).
RotheContext steady_context(double tau, double omega, double period);

/// Bundle of per-subcircuit grids with their adaptation.
struct GridAdaptation {
    std::vector<SplineWaveform> waveforms;
    std::vector<AdaptReport> reports;
    bool material = false;  // some grid changed by more than the threshold
    bool changed = false;
};

/// `shared` adapts one common grid on all columns of every subcircuit.
GridAdaptation adapt_waveforms(const std::vector<SplineWaveform>& wfs, const AdaptOptions& opts, bool shared,
                               double material_fraction = 0.1);

struct EnvelopeOptions {
    Multistep method = Multistep::Bdf2;
    double dtau_initial = 0.0;  // 0: tau_end / 100
    double dtau_min = 0.0;      // 0: 1e-9 tau_end
    double dtau_max = 0.0;      // 0: tau_end / 4
    double envtol = 1e-3;       // <= 0 disables error control
    double safety = 0.9;
    NewtonOptions newton;
    bool adapt = false;
    bool shared_grid = false;
    AdaptOptions adapt_opts;
    double regrid_fraction = 0.1;
    int max_steps = 100000;
    int pss_adapt_cycles = 6;
    int quad_points = 0;
};

struct StepRecord {
    int step = 0;
    double tau = 0.0;
    double dtau = 0.0;
    double omega = 0.0;
    int newton_iters = 0;
    int total_unknowns = 0;
    long total_nnz = 0;
    std::vector<int> knots;
    double error_estimate = 0.0;
    double assembly_time = 0.0;
    double solve_time = 0.0;
    bool regridded = false;
};

struct EnvelopeRun {
    std::vector<double> taus;
    std::vector<double> omegas;
    std::vector<std::vector<SplineWaveform>> waveforms;
    std::vector<StepRecord> records;  // one per accepted entry, records[0] is tau = 0
    std::vector<PeriodicSplineBasis> bases;  // grids for the next step
    int rejected = 0;
    double next_dtau = 0.0;

    [[nodiscard]] std::size_t size() const noexcept { return taus.size(); }
};

struct InitialSolve {
    std::vector<SplineWaveform> waveforms;
    NewtonReport report;
    int homotopy_steps = 0;
};

/// Periodic steady state at tau = 0 from a zero start, with a 4-step source
/// ramp when plain Newton fails.
InitialSolve solve_initial_waveform(const PartitionedCircuit& pc, const std::vector<PeriodicSplineBasis>& bases,
                                    const EnvelopeOptions& opts);

/// Steady state followed by adapt/re-solve cycles until the grids settle.
InitialSolve solve_adaptive_steady_state(const PartitionedCircuit& pc, std::vector<PeriodicSplineBasis> bases,
                                         const EnvelopeOptions& opts, std::vector<AdaptReport>* reports = nullptr);

struct StepOutcome {
    bool accepted = false;
    double dtau_used = 0.0;
    double dtau_next = 0.0;
    double error_estimate = 0.0;
    std::string reason;
};

/// One attempted step of size dtau from the last accepted entry of `run`.
/// Rejections leave `run` unchanged apart from the rejection count.
StepOutcome envelope_step(const PartitionedCircuit& pc, EnvelopeRun& run, double dtau, const EnvelopeOptions& opts);

/// Starts a run from given tau = 0 waveforms.
EnvelopeRun start_run(const PartitionedCircuit& pc, std::vector<SplineWaveform> initial, const NewtonReport& report);

EnvelopeRun run_envelope(const PartitionedCircuit& pc, const std::vector<PeriodicSplineBasis>& bases, double tau_end,
                         const EnvelopeOptions& opts);

/// Marches an existing run to tau_end; throws StepSizeUnderflow.
void continue_envelope(const PartitionedCircuit& pc, EnvelopeRun& run, double tau_end, const EnvelopeOptions& opts);

struct CharacteristicSample {
    double tau = 0.0;
    double theta = 0.0;  // fast time in [0, P)
    std::vector<Eigen::VectorXd> state;  // per subcircuit
};

/// x(tau_k) = X_k(theta_k), theta' = omega P / (2 pi), trapezoidal in tau.
std::vector<CharacteristicSample> reconstruct_characteristic(const EnvelopeRun& run, double t0, double period);

/// Header: step,tau,dtau,omega,newton_iters,total_unknowns,total_nnz,error_estimate,knots_<sub>...
void write_run_csv(std::ostream& out, const EnvelopeRun& run, const std::vector<std::string>& subcircuit_names);

/// Mean and first-harmonic cosine/sine moments of q(X(t)), stacked per subcircuit.
Eigen::VectorXd charge_moments(const PeriodicProblem& problem, const std::vector<SplineWaveform>& wfs);

}  // namespace mrsim
