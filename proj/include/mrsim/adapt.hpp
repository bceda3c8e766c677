#pragma once

// Grid adaptation on periodic spline waveforms. Coarsening uses trial knot
// removals, refinement compares the spline against a local high-order
// interpolant of its own knot values.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mrsim/spline.hpp"

namespace mrsim {

struct AdaptOptions {
    double tol_refine = 1e-3;   // relative to the column max-norm
    double tol_coarsen = 1e-4;
    int min_knots = 0;          // 0 means degree + 1
    int max_knots = 1 << 16;
    int max_passes = 30;
    double abs_floor = 1e-9;    // smallest column scale

    /// Throws InvalidConfig.
    void validate(int degree) const;
};

struct DetailProfile {
    std::vector<double> removal_errors;         // per knot
    std::vector<double> refinement_indicators;  // per span [t_k, t_{k+1}]
};

/// Per-column max-norm, floored at `abs_floor`.
Eigen::VectorXd column_scales(const SplineWaveform& wf, double abs_floor);

/// Errors are divided column-wise by `scales` when given, else reported in
/// signal units.
DetailProfile detail_profile(const SplineWaveform& wf, const Eigen::VectorXd* scales = nullptr);

/// Scaled removal error of knot k.
double removal_error(const SplineWaveform& wf, int k, const Eigen::VectorXd& scales);

/// Scaled interpolation residual at the midpoint of span k, and the residual
/// vector itself (signal units).
double refinement_indicator(const SplineWaveform& wf, int k, const Eigen::VectorXd& scales,
                            Eigen::VectorXd* residual = nullptr);

struct AdaptReport {
    int knots_before = 0;
    int knots_after = 0;
    int inserted = 0;
    int removed = 0;
    int passes = 0;
    bool bound_hit = false;

    [[nodiscard]] std::string key_values() const;
};

struct AdaptResult {
    PeriodicSplineBasis basis;
    SplineWaveform waveform;
    AdaptReport report;
};

AdaptResult adapt_grid(const SplineWaveform& wf, const AdaptOptions& opts);

/// Exact for nested targets, otherwise L2 projection; throws PeriodMismatch.
SplineWaveform transfer_waveform(const SplineWaveform& wf, const PeriodicSplineBasis& target);

/// Union of knot sets (merging points closer than 1e-12 P).
std::vector<double> merge_knots(const std::vector<std::vector<double>>& grids, double period);

}  // namespace mrsim
