#pragma once

// Periodic B-spline spaces on (0, P] over arbitrary simple knot grids.
//
// With knots t_0 < ... < t_{n-1} the extended sequence is u_j = t_{j mod n}
// + P floor(j / n). Basis function j is the periodized B-spline on
// u_{j-s}, ..., u_{j-s+d+1} with s = ceil((d + 1) / 2), so for odd degree it
// is centered at t_j. The space has dimension n.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <functional>
#include <iosfwd>
#include <vector>

namespace mrsim {

inline constexpr int kMaxDegree = 5;

class PeriodicSplineBasis {
public:
    struct Active {
        int first = 0;  // basis index of values[0]; the others follow mod n
        std::array<double, kMaxDegree + 1> values{};
        std::array<double, kMaxDegree + 1> derivs{};
    };

    PeriodicSplineBasis() = default;
    /// Throws TooFewKnots, NonIncreasingKnots, KnotOutOfDomain.
    PeriodicSplineBasis(std::vector<double> knots, int degree, double period);

    static PeriodicSplineBasis uniform(int n, int degree, double period);

    [[nodiscard]] int size() const noexcept { return static_cast<int>(knots_.size()); }
    [[nodiscard]] int degree() const noexcept { return degree_; }
    [[nodiscard]] double period() const noexcept { return period_; }
    [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }
    [[nodiscard]] int shift() const noexcept { return (degree_ + 2) / 2; }

    /// Extended knot u_j for any integer j.
    [[nodiscard]] double knot(long j) const;
    /// Basis index for any integer j.
    [[nodiscard]] int index(long j) const;
    /// Extended span s with u_s <= t < u_{s+1}.
    [[nodiscard]] long span(double t) const;

    [[nodiscard]] Active eval_active(double t) const;
    /// Evaluation inside a known extended span; t may sit on either end of it.
    [[nodiscard]] Active eval_in_span(long s, double t) const;

    friend bool operator==(const PeriodicSplineBasis& a, const PeriodicSplineBasis& b) {
        return a.degree_ == b.degree_ && a.period_ == b.period_ && a.knots_ == b.knots_;
    }

private:
    std::vector<double> knots_;
    int degree_ = 3;
    double period_ = 1.0;
};

PeriodicSplineBasis build_basis(std::vector<double> knots, int degree, double period);

inline PeriodicSplineBasis::Active eval_active(const PeriodicSplineBasis& basis, double t) {
    return basis.eval_active(t);
}

/// x(t) = sum_k coeffs.row(k) phi_k(t); one column per unknown.
struct SplineWaveform {
    PeriodicSplineBasis basis;
    Eigen::MatrixXd coeffs;

    [[nodiscard]] int columns() const noexcept { return static_cast<int>(coeffs.cols()); }
};

Eigen::VectorXd eval_waveform(const SplineWaveform& wf, double t);
Eigen::VectorXd eval_waveform_derivative(const SplineWaveform& wf, double t);

/// Exact integral over [a, b] with 0 <= b - a <= P; throws InvalidInterval.
Eigen::VectorXd integrate_waveform(const SplineWaveform& wf, double a, double b);

/// Sorted break points of [a, b] at every knot of the given bases.
std::vector<double> break_points(double a, double b, std::initializer_list<const PeriodicSplineBasis*> bases);

/// (index, integral over [a, b]) for every basis function touching [a, b].
std::vector<std::pair<int, double>> integrate_basis(const PeriodicSplineBasis& basis, double a, double b);

struct KnotInsertion {
    PeriodicSplineBasis basis;
    Eigen::SparseMatrix<double> prolongation;  // (n + 1) x n: new = P * old
};

/// Boehm insertion; throws DuplicateKnot or KnotOutOfDomain.
KnotInsertion insert_knot(const PeriodicSplineBasis& basis, double t_new);

struct KnotRemoval {
    PeriodicSplineBasis basis;
    Eigen::MatrixXd coeffs;
    double local_error = 0.0;              // max over columns
    Eigen::VectorXd column_errors;         // per column
};

/// Removes knot k, refitting the d + 1 affected coarse coefficients by local
/// L2 projection; throws MinimalGrid when n - 1 < d + 1.
KnotRemoval remove_knot(const PeriodicSplineBasis& basis, int k, const SplineWaveform& wf);

/// Exact Gram matrix of the basis over one period (symmetric, cyclic banded).
Eigen::SparseMatrix<double> gram_matrix(const PeriodicSplineBasis& basis);

/// L2 projection of a P-periodic function with `columns` components, using
/// `points` Gauss points per knot span.
SplineWaveform project_function(const PeriodicSplineBasis& basis, int columns,
                                const std::function<Eigen::VectorXd(double)>& f, int points = 8);

/// Writes "index,knot" lines with a header.
void write_grid_csv(std::ostream& out, const PeriodicSplineBasis& basis);

}  // namespace mrsim
