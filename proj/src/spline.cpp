#include "mrsim/spline.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "mrsim/error.hpp"
#include "mrsim/quadrature.hpp"

namespace mrsim {

namespace {

long floor_div(long a, long b) {
    long q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

}  // namespace

PeriodicSplineBasis::PeriodicSplineBasis(std::vector<double> knots, int degree, double period)
    : knots_(std::move(knots)), degree_(degree), period_(period) {
    if (degree < 1 || degree > kMaxDegree) {
        throw Error(ErrorCode::InvalidParameter, "spline degree must be in 1.." + std::to_string(kMaxDegree));
    }
    if (!(period > 0.0)) throw Error(ErrorCode::InvalidParameter, "period must be positive");
    for (std::size_t i = 1; i < knots_.size(); ++i) {
        if (!(knots_[i] > knots_[i - 1])) {
            throw Error(ErrorCode::NonIncreasingKnots, "knots must be strictly increasing");
        }
    }
    for (double t : knots_) {
        if (!(t > 0.0 && t <= period)) throw Error(ErrorCode::KnotOutOfDomain, "knot outside (0, P]");
    }
    if (static_cast<int>(knots_.size()) < degree + 1) {
        throw Error(ErrorCode::TooFewKnots, "need at least degree + 1 knots, got " + std::to_string(knots_.size()));
    }
}

PeriodicSplineBasis PeriodicSplineBasis::uniform(int n, int degree, double period) {
    std::vector<double> knots(std::max(n, 0));
    for (int k = 0; k < n; ++k) knots[k] = period * (k + 1) / n;
    knots.back() = period;
    return PeriodicSplineBasis(std::move(knots), degree, period);
}

PeriodicSplineBasis build_basis(std::vector<double> knots, int degree, double period) {
    return PeriodicSplineBasis(std::move(knots), degree, period);
}

double PeriodicSplineBasis::knot(long j) const {
    const long n = size();
    const long q = floor_div(j, n);
    return knots_[static_cast<std::size_t>(j - q * n)] + static_cast<double>(q) * period_;
}

int PeriodicSplineBasis::index(long j) const {
    const long n = size();
    return static_cast<int>(j - floor_div(j, n) * n);
}

long PeriodicSplineBasis::span(double t) const {
    const double t0 = knots_.front();
    long q = static_cast<long>(std::floor((t - t0) / period_));
    double tw = t - static_cast<double>(q) * period_;
    if (tw < t0) {
        tw += period_;
        --q;
    } else if (tw >= t0 + period_) {
        tw -= period_;
        ++q;
    }
    auto it = std::upper_bound(knots_.begin(), knots_.end(), tw);
    const long r = std::max<long>(0, static_cast<long>(it - knots_.begin()) - 1);
    return r + q * size();
}

PeriodicSplineBasis::Active PeriodicSplineBasis::eval_active(double t) const {
    return eval_in_span(span(t), t);
}

PeriodicSplineBasis::Active PeriodicSplineBasis::eval_in_span(long s, double t) const {
    const int d = degree_;
    std::array<double, kMaxDegree + 2> left{}, right{}, n{};
    std::array<double, kMaxDegree + 1> lower{};
    n[0] = 1.0;
    for (int j = 1; j <= d; ++j) {
        if (j == d) std::copy(n.begin(), n.begin() + d, lower.begin());
        left[j] = t - knot(s + 1 - j);
        right[j] = knot(s + j) - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    Active a;
    a.first = index(s - d + shift());
    for (int r = 0; r <= d; ++r) {
        a.values[r] = n[r];
        // Standard index i = s - d + r; degree d-1 values lower[r-1] = B_{i,d-1}, lower[r] = B_{i+1,d-1}.
        const long i = s - d + r;
        double dv = 0.0;
        if (r >= 1) dv += lower[r - 1] / (knot(i + d) - knot(i));
        if (r <= d - 1) dv -= lower[r] / (knot(i + d + 1) - knot(i + 1));
        a.derivs[r] = d * dv;
    }
    return a;
}

Eigen::VectorXd eval_waveform(const SplineWaveform& wf, double t) {
    const auto a = wf.basis.eval_active(t);
    const int n = wf.basis.size();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(wf.coeffs.cols());
    for (int r = 0; r <= wf.basis.degree(); ++r) {
        x += a.values[r] * wf.coeffs.row((a.first + r) % n).transpose();
    }
    return x;
}

Eigen::VectorXd eval_waveform_derivative(const SplineWaveform& wf, double t) {
    const auto a = wf.basis.eval_active(t);
    const int n = wf.basis.size();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(wf.coeffs.cols());
    for (int r = 0; r <= wf.basis.degree(); ++r) {
        x += a.derivs[r] * wf.coeffs.row((a.first + r) % n).transpose();
    }
    return x;
}

std::vector<double> break_points(double a, double b, std::initializer_list<const PeriodicSplineBasis*> bases) {
    std::vector<double> pts{a, b};
    for (const auto* basis : bases) {
        for (long s = basis->span(a) + 1;; ++s) {
            const double u = basis->knot(s);
            if (u >= b) break;
            if (u > a) pts.push_back(u);
        }
    }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

namespace {

void check_interval(double a, double b, double period) {
    const double len = b - a;
    if (!(len >= 0.0) || len > period * (1.0 + 1e-12)) {
        throw Error(ErrorCode::InvalidInterval, "integration interval must satisfy 0 <= b - a <= P");
    }
}

}  // namespace

Eigen::VectorXd integrate_waveform(const SplineWaveform& wf, double a, double b) {
    check_interval(a, b, wf.basis.period());
    const auto& rule = gauss_legendre((wf.basis.degree() + 2) / 2);
    const int n = wf.basis.size();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(wf.coeffs.cols());
    const auto pts = break_points(a, b, {&wf.basis});
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        const double lo = pts[k], hi = pts[k + 1];
        const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
        const long s = wf.basis.span(mid);
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const auto act = wf.basis.eval_in_span(s, mid + half * rule.nodes[q]);
            const double w = half * rule.weights[q];
            for (int r = 0; r <= wf.basis.degree(); ++r) {
                sum += (w * act.values[r]) * wf.coeffs.row((act.first + r) % n).transpose();
            }
        }
    }
    return sum;
}

std::vector<std::pair<int, double>> integrate_basis(const PeriodicSplineBasis& basis, double a, double b) {
    check_interval(a, b, basis.period());
    const auto& rule = gauss_legendre((basis.degree() + 2) / 2);
    const int n = basis.size();
    std::vector<double> acc(n, 0.0);
    std::vector<bool> touched(n, false);
    const auto pts = break_points(a, b, {&basis});
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        const double lo = pts[k], hi = pts[k + 1];
        const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
        const long s = basis.span(mid);
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const auto act = basis.eval_in_span(s, mid + half * rule.nodes[q]);
            for (int r = 0; r <= basis.degree(); ++r) {
                const int j = (act.first + r) % n;
                acc[j] += half * rule.weights[q] * act.values[r];
                touched[j] = true;
            }
        }
    }
    std::vector<std::pair<int, double>> out;
    for (int j = 0; j < n; ++j) {
        if (touched[j]) out.emplace_back(j, acc[j]);
    }
    return out;
}

KnotInsertion insert_knot(const PeriodicSplineBasis& basis, double t_new) {
    const double period = basis.period();
    if (!(t_new > 0.0 && t_new <= period)) throw Error(ErrorCode::KnotOutOfDomain, "inserted knot outside (0, P]");
    const auto& old = basis.knots();
    const int n = basis.size();
    const int d = basis.degree();
    const int sh = basis.shift();
    const double tol = 1e-14 * period;
    for (double t : old) {
        if (std::abs(t - t_new) <= tol) throw Error(ErrorCode::DuplicateKnot, "knot already present");
    }
    const long p = std::lower_bound(old.begin(), old.end(), t_new) - old.begin();
    std::vector<double> knots = old;
    knots.insert(knots.begin() + p, t_new);
    KnotInsertion out{PeriodicSplineBasis(std::move(knots), d, period), {}};

    auto new_index_of_old_knot = [&](long a) {
        const long q = floor_div(a, n);
        const long r = a - q * n;
        return q * (n + 1) + (r < p ? r : r + 1);
    };
    auto wrap_new = [&](long j) { return static_cast<int>(j - floor_div(j, n + 1) * (n + 1)); };

    std::vector<Eigen::Triplet<double>> trips;
    for (int j = 0; j < n; ++j) {
        const long a = j - sh;
        const double ua = basis.knot(a), ub = basis.knot(a + d + 1);
        const double img = t_new + std::ceil((ua - t_new) / period) * period;
        const long left = new_index_of_old_knot(a);
        if (img > ua && img < ub) {
            const double w1 = std::clamp((img - ua) / (basis.knot(a + d) - ua), 0.0, 1.0);
            const double w2 = std::clamp((ub - img) / (ub - basis.knot(a + 1)), 0.0, 1.0);
            trips.emplace_back(wrap_new(left + sh), j, w1);
            trips.emplace_back(wrap_new(left + 1 + sh), j, w2);
        } else {
            trips.emplace_back(wrap_new(left + sh), j, 1.0);
        }
    }
    out.prolongation.resize(n + 1, n);
    out.prolongation.setFromTriplets(trips.begin(), trips.end());
    return out;
}

KnotRemoval remove_knot(const PeriodicSplineBasis& basis, int r, const SplineWaveform& wf) {
    const int n = basis.size();
    const int d = basis.degree();
    const int sh = basis.shift();
    if (r < 0 || r >= n) throw Error(ErrorCode::InvalidParameter, "knot index out of range");
    if (n - 1 < d + 1) throw Error(ErrorCode::MinimalGrid, "grid already has the minimal d + 1 knots");

    std::vector<double> knots = basis.knots();
    knots.erase(knots.begin() + r);
    PeriodicSplineBasis coarse(std::move(knots), d, basis.period());
    const int nc = n - 1;
    const int m = static_cast<int>(wf.coeffs.cols());

    auto mod = [](long a, long b) { return static_cast<int>(a - floor_div(a, b) * b); };
    std::vector<int> fine_aff;
    std::vector<int> coarse_pos(nc, -1);
    std::vector<int> coarse_aff;
    for (int j = 0; j < n; ++j) {
        if (mod(r - (j - sh), n) <= d + 1) fine_aff.push_back(j);
    }
    std::vector<bool> is_fine_aff(n, false);
    for (int j : fine_aff) is_fine_aff[j] = true;
    for (int i = 0; i < nc; ++i) {
        if (mod(r - 1 - (i - sh), nc) <= d) {
            coarse_pos[i] = static_cast<int>(coarse_aff.size());
            coarse_aff.push_back(i);
        }
    }
    const int na = static_cast<int>(coarse_aff.size());

    // Local L2 fit of the affected part over the fine spans it lives on.
    const long first_span = r - d - 1;
    const long num_spans = std::min<long>(2 * d + 2, n);
    const auto& rule = gauss_legendre(d + 1);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(na, na);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(na, m);
    Eigen::RowVectorXd fval(m);
    auto fine_affected_value = [&](const PeriodicSplineBasis::Active& act) {
        fval.setZero();
        for (int k = 0; k <= d; ++k) {
            const int j = (act.first + k) % n;
            if (is_fine_aff[j]) fval += act.values[k] * wf.coeffs.row(j);
        }
    };
    for (long s = first_span; s < first_span + num_spans; ++s) {
        const double lo = basis.knot(s), hi = basis.knot(s + 1);
        const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const double x = mid + half * rule.nodes[q];
            const double w = half * rule.weights[q];
            fine_affected_value(basis.eval_in_span(s, x));
            const auto cact = coarse.eval_active(x);
            for (int a = 0; a <= d; ++a) {
                const int pa = coarse_pos[(cact.first + a) % nc];
                if (pa < 0) continue;
                rhs.row(pa) += w * cact.values[a] * fval;
                for (int b = 0; b <= d; ++b) {
                    const int pb = coarse_pos[(cact.first + b) % nc];
                    if (pb >= 0) gram(pa, pb) += w * cact.values[a] * cact.values[b];
                }
            }
        }
    }
    const Eigen::MatrixXd fitted = gram.ldlt().solve(rhs);

    KnotRemoval out;
    out.coeffs.resize(nc, m);
    for (int i = 0; i < nc; ++i) {
        if (coarse_pos[i] >= 0) {
            out.coeffs.row(i) = fitted.row(coarse_pos[i]);
            continue;
        }
        const long a = i - sh;
        const long q = floor_div(a, nc);
        const long rr = a - q * nc;
        const long fine_start = q * n + (rr < r ? rr : rr + 1);
        out.coeffs.row(i) = wf.coeffs.row(mod(fine_start + sh, n));
    }

    out.column_errors = Eigen::VectorXd::Zero(m);
    for (long s = first_span; s < first_span + num_spans; ++s) {
        const double lo = basis.knot(s), hi = basis.knot(s + 1);
        for (int k = 0; k <= d + 1; ++k) {
            const double x = lo + (hi - lo) * k / (d + 1);
            fine_affected_value(basis.eval_in_span(s, x));
            const auto cact = coarse.eval_active(x);
            Eigen::RowVectorXd cval = Eigen::RowVectorXd::Zero(m);
            for (int a = 0; a <= d; ++a) {
                const int pa = coarse_pos[(cact.first + a) % nc];
                if (pa >= 0) cval += cact.values[a] * fitted.row(pa);
            }
            out.column_errors = out.column_errors.cwiseMax((fval - cval).cwiseAbs().transpose());
        }
    }
    out.local_error = m > 0 ? out.column_errors.maxCoeff() : 0.0;
    out.basis = std::move(coarse);
    return out;
}

Eigen::SparseMatrix<double> gram_matrix(const PeriodicSplineBasis& basis) {
    const int n = basis.size();
    const int d = basis.degree();
    const auto& rule = gauss_legendre(d + 1);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(n) * (d + 1) * (d + 1) * rule.nodes.size());
    for (long s = 0; s < n; ++s) {
        const double lo = basis.knot(s), hi = basis.knot(s + 1);
        const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const auto act = basis.eval_in_span(s, mid + half * rule.nodes[q]);
            const double w = half * rule.weights[q];
            for (int a = 0; a <= d; ++a) {
                for (int b = 0; b <= d; ++b) {
                    trips.emplace_back((act.first + a) % n, (act.first + b) % n, w * act.values[a] * act.values[b]);
                }
            }
        }
    }
    Eigen::SparseMatrix<double> g(n, n);
    g.setFromTriplets(trips.begin(), trips.end());
    return g;
}

SplineWaveform project_function(const PeriodicSplineBasis& basis, int columns,
                                const std::function<Eigen::VectorXd(double)>& f, int points) {
    const int n = basis.size();
    const int d = basis.degree();
    const auto& rule = gauss_legendre(points);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, columns);
    for (long s = 0; s < n; ++s) {
        const double lo = basis.knot(s), hi = basis.knot(s + 1);
        const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const double x = mid + half * rule.nodes[q];
            const auto act = basis.eval_in_span(s, x);
            const Eigen::VectorXd fx = f(x);
            for (int a = 0; a <= d; ++a) {
                rhs.row((act.first + a) % n) += (half * rule.weights[q] * act.values[a]) * fx.transpose();
            }
        }
    }
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(gram_matrix(basis));
    return SplineWaveform{basis, ldlt.solve(rhs)};
}

void write_grid_csv(std::ostream& out, const PeriodicSplineBasis& basis) {
    out << "index,knot\n";
    char buf[64];
    for (int i = 0; i < basis.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%d,%.17g\n", i, basis.knots()[i]);
        out << buf;
    }
}

}  // namespace mrsim
