#include "mrsim/adapt.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "mrsim/error.hpp"
#include "mrsim/quadrature.hpp"

namespace mrsim {

void AdaptOptions::validate(int degree) const {
    if (!(tol_coarsen >= 0.0) || !(tol_refine > tol_coarsen)) {
        throw Error(ErrorCode::InvalidConfig, "adapt tolerances need 0 <= tol_coarsen < tol_refine");
    }
    if (min_knots != 0 && min_knots < degree + 1) {
        throw Error(ErrorCode::InvalidConfig, "min_knots must be at least degree + 1");
    }
    if (max_knots < std::max(min_knots, degree + 1)) throw Error(ErrorCode::InvalidConfig, "max_knots too small");
    if (max_passes < 1) throw Error(ErrorCode::InvalidConfig, "max_passes must be positive");
    if (!(abs_floor > 0.0)) throw Error(ErrorCode::InvalidConfig, "abs_floor must be positive");
}

Eigen::VectorXd column_scales(const SplineWaveform& wf, double abs_floor) {
    Eigen::VectorXd s(wf.columns());
    for (int j = 0; j < wf.columns(); ++j) {
        s[j] = std::max(wf.coeffs.rows() > 0 ? wf.coeffs.col(j).cwiseAbs().maxCoeff() : 0.0, abs_floor);
    }
    return s;
}

double removal_error(const SplineWaveform& wf, int k, const Eigen::VectorXd& scales) {
    const auto rem = remove_knot(wf.basis, k, wf);
    return rem.column_errors.cwiseQuotient(scales).maxCoeff();
}

double refinement_indicator(const SplineWaveform& wf, int k, const Eigen::VectorXd& scales,
                            Eigen::VectorXd* residual) {
    const auto& b = wf.basis;
    const int d = b.degree();
    const double mid = 0.5 * (b.knot(k) + b.knot(k + 1));
    // Interpolant of degree 2 nn + 1 through the spline values at the
    // 2 (nn + 1) nearest knots, nn = d if its Lebesgue constant at the
    // midpoint stays small; strongly graded grids fall back to narrower
    // stencils, down to the chord.
    constexpr double kMaxLebesgue = 3.0;
    std::vector<double> weights;
    int nn = d;
    for (; nn >= 0; --nn) {
        weights.clear();
        double lebesgue = 0.0;
        for (long i = k - nn; i <= k + nn + 1; ++i) {
            const double ui = b.knot(i);
            double li = 1.0;
            for (long j = k - nn; j <= k + nn + 1; ++j) {
                if (j != i) li *= (mid - b.knot(j)) / (ui - b.knot(j));
            }
            weights.push_back(li);
            lebesgue += std::abs(li);
        }
        if (lebesgue <= kMaxLebesgue) break;  // the chord always passes
    }
    Eigen::VectorXd p = Eigen::VectorXd::Zero(wf.columns());
    for (long i = k - nn; i <= k + nn + 1; ++i) p += weights[i - (k - nn)] * eval_waveform(wf, b.knot(i));
    Eigen::VectorXd r = p - eval_waveform(wf, mid);
    const double ind = r.cwiseAbs().cwiseQuotient(scales).maxCoeff();
    if (residual) *residual = std::move(r);
    return ind;
}

DetailProfile detail_profile(const SplineWaveform& wf, const Eigen::VectorXd* scales) {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(wf.columns());
    const Eigen::VectorXd& s = scales ? *scales : ones;
    const int n = wf.basis.size();
    DetailProfile p;
    p.removal_errors.resize(n, 0.0);
    p.refinement_indicators.resize(n, 0.0);
    for (int k = 0; k < n; ++k) {
        p.refinement_indicators[k] = refinement_indicator(wf, k, s);
        p.removal_errors[k] = n - 1 >= wf.basis.degree() + 1 ? removal_error(wf, k, s) : 0.0;
    }
    return p;
}

std::string AdaptReport::key_values() const {
    std::ostringstream out;
    out << "knots_before=" << knots_before << '\n'
        << "knots_after=" << knots_after << '\n'
        << "inserted=" << inserted << '\n'
        << "removed=" << removed << '\n'
        << "passes=" << passes << '\n'
        << "bound_hit=" << (bound_hit ? 1 : 0) << '\n';
    return out.str();
}

namespace {

// Spans near a removed knot (now between coarse knots k - 1 and k) whose
// refinement indicator exceeds the tolerance.
bool creates_refinable_span(const SplineWaveform& wf, int k, const Eigen::VectorXd& scales, double tol) {
    const int n = wf.basis.size();
    const int reach = 2 * wf.basis.degree() + 2;
    if (2 * reach + 1 >= n) {
        for (int j = 0; j < n; ++j)
            if (refinement_indicator(wf, j, scales) > tol) return true;
        return false;
    }
    for (int off = -reach; off <= reach; ++off) {
        if (refinement_indicator(wf, wf.basis.index(k + off), scales) > tol) return true;
    }
    return false;
}

// Greedy smallest-first removal; returns whether anything was removed.
bool coarsen(SplineWaveform& cur, const Eigen::VectorXd& scales, const AdaptOptions& opts, int min_knots,
             AdaptReport& report) {
    const int d = cur.basis.degree();
    int n = cur.basis.size();
    if (n <= d + 1) return false;
    std::vector<double> errs(n);
    for (int k = 0; k < n; ++k) errs[k] = removal_error(cur, k, scales);
    bool changed = false;
    while (true) {
        auto it = std::min_element(errs.begin(), errs.end());
        if (it == errs.end() || !(*it < opts.tol_coarsen)) break;
        if (n - 1 < min_knots) {
            report.bound_hit = true;
            break;
        }
        const int k = static_cast<int>(it - errs.begin());
        auto rem = remove_knot(cur.basis, k, cur);
        SplineWaveform trial{std::move(rem.basis), std::move(rem.coeffs)};
        // Keep knots whose removal would leave a span due for refinement;
        // otherwise the next solve can undo the refinement and the grid cycles.
        if (creates_refinable_span(trial, k, scales, opts.tol_refine)) {
            *it = std::numeric_limits<double>::infinity();
            continue;
        }
        cur = std::move(trial);
        errs.erase(errs.begin() + k);
        --n;
        ++report.removed;
        changed = true;
        if (n <= d + 1) {
            std::fill(errs.begin(), errs.end(), std::numeric_limits<double>::infinity());
            continue;
        }
        const int reach = d + 2;
        if (2 * reach + 1 >= n) {
            for (int j = 0; j < n; ++j) errs[j] = removal_error(cur, j, scales);
        } else {
            for (int off = -reach; off <= reach - 1; ++off) {
                const int j = cur.basis.index(k + off);
                errs[j] = removal_error(cur, j, scales);
            }
        }
    }
    return changed;
}

bool refine(SplineWaveform& cur, const Eigen::VectorXd& scales, const AdaptOptions& opts, AdaptReport& report) {
    const int n = cur.basis.size();
    struct Candidate {
        double indicator;
        double mid;
        Eigen::VectorXd target;
    };
    std::vector<Candidate> cands;
    for (int k = 0; k < n; ++k) {
        Eigen::VectorXd r;
        const double ind = refinement_indicator(cur, k, scales, &r);
        if (ind > opts.tol_refine) {
            double mid = 0.5 * (cur.basis.knot(k) + cur.basis.knot(k + 1));
            Eigen::VectorXd target = eval_waveform(cur, mid) + r;
            if (mid > cur.basis.period()) mid -= cur.basis.period();
            cands.push_back({ind, mid, std::move(target)});
        }
    }
    if (cands.empty()) return false;
    const int room = opts.max_knots - n;
    if (static_cast<int>(cands.size()) > room) {
        report.bound_hit = true;
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) { return a.indicator > b.indicator; });
        cands.resize(std::max(room, 0));
        if (cands.empty()) return false;
    }
    for (const auto& c : cands) {
        auto ins = insert_knot(cur.basis, c.mid);
        cur = SplineWaveform{std::move(ins.basis), ins.prolongation * cur.coeffs};
    }
    // Move each new spline value onto the interpolant so the new knot carries
    // the detail it was inserted for.
    const int nn = cur.basis.size();
    for (const auto& c : cands) {
        const auto act = cur.basis.eval_active(c.mid);
        int best = 0;
        for (int r = 1; r <= cur.basis.degree(); ++r) {
            if (act.values[r] > act.values[best]) best = r;
        }
        const Eigen::VectorXd delta = c.target - eval_waveform(cur, c.mid);
        cur.coeffs.row((act.first + best) % nn) += (delta / act.values[best]).transpose();
    }
    report.inserted += static_cast<int>(cands.size());
    return true;
}

}  // namespace

AdaptResult adapt_grid(const SplineWaveform& wf, const AdaptOptions& opts) {
    const int d = wf.basis.degree();
    opts.validate(d);
    const int min_knots = std::max(opts.min_knots, d + 1);
    const Eigen::VectorXd scales = column_scales(wf, opts.abs_floor);

    AdaptResult res{wf.basis, wf, {}};
    res.report.knots_before = wf.basis.size();
    SplineWaveform cur = wf;
    bool settled = false;
    for (int pass = 1; pass <= opts.max_passes; ++pass) {
        res.report.passes = pass;
        const bool removed = coarsen(cur, scales, opts, min_knots, res.report);
        const bool inserted = refine(cur, scales, opts, res.report);
        if (!removed && !inserted) {
            settled = true;
            break;
        }
    }
    if (!settled) res.report.bound_hit = true;
    res.report.knots_after = cur.basis.size();
    res.basis = cur.basis;
    res.waveform = std::move(cur);
    return res;
}

std::vector<double> merge_knots(const std::vector<std::vector<double>>& grids, double period) {
    std::vector<double> all;
    for (const auto& g : grids) all.insert(all.end(), g.begin(), g.end());
    std::sort(all.begin(), all.end());
    std::vector<double> out;
    const double tol = 1e-12 * period;
    for (double t : all) {
        if (out.empty() || t - out.back() > tol) out.push_back(t);
    }
    // The top knot P and a knot near 0 are the same point on the circle.
    if (out.size() > 1 && out.front() + period - out.back() <= tol) out.erase(out.begin());
    return out;
}

SplineWaveform transfer_waveform(const SplineWaveform& wf, const PeriodicSplineBasis& target) {
    const double ps = wf.basis.period(), pt = target.period();
    if (std::abs(ps - pt) > 1e-12 * std::max(ps, pt)) {
        throw Error(ErrorCode::PeriodMismatch, "source and target periods differ");
    }
    if (wf.basis == target) return wf;

    const double tol = 1e-12 * pt;
    const auto& tk = target.knots();
    auto contains = [&](double t) {
        auto it = std::lower_bound(tk.begin(), tk.end(), t - tol);
        return it != tk.end() && std::abs(*it - t) <= tol;
    };
    const bool nested = target.degree() == wf.basis.degree() &&
                        std::all_of(wf.basis.knots().begin(), wf.basis.knots().end(), contains);
    if (nested) {
        SplineWaveform cur = wf;
        const auto& src = wf.basis.knots();
        for (double t : tk) {
            auto it = std::lower_bound(src.begin(), src.end(), t - tol);
            if (it != src.end() && std::abs(*it - t) <= tol) continue;
            auto ins = insert_knot(cur.basis, t);
            cur = SplineWaveform{std::move(ins.basis), ins.prolongation * cur.coeffs};
        }
        return SplineWaveform{target, std::move(cur.coeffs)};
    }

    const int n = target.size();
    const int dt = target.degree();
    const auto& rule = gauss_legendre((wf.basis.degree() + dt + 2) / 2);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, wf.columns());
    const double a = tk.front();
    const auto pts = break_points(a, a + pt, {&wf.basis, &target});
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        const double lo = pts[k], hi = pts[k + 1];
        const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
        const long s = target.span(mid);
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const double x = mid + half * rule.nodes[q];
            const auto act = target.eval_in_span(s, x);
            const Eigen::RowVectorXd v = eval_waveform(wf, x).transpose();
            for (int r = 0; r <= dt; ++r) {
                rhs.row((act.first + r) % n) += (half * rule.weights[q] * act.values[r]) * v;
            }
        }
    }
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(gram_matrix(target));
    return SplineWaveform{target, ldlt.solve(rhs)};
}

}  // namespace mrsim
