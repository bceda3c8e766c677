#include "mrsim/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "mrsim/error.hpp"
#include "mrsim/quadrature.hpp"

namespace mrsim {

RotheContext rothe_terms(const std::vector<HistoryEntry>& history, double tau_k, double dtau, Multistep method,
                         double omega, double period) {
    if (history.empty()) throw Error(ErrorCode::InsufficientHistory, "multistep formula needs at least one entry");
    if (!(dtau > 0.0)) throw Error(ErrorCode::InvalidParameter, "step size must be positive");
    RotheContext ctx;
    ctx.tau = tau_k;
    ctx.omega = omega;
    ctx.kappa = omega * period / (2.0 * std::numbers::pi);
    ctx.steps.push_back(dtau);
    if (method == Multistep::Bdf1 || history.size() < 2) {
        ctx.alphas = {1.0, -1.0};
    } else {
        const double prev = history[0].tau - history[1].tau;
        if (!(prev > 0.0)) throw Error(ErrorCode::InvalidParameter, "history slow times must increase");
        ctx.steps.push_back(prev);
        const double rho = dtau / prev;
        ctx.alphas = {(1.0 + 2.0 * rho) / (1.0 + rho), -(1.0 + rho), rho * rho / (1.0 + rho)};
    }
    ctx.c0 = ctx.alphas[0] / dtau;
    for (std::size_t j = 1; j < ctx.alphas.size(); ++j) {
        ctx.history.push_back(HistoryTerm{ctx.alphas[j] / dtau, history[j - 1].waveforms});
    }
    return ctx;
}

RotheContext steady_context(double tau, double omega, double period) {
    RotheContext ctx;
    ctx.tau = tau;
    ctx.omega = omega;
    ctx.kappa = omega * period / (2.0 * std::numbers::pi);
    return ctx;
}

GridAdaptation adapt_waveforms(const std::vector<SplineWaveform>& wfs, const AdaptOptions& opts, bool shared,
                               double material_fraction) {
    GridAdaptation ga;
    auto is_material = [&](const AdaptReport& r) {
        return r.inserted + r.removed > material_fraction * r.knots_before;
    };
    if (shared && !wfs.empty()) {
        int cols = 0;
        for (const auto& w : wfs) {
            if (!(w.basis == wfs[0].basis)) throw Error(ErrorCode::InvalidParameter, "shared grid mode needs equal grids");
            cols += w.columns();
        }
        Eigen::MatrixXd all(wfs[0].basis.size(), cols);
        int c = 0;
        for (const auto& w : wfs) {
            all.middleCols(c, w.columns()) = w.coeffs;
            c += w.columns();
        }
        auto res = adapt_grid(SplineWaveform{wfs[0].basis, std::move(all)}, opts);
        c = 0;
        for (const auto& w : wfs) {
            ga.waveforms.push_back(SplineWaveform{res.basis, res.waveform.coeffs.middleCols(c, w.columns())});
            ga.reports.push_back(res.report);
            c += w.columns();
        }
        ga.changed = !(res.basis == wfs[0].basis);
        ga.material = is_material(res.report);
        return ga;
    }
    for (const auto& w : wfs) {
        auto res = adapt_grid(w, opts);
        ga.changed = ga.changed || !(res.basis == w.basis);
        ga.material = ga.material || is_material(res.report);
        ga.waveforms.push_back(std::move(res.waveform));
        ga.reports.push_back(res.report);
    }
    return ga;
}

namespace {

struct Solved {
    std::vector<SplineWaveform> waveforms;
    NewtonReport report;
};

std::vector<PeriodicSplineBasis> bases_of(const std::vector<SplineWaveform>& wfs) {
    std::vector<PeriodicSplineBasis> b;
    for (const auto& w : wfs) b.push_back(w.basis);
    return b;
}

Solved solve_with(const PartitionedCircuit& pc, const std::vector<PeriodicSplineBasis>& bases,
                  const RotheContext& ctx, const std::vector<SplineWaveform>& warm, const EnvelopeOptions& opts) {
    PeriodicProblem problem(pc, bases, opts.quad_points);
    problem.set_context(ctx);
    std::vector<SplineWaveform> start;
    for (std::size_t i = 0; i < bases.size(); ++i) start.push_back(transfer_waveform(warm[i], bases[i]));
    auto res = newton_solve(problem, problem.pack(start), opts.newton);
    return {problem.unpack(res.x), res.report};
}

std::vector<SplineWaveform> zero_waveforms(const PartitionedCircuit& pc, const std::vector<PeriodicSplineBasis>& bases) {
    PeriodicProblem problem(pc, bases);
    return problem.unpack(Eigen::VectorXd::Zero(problem.dimension()));
}

void accumulate_times(StepRecord& rec, const NewtonReport& r) {
    rec.newton_iters += r.iterations;
    rec.assembly_time += r.assembly_time;
    rec.solve_time += r.solve_time;
    rec.total_unknowns = r.dimension;
    if (r.nnz > 0) rec.total_nnz = r.nnz;
}

StepRecord make_record(const std::vector<SplineWaveform>& wfs, const NewtonReport& r) {
    StepRecord rec;
    accumulate_times(rec, r);
    int dim = 0;
    for (const auto& w : wfs) {
        rec.knots.push_back(w.basis.size());
        dim += w.basis.size() * w.columns();
    }
    rec.total_unknowns = dim;
    return rec;
}

}  // namespace

InitialSolve solve_initial_waveform(const PartitionedCircuit& pc, const std::vector<PeriodicSplineBasis>& bases,
                                    const EnvelopeOptions& opts) {
    RotheContext ctx = steady_context(0.0, pc.omega(0.0), pc.period);
    const auto zero = zero_waveforms(pc, bases);
    InitialSolve out;
    try {
        auto s = solve_with(pc, bases, ctx, zero, opts);
        out.waveforms = std::move(s.waveforms);
        out.report = s.report;
        return out;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoConvergence) throw;
    }
    // Source ramping from the zero solution of the unforced circuit.
    std::vector<SplineWaveform> cur = zero;
    NewtonReport total;
    for (int k = 1; k <= 4; ++k) {
        ctx.source_scale = 0.25 * k;
        auto s = solve_with(pc, bases, ctx, cur, opts);
        cur = std::move(s.waveforms);
        total.iterations += s.report.iterations;
        total.assembly_time += s.report.assembly_time;
        total.solve_time += s.report.solve_time;
        total.final_norm = s.report.final_norm;
        total.norms = s.report.norms;
        total.converged = s.report.converged;
        total.dimension = s.report.dimension;
        total.nnz = s.report.nnz;
    }
    out.waveforms = std::move(cur);
    out.report = total;
    out.homotopy_steps = 4;
    return out;
}

InitialSolve solve_adaptive_steady_state(const PartitionedCircuit& pc, std::vector<PeriodicSplineBasis> bases,
                                         const EnvelopeOptions& opts, std::vector<AdaptReport>* reports) {
    InitialSolve init = solve_initial_waveform(pc, bases, opts);
    if (!opts.adapt) return init;
    const RotheContext ctx = steady_context(0.0, pc.omega(0.0), pc.period);
    for (int cycle = 0; cycle < opts.pss_adapt_cycles; ++cycle) {
        auto ga = adapt_waveforms(init.waveforms, opts.adapt_opts, opts.shared_grid, opts.regrid_fraction);
        if (reports) *reports = ga.reports;
        if (!ga.material) break;
        bases = bases_of(ga.waveforms);
        NewtonReport prev = init.report;
        try {
            auto s = solve_with(pc, bases, ctx, ga.waveforms, opts);
            init.waveforms = std::move(s.waveforms);
            init.report = s.report;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoConvergence) throw;
            init = solve_initial_waveform(pc, bases, opts);
        }
        init.report.iterations += prev.iterations;
        init.report.assembly_time += prev.assembly_time;
        init.report.solve_time += prev.solve_time;
    }
    return init;
}

Eigen::VectorXd charge_moments(const PeriodicProblem& problem, const std::vector<SplineWaveform>& wfs) {
    int total = 0;
    for (int i = 0; i < problem.subcircuit_count(); ++i) total += 3 * problem.layout(i).dimension();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(total);
    int pos = 0;
    for (int i = 0; i < problem.subcircuit_count(); ++i) {
        const auto& layout = problem.layout(i);
        const auto& wf = wfs[i];
        const int m = layout.dimension();
        const double period = wf.basis.period();
        const double w0 = 2.0 * std::numbers::pi / period;
        auto ws = layout.make_workspace();
        const auto& rule = gauss_legendre(wf.basis.degree() + 1);
        for (long s = 0; s < wf.basis.size(); ++s) {
            const double lo = wf.basis.knot(s), hi = wf.basis.knot(s + 1);
            const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
            for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
                const double t = mid + half * rule.nodes[q];
                const Eigen::VectorXd x = eval_waveform(wf, t);
                layout.eval(ws, x.data(), 0.0, t);
                const double w = half * rule.weights[q] / period;
                out.segment(pos, m) += w * ws.q;
                out.segment(pos + m, m) += 2.0 * w * std::cos(w0 * t) * ws.q;
                out.segment(pos + 2 * m, m) += 2.0 * w * std::sin(w0 * t) * ws.q;
            }
        }
        pos += 3 * m;
    }
    return out;
}

namespace {

// Scaled local error of the two-half-step solution against the full step.
double doubling_error(const PeriodicProblem& problem, const std::vector<SplineWaveform>& full,
                      const std::vector<SplineWaveform>& halves, int order, double envtol) {
    const Eigen::VectorXd mf = charge_moments(problem, full);
    const Eigen::VectorXd mh = charge_moments(problem, halves);
    const double richardson = std::pow(2.0, order) - 1.0;
    double err = 0.0;
    int pos = 0;
    for (int i = 0; i < problem.subcircuit_count(); ++i) {
        const int m = problem.layout(i).dimension();
        Eigen::VectorXd scale(m);
        for (int j = 0; j < m; ++j) {
            scale[j] = std::max({std::abs(mh[pos + j]), std::abs(mh[pos + m + j]), std::abs(mh[pos + 2 * m + j])});
        }
        const double floor = std::max(1e-6 * scale.maxCoeff(), 1e-300);
        for (int j = 0; j < m; ++j) {
            const double s = std::max(scale[j], floor);
            for (int h = 0; h < 3; ++h) {
                const int k = pos + h * m + j;
                err = std::max(err, std::abs(mf[k] - mh[k]) / richardson / (envtol * s));
            }
        }
        pos += 3 * m;
    }
    return err;
}

}  // namespace

EnvelopeRun start_run(const PartitionedCircuit& pc, std::vector<SplineWaveform> initial, const NewtonReport& report) {
    EnvelopeRun run;
    run.taus.push_back(0.0);
    run.omegas.push_back(pc.omega(0.0));
    run.bases = bases_of(initial);
    StepRecord rec = make_record(initial, report);
    rec.omega = run.omegas.back();
    run.records.push_back(rec);
    run.waveforms.push_back(std::move(initial));
    return run;
}

StepOutcome envelope_step(const PartitionedCircuit& pc, EnvelopeRun& run, double dtau, const EnvelopeOptions& opts) {
    if (run.taus.empty()) throw Error(ErrorCode::InsufficientHistory, "run has no accepted entry");
    StepOutcome out;
    const double tau0 = run.taus.back();
    const double h = dtau;
    out.dtau_used = h;
    const double tau1 = tau0 + h;

    std::vector<HistoryEntry> hist;
    for (std::size_t k = run.taus.size(); k-- > 0 && hist.size() < 2;) {
        hist.push_back(HistoryEntry{run.taus[k], run.waveforms[k]});
    }
    const int order = (opts.method == Multistep::Bdf2 && hist.size() >= 2) ? 2 : 1;
    const auto& bases = run.bases;
    const double period = pc.period;

    Solved accepted;
    StepRecord rec;
    RotheContext final_ctx;
    try {
        final_ctx = rothe_terms(hist, tau1, h, opts.method, pc.omega(tau1), period);
        Solved full = solve_with(pc, bases, final_ctx, hist[0].waveforms, opts);
        accumulate_times(rec, full.report);
        if (opts.envtol > 0.0) {
            const double hh = 0.5 * h;
            auto ctx1 = rothe_terms(hist, tau0 + hh, hh, opts.method, pc.omega(tau0 + hh), period);
            Solved half1 = solve_with(pc, bases, ctx1, hist[0].waveforms, opts);
            accumulate_times(rec, half1.report);
            std::vector<HistoryEntry> hist2{HistoryEntry{tau0 + hh, half1.waveforms}, hist[0]};
            final_ctx = rothe_terms(hist2, tau1, hh, opts.method, pc.omega(tau1), period);
            Solved half2 = solve_with(pc, bases, final_ctx, half1.waveforms, opts);
            accumulate_times(rec, half2.report);

            PeriodicProblem probe(pc, bases, opts.quad_points);
            const double err = doubling_error(probe, full.waveforms, half2.waveforms, order, opts.envtol);
            out.error_estimate = err;
            const double fac = err > 0.0 ? opts.safety * std::pow(err, -1.0 / (order + 1)) : 2.0;
            if (err > 1.0) {
                ++run.rejected;
                out.dtau_next = h * std::clamp(fac, 0.2, 0.9);
                out.reason = "error estimate above tolerance";
                return out;
            }
            out.dtau_next = h * std::clamp(fac, 0.2, 2.0);
            accepted = std::move(half2);
        } else {
            out.dtau_next = h;
            accepted = std::move(full);
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoConvergence) throw;
        ++run.rejected;
        out.dtau_next = 0.5 * h;
        out.reason = e.what();
        return out;
    }

    std::vector<PeriodicSplineBasis> next_bases = bases;
    if (opts.adapt) {
        auto ga = adapt_waveforms(accepted.waveforms, opts.adapt_opts, opts.shared_grid, opts.regrid_fraction);
        if (ga.changed) next_bases = bases_of(ga.waveforms);
        if (ga.material) {
            try {
                Solved again = solve_with(pc, next_bases, final_ctx, ga.waveforms, opts);
                accumulate_times(rec, again.report);
                accepted = std::move(again);
                rec.regridded = true;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NoConvergence) throw;
            }
        }
    }

    StepRecord base = make_record(accepted.waveforms, accepted.report);
    rec.knots = base.knots;
    rec.total_unknowns = base.total_unknowns;
    rec.step = static_cast<int>(run.taus.size());
    rec.tau = tau1;
    rec.dtau = h;
    rec.omega = pc.omega(tau1);
    rec.error_estimate = out.error_estimate;
    run.taus.push_back(tau1);
    run.omegas.push_back(rec.omega);
    run.waveforms.push_back(std::move(accepted.waveforms));
    run.records.push_back(rec);
    run.bases = std::move(next_bases);
    out.accepted = true;
    return out;
}

namespace {

struct StepBounds {
    double initial, min, max;
};

StepBounds resolve_bounds(double tau_end, const EnvelopeOptions& opts) {
    StepBounds b;
    b.initial = opts.dtau_initial > 0.0 ? opts.dtau_initial : tau_end / 100.0;
    b.min = opts.dtau_min > 0.0 ? opts.dtau_min : 1e-9 * tau_end;
    b.max = opts.dtau_max > 0.0 ? opts.dtau_max : tau_end / 4.0;
    b.initial = std::clamp(b.initial, b.min, std::max(b.min, b.max));
    return b;
}

}  // namespace

void continue_envelope(const PartitionedCircuit& pc, EnvelopeRun& run, double tau_end, const EnvelopeOptions& opts) {
    if (!(tau_end > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau_end must be positive");
    const auto bounds = resolve_bounds(tau_end, opts);
    double dtau = run.next_dtau > 0.0 ? run.next_dtau : bounds.initial;
    const double eps = 1e-12 * tau_end;
    int steps = 0;
    while (run.taus.back() < tau_end - eps) {
        const double remaining = tau_end - run.taus.back();
        double h = std::min(dtau, remaining);
        if (remaining - h < 1e-9 * h) h = remaining;
        const auto out = envelope_step(pc, run, h, opts);
        if (++steps > opts.max_steps) throw Error(ErrorCode::StepSizeUnderflow, "envelope step limit exceeded");
        if (!out.accepted) {
            dtau = out.dtau_next;
            if (dtau < bounds.min) {
                throw Error(ErrorCode::StepSizeUnderflow, "step size fell below the minimum at tau = " +
                                                              std::to_string(run.taus.back()) + ": " + out.reason);
            }
            continue;
        }
        if (opts.envtol > 0.0) dtau = std::clamp(out.dtau_next, bounds.min, bounds.max);
    }
    run.next_dtau = dtau;
}

EnvelopeRun run_envelope(const PartitionedCircuit& pc, const std::vector<PeriodicSplineBasis>& bases, double tau_end,
                         const EnvelopeOptions& opts) {
    auto init = solve_adaptive_steady_state(pc, bases, opts);
    EnvelopeRun run = start_run(pc, std::move(init.waveforms), init.report);
    continue_envelope(pc, run, tau_end, opts);
    return run;
}

std::vector<CharacteristicSample> reconstruct_characteristic(const EnvelopeRun& run, double t0, double period) {
    std::vector<CharacteristicSample> out;
    double theta = t0;
    const double rate = period / (2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < run.taus.size(); ++k) {
        if (k > 0) theta += 0.5 * (run.omegas[k - 1] + run.omegas[k]) * (run.taus[k] - run.taus[k - 1]) * rate;
        CharacteristicSample s;
        s.tau = run.taus[k];
        s.theta = std::fmod(theta, period);
        if (s.theta < 0.0) s.theta += period;
        for (const auto& w : run.waveforms[k]) s.state.push_back(eval_waveform(w, s.theta));
        out.push_back(std::move(s));
    }
    return out;
}

void write_run_csv(std::ostream& out, const EnvelopeRun& run, const std::vector<std::string>& names) {
    out << "step,tau,dtau,omega,newton_iters,total_unknowns,total_nnz,error_estimate";
    for (const auto& n : names) out << ",knots_" << n;
    out << '\n';
    char buf[256];
    for (const auto& r : run.records) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d,%d,%ld,%.6g", r.step, r.tau, r.dtau, r.omega,
                      r.newton_iters, r.total_unknowns, r.total_nnz, r.error_estimate);
        out << buf;
        for (int k : r.knots) out << ',' << k;
        out << '\n';
    }
}

}  // namespace mrsim
