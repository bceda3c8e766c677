#include <chrono>
#include <cmath>
#include <sstream>

#include "mrsim/error.hpp"
#include "mrsim/pbvp.hpp"

namespace mrsim {

void NewtonOptions::validate() const {
    if (!(abstol > 0.0) || !(reltol > 0.0)) throw Error(ErrorCode::InvalidConfig, "Newton tolerances must be positive");
    if (!(damping > 0.0 && damping < 1.0)) throw Error(ErrorCode::InvalidConfig, "damping factor must be in (0, 1)");
    if (!(min_step > 0.0 && min_step <= 1.0)) throw Error(ErrorCode::InvalidConfig, "min_step must be in (0, 1]");
    if (max_iter < 1) throw Error(ErrorCode::InvalidConfig, "max_iter must be positive");
}

std::string NewtonReport::key_values() const {
    std::ostringstream out;
    out.precision(17);
    out << "newton_iterations=" << iterations << '\n'
        << "newton_converged=" << (converged ? 1 : 0) << '\n'
        << "newton_initial_norm=" << initial_norm << '\n'
        << "newton_final_norm=" << final_norm << '\n'
        << "dimension=" << dimension << '\n'
        << "jacobian_nnz=" << nnz << '\n'
        << "assembly_time_s=" << assembly_time << '\n'
        << "solve_time_s=" << solve_time << '\n';
    return out.str();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

NewtonResult newton_solve(const PeriodicProblem& problem, Eigen::VectorXd x0, const NewtonOptions& opts,
                          NewtonReport* last_report) {
    opts.validate();
    const Eigen::VectorXd& scale = problem.row_scale();
    auto norm = [&](const Eigen::VectorXd& r) { return r.cwiseProduct(scale).lpNorm<Eigen::Infinity>(); };

    NewtonResult res;
    auto& rep = res.report;
    rep.dimension = problem.dimension();
    auto fail = [&](ErrorCode code, const std::string& msg) {
        if (last_report) *last_report = rep;
        return Error(code, msg);
    };

    Eigen::VectorXd x = std::move(x0);
    auto t0 = Clock::now();
    Eigen::VectorXd r = problem.residual(x);
    rep.assembly_time += seconds_since(t0);
    double rn = norm(r);
    rep.initial_norm = rn;
    rep.norms.push_back(rn);
    const double tol = opts.abstol + opts.reltol * rn;

    if (rn <= opts.abstol) {
        rep.converged = true;
        rep.final_norm = rn;
        res.x = std::move(x);
        if (last_report) *last_report = rep;
        return res;
    }

    for (int it = 1; it <= opts.max_iter; ++it) {
        t0 = Clock::now();
        const SparseSystem sys = problem.assemble(x);
        rep.assembly_time += seconds_since(t0);
        rep.nnz = sys.nnz;

        t0 = Clock::now();
        Eigen::VectorXd dx;
        try {
            dx = sparse_solve(sys, -sys.residual);
        } catch (const Error&) {
            rep.solve_time += seconds_since(t0);
            if (last_report) *last_report = rep;
            throw;
        }
        rep.solve_time += seconds_since(t0);
        rep.step_norms.push_back(dx.lpNorm<Eigen::Infinity>());

        double lambda = 1.0;
        Eigen::VectorXd xt, rt;
        double rtn = INFINITY;
        while (true) {
            xt = x + lambda * dx;
            t0 = Clock::now();
            try {
                rt = problem.residual(xt);
                rtn = norm(rt);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::ModelDomainError && e.code() != ErrorCode::NonFiniteState) throw;
                rtn = INFINITY;
            }
            rep.assembly_time += seconds_since(t0);
            if (rtn < rn || rtn <= tol) break;
            lambda *= opts.damping;
            if (lambda < opts.min_step) {
                // A full step that cannot reduce a residual already at
                // roundoff level counts as converged.
                if (dx.lpNorm<Eigen::Infinity>() <= 1e-13 * std::max(1.0, x.lpNorm<Eigen::Infinity>())) {
                    rep.iterations = it;
                    rep.converged = true;
                    rep.final_norm = rn;
                    res.x = std::move(x);
                    if (last_report) *last_report = rep;
                    return res;
                }
                rep.iterations = it;
                rep.final_norm = rn;
                throw fail(ErrorCode::NoConvergence, "line search hit the damping floor at iteration " +
                                                         std::to_string(it));
            }
        }
        x = std::move(xt);
        r = std::move(rt);
        rn = rtn;
        rep.norms.push_back(rn);
        rep.iterations = it;
        rep.final_norm = rn;
        if (rn <= tol) {
            rep.converged = true;
            res.x = std::move(x);
            if (last_report) *last_report = rep;
            return res;
        }
    }
    std::ostringstream msg;
    msg << "Newton did not converge in " << opts.max_iter << " iterations (residual " << rn << ", target " << tol
        << ")";
    throw fail(ErrorCode::NoConvergence, msg.str());
}

std::pair<std::vector<SplineWaveform>, NewtonReport> newton_solve(const PartitionedCircuit& pc,
                                                                  const std::vector<SplineWaveform>& initial,
                                                                  const RotheContext& rothe,
                                                                  const NewtonOptions& opts) {
    std::vector<PeriodicSplineBasis> bases;
    for (const auto& w : initial) bases.push_back(w.basis);
    PeriodicProblem problem(pc, std::move(bases));
    problem.set_context(rothe);
    auto res = newton_solve(problem, problem.pack(initial), opts);
    return {problem.unpack(res.x), res.report};
}

}  // namespace mrsim
