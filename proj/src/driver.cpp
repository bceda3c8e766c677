#include "mrsim/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "mrsim/error.hpp"

namespace mrsim {

void RunConfig::validate() const {
    auto bad = [](const std::string& msg) { return Error(ErrorCode::InvalidConfig, msg); };
    if (netlist.empty()) throw bad("a netlist path is required");
    if (degree < 1 || degree > kMaxDegree) throw bad("degree must be in 1.." + std::to_string(kMaxDegree));
    if (knots < degree + 1) throw bad("need at least degree + 1 initial knots");
    for (const auto& [name, n] : knots_per_subcircuit) {
        if (n < degree + 1) throw bad("subcircuit " + name + " needs at least degree + 1 knots");
    }
    if (!(newton_tol > 0.0)) throw bad("newton tolerance must be positive");
    if (!(adapt_tol > 0.0)) throw bad("adapt tolerance must be positive");
    if (mode == RunMode::Envelope) {
        if (!(tau_end > 0.0)) throw bad("envelope mode needs a positive tau end");
        if (dtau < 0.0 || dtau_max < 0.0) throw bad("step sizes must be nonnegative");
        if (!(env_tol > 0.0) && !(dtau > 0.0)) throw bad("fixed-step envelope runs need an explicit step size");
    }
    if (samples < 2) throw bad("need at least 2 output samples");
    if (max_knots < knots) throw bad("max_knots below the initial knot count");
}

std::vector<OutputColumn> output_columns(const PartitionedCircuit& pc, const std::vector<std::string>& signals) {
    struct Keyed {
        int group;
        int order;
        OutputColumn col;
    };
    std::vector<Keyed> cols;
    for (int i = 0; i < static_cast<int>(pc.subcircuits.size()); ++i) {
        const auto& sub = pc.subcircuits[i];
        const int nodes = static_cast<int>(sub.node_names.size());
        for (int j = 0; j < nodes; ++j) {
            const int g = sub.global_nodes[j];
            if (pc.home_subcircuit[g] == i) cols.push_back({0, g, {"v_" + sub.node_names[j], i, j}});
        }
        int branch = nodes;
        for (const auto& d : sub.devices) {
            if (d.kind == DeviceKind::VoltageSource || d.kind == DeviceKind::Inductor) {
                cols.push_back({1, d.global_index, {"i_" + d.name, i, branch++}});
            }
        }
    }
    std::sort(cols.begin(), cols.end(), [](const Keyed& a, const Keyed& b) {
        return a.group != b.group ? a.group < b.group : a.order < b.order;
    });
    std::vector<OutputColumn> out;
    for (auto& k : cols) {
        if (!signals.empty()) {
            const bool wanted = std::any_of(signals.begin(), signals.end(), [&](const std::string& s) {
                return s == k.col.name || "v_" + s == k.col.name;
            });
            if (!wanted) continue;
        }
        out.push_back(std::move(k.col));
    }
    return out;
}

void write_waveform_csv(std::ostream& out, const std::vector<SplineWaveform>& wfs,
                        const std::vector<OutputColumn>& columns, int samples) {
    out << 't';
    for (const auto& c : columns) out << ',' << c.name;
    out << '\n';
    const double period = wfs.at(0).basis.period();
    char buf[40];
    std::vector<Eigen::VectorXd> states(wfs.size());
    for (int k = 0; k < samples; ++k) {
        const double t = period * k / samples;
        for (std::size_t i = 0; i < wfs.size(); ++i) states[i] = eval_waveform(wfs[i], t);
        std::snprintf(buf, sizeof buf, "%.17g", t);
        out << buf;
        for (const auto& c : columns) {
            std::snprintf(buf, sizeof buf, ",%.17g", states[c.subcircuit][c.column]);
            out << buf;
        }
        out << '\n';
    }
}

void write_stats(std::ostream& out, const Stats& stats) {
    for (const auto& [k, v] : stats) out << k << '=' << v << '\n';
}

Stats read_stats(std::istream& in) {
    Stats s;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::SchemaMismatch, "stats line without '=': " + line);
        s[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return s;
}

Stats read_stats_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    return read_stats(in);
}

namespace {

constexpr const char* kSchema = "mrsim-stats-1";
const char* const kCompared[] = {"total_unknowns", "jacobian_nnz", "assembly_time_s", "solve_time_s", "total_time_s"};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double number(const Stats& s, const std::string& key) {
    auto it = s.find(key);
    if (it == s.end()) throw Error(ErrorCode::SchemaMismatch, "stats file lacks " + key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::SchemaMismatch, "stats value of " + key + " is not a number");
    }
}

std::string tau_tag(int step) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "tau%03d", step);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    f << content;
    if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace

Comparison compare_stats(const Stats& a, const Stats& b) {
    for (const auto* s : {&a, &b}) {
        auto it = s->find("schema");
        if (it == s->end() || it->second != kSchema) throw Error(ErrorCode::SchemaMismatch, "unknown stats schema");
    }
    Comparison c;
    for (const char* key : kCompared) {
        ComparisonRow r;
        r.key = key;
        r.a = number(a, key);
        r.b = number(b, key);
        r.ratio = r.a != 0.0 ? r.b / r.a : (r.b == 0.0 ? 1.0 : INFINITY);
        c.rows.push_back(r);
    }
    return c;
}

std::string Comparison::table() const {
    std::ostringstream out;
    out << std::left << std::setw(18) << "quantity" << std::right << std::setw(16) << "a" << std::setw(16) << "b"
        << std::setw(12) << "b/a" << '\n';
    for (const auto& r : rows) {
        out << std::left << std::setw(18) << r.key << std::right << std::setw(16) << std::setprecision(6) << r.a
            << std::setw(16) << r.b << std::setw(12) << std::setprecision(4) << r.ratio << '\n';
    }
    return out.str();
}

std::string Comparison::key_values() const {
    std::ostringstream out;
    for (const auto& r : rows) out << "ratio_" << r.key << '=' << fmt(r.ratio) << '\n';
    return out.str();
}

RunSummary run_simulation(const RunConfig& config) {
    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();
    RunSummary summary;
    Stats& st = summary.stats;
    st["schema"] = kSchema;
    st["mode"] = config.mode == RunMode::Pss ? "pss" : "envelope";
    st["grid"] = config.grid == GridMode::Single ? "single" : "multi";
    st["degree"] = std::to_string(config.degree);

    std::string stage = "config";
    std::optional<PartitionedCircuit> pc;
    std::optional<EnvelopeRun> run;
    std::vector<std::string> sub_names;
    bool wrote_artifacts = false;

    auto write_outputs = [&](bool final_only) {
        const auto cols = output_columns(*pc, config.signals);
        const int last = static_cast<int>(run->size()) - 1;
        for (int k = 0; k <= last; ++k) {
            const bool chosen = k == 0 || k == last || (config.output_every > 0 && k % config.output_every == 0);
            if (!chosen || (final_only && k != last)) continue;
            std::ostringstream w;
            write_waveform_csv(w, run->waveforms[k], cols, config.samples);
            write_file(config.out / ("waveform_" + tau_tag(k) + ".csv"), w.str());
            for (std::size_t i = 0; i < sub_names.size(); ++i) {
                std::ostringstream g;
                write_grid_csv(g, run->waveforms[k][i].basis);
                write_file(config.out / ("grid_" + sub_names[i] + "_" + tau_tag(k) + ".csv"), g.str());
            }
        }
        std::ostringstream r;
        write_run_csv(r, *run, sub_names);
        write_file(config.out / "run.csv", r.str());
        wrote_artifacts = true;
    };

    auto fill_run_stats = [&]() {
        if (!run || run->size() == 0) return;
        const auto& last = run->waveforms.back();
        double assembly = 0.0, solve = 0.0;
        long iters = 0;
        int max_unknowns = 0;
        for (const auto& r : run->records) {
            assembly += r.assembly_time;
            solve += r.solve_time;
            iters += r.newton_iters;
            max_unknowns = std::max(max_unknowns, r.total_unknowns);
        }
        int total = 0;
        for (std::size_t i = 0; i < last.size(); ++i) {
            const int u = last[i].basis.size() * last[i].columns();
            total += u;
            st["knots_" + sub_names[i]] = std::to_string(last[i].basis.size());
            st["unknowns_" + sub_names[i]] = std::to_string(u);
        }
        st["total_unknowns"] = std::to_string(total);
        st["max_total_unknowns"] = std::to_string(max_unknowns);
        st["assembly_time_s"] = fmt(assembly);
        st["solve_time_s"] = fmt(solve);
        st["newton_iterations"] = std::to_string(iters);
        st["steps"] = std::to_string(run->size() - 1);
        st["rejected_steps"] = std::to_string(run->rejected);
        st["tau_final"] = fmt(run->taus.back());
        try {
            std::vector<PeriodicSplineBasis> bases;
            for (const auto& w : last) bases.push_back(w.basis);
            PeriodicProblem problem(*pc, bases);
            problem.set_context(steady_context(run->taus.back(), run->omegas.back(), pc->period));
            st["jacobian_nnz"] = std::to_string(problem.assemble(problem.pack(last)).nnz);
        } catch (const Error&) {
            st["jacobian_nnz"] = "0";
        }
    };

    try {
        config.validate();
        stage = "output";
        std::error_code ec;
        std::filesystem::create_directories(config.out, ec);
        if (ec) throw Error(ErrorCode::IoError, "cannot create " + config.out.string() + ": " + ec.message());

        stage = "parse";
        const Circuit circuit = parse_netlist_file(config.netlist);

        stage = "tear";
        pc = config.grid == GridMode::Single ? monolithic(circuit) : apply_node_tearing(circuit);
        const auto report = validate_circuit(*pc);
        st["subcircuits"] = std::to_string(pc->subcircuits.size());
        st["connections"] = std::to_string(pc->connections.size());
        st["warnings"] = std::to_string(report.warnings.size());
        for (const auto& s : pc->subcircuits) sub_names.push_back(s.name);

        std::vector<PeriodicSplineBasis> bases;
        for (const auto& s : pc->subcircuits) {
            auto it = config.knots_per_subcircuit.find(s.name);
            const int n = it != config.knots_per_subcircuit.end() ? it->second : config.knots;
            bases.push_back(PeriodicSplineBasis::uniform(n, config.degree, pc->period));
        }

        EnvelopeOptions eo;
        eo.method = config.method;
        eo.envtol = config.env_tol;
        eo.dtau_initial = config.dtau;
        eo.dtau_max = config.dtau_max;
        eo.newton.abstol = config.newton_tol;
        eo.newton.reltol = config.newton_tol;
        eo.adapt = config.adapt;
        eo.shared_grid = config.grid == GridMode::Single;
        eo.adapt_opts.tol_refine = config.adapt_tol;
        eo.adapt_opts.tol_coarsen = 0.1 * config.adapt_tol;
        eo.adapt_opts.max_knots = config.max_knots;

        stage = "initial";
        auto init = solve_adaptive_steady_state(*pc, bases, eo);
        st["homotopy_steps"] = std::to_string(init.homotopy_steps);
        run = start_run(*pc, std::move(init.waveforms), init.report);

        if (config.mode == RunMode::Envelope) {
            stage = "envelope";
            continue_envelope(*pc, *run, config.tau_end, eo);
        }

        stage = "output";
        write_outputs(false);
        fill_run_stats();
        summary.ok = true;
    } catch (const std::exception& e) {
        summary.ok = false;
        summary.failure_stage = stage;
        summary.message = e.what();
        if (const auto* err = dynamic_cast<const Error*>(&e)) {
            summary.message = std::string(to_string(err->code())) + ": " + e.what();
        }
        if (run && pc && !wrote_artifacts && stage != "output") {
            try {
                write_outputs(true);
            } catch (const std::exception&) {
            }
        }
        fill_run_stats();
        st["partial_artifacts"] = wrote_artifacts ? "1" : "0";
    }
    st["status"] = summary.ok ? "ok" : "failed";
    st["failure_stage"] = summary.ok ? "none" : summary.failure_stage;
    if (!summary.ok) {
        std::string msg = summary.message;
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        st["error"] = msg;
    }
    st["total_time_s"] = fmt(std::chrono::duration<double>(Clock::now() - start).count());
    std::ofstream f(config.out / "stats.txt");
    if (f) write_stats(f, st);
    return summary;
}

}  // namespace mrsim
