#include "mrsim/mna.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "mrsim/error.hpp"

namespace mrsim {

double BivariateSource::fast(double t) const {
    if (spec.shape == SourceSpec::Shape::Dc) return spec.offset;
    const double phase = std::fmod(t, period) / period;
    return spec.offset + spec.amplitude * std::sin(2.0 * std::numbers::pi * spec.harmonic * phase);
}

double BivariateSource::slow(double tau) const {
    return spec.shape == SourceSpec::Shape::Am ? envelope(tau) : 1.0;
}

double eval_source(const BivariateSource& src, double tau, double t) {
    const auto& s = src.spec;
    switch (s.shape) {
        case SourceSpec::Shape::Dc: return s.offset;
        case SourceSpec::Shape::Sin:
        case SourceSpec::Shape::Am: {
            const double phase = std::fmod(t, src.period) / src.period;
            return s.offset +
                   s.amplitude * src.slow(tau) * std::sin(2.0 * std::numbers::pi * s.harmonic * phase);
        }
    }
    return 0.0;
}

DiodeEval diode_current(double v, double is, double vt) {
    // Linear continuation of the exponential above 40 Vt.
    constexpr double kLimit = 40.0;
    const double vcrit = kLimit * vt;
    if (v <= vcrit) {
        const double e = std::exp(v / vt);
        return {is * (e - 1.0), is * e / vt};
    }
    const double e = std::exp(kLimit);
    return {is * (e * (1.0 + (v - vcrit) / vt) - 1.0), is * e / vt};
}

MosfetEval mosfet_forward(double vgs, double vds, double k, double vt, double lambda) {
    const double vov = vgs - vt;
    if (vov <= 0.0) return {0.0, 0.0, 0.0};
    const double clm = 1.0 + lambda * vds;
    if (vds < vov) {
        const double core = vov * vds - 0.5 * vds * vds;
        return {k * core * clm, k * vds * clm, k * (vov - vds) * clm + k * core * lambda};
    }
    const double core = 0.5 * vov * vov;
    return {k * core * clm, k * vov * clm, k * core * lambda};
}

namespace {

// Records the (row, col) sequence of Jacobian stamp calls.
struct Recorder {
    std::vector<std::pair<int, int>> dq_calls;
    std::vector<std::pair<int, int>> dg_calls;

    void q(int, double) {}
    void g(int, double) {}
    void dq(int r, int c, double) {
        if (r >= 0 && c >= 0) dq_calls.emplace_back(r, c);
    }
    void dg(int r, int c, double) {
        if (r >= 0 && c >= 0) dg_calls.emplace_back(r, c);
    }
};

// Accumulates values into a workspace following a recorded call sequence.
struct Writer {
    StampWorkspace& ws;
    const int* dq_slot;
    const int* dg_slot;

    void q(int r, double v) {
        if (r >= 0) ws.q[r] += v;
    }
    void g(int r, double v) {
        if (r >= 0) ws.g[r] += v;
    }
    void dq(int r, int c, double v) {
        if (r >= 0 && c >= 0) ws.dq[*dq_slot++] += v;
    }
    void dg(int r, int c, double v) {
        if (r >= 0 && c >= 0) ws.dg[*dg_slot++] += v;
    }
};

double volt(const double* x, int j) { return j >= 0 ? x[j] : 0.0; }

// Two-terminal conductance-like stamp of current i(va - vb) with derivative di.
template <class Acc>
void stamp_branch_current(Acc& acc, int a, int b, double i, double di) {
    acc.g(a, i);
    acc.g(b, -i);
    acc.dg(a, a, di);
    acc.dg(a, b, -di);
    acc.dg(b, a, -di);
    acc.dg(b, b, di);
}

template <class Acc>
void stamp_device(Acc& acc, const SystemLayout::CompiledDevice& d, const double* x, double tau, double t,
                  double source_scale) {
    const auto& u = d.unknowns;
    switch (d.kind) {
        case DeviceKind::Resistor: {
            const double gval = 1.0 / d.params[0];
            stamp_branch_current(acc, u[0], u[1], gval * (volt(x, u[0]) - volt(x, u[1])), gval);
            break;
        }
        case DeviceKind::Capacitor: {
            const double c = d.params[0];
            const double v = volt(x, u[0]) - volt(x, u[1]);
            acc.q(u[0], c * v);
            acc.q(u[1], -c * v);
            acc.dq(u[0], u[0], c);
            acc.dq(u[0], u[1], -c);
            acc.dq(u[1], u[0], -c);
            acc.dq(u[1], u[1], c);
            break;
        }
        case DeviceKind::Inductor:
        case DeviceKind::VoltageSource: {
            const int br = d.branch;
            const double i = x[br];
            acc.g(u[0], i);
            acc.g(u[1], -i);
            acc.dg(u[0], br, 1.0);
            acc.dg(u[1], br, -1.0);
            double row = volt(x, u[0]) - volt(x, u[1]);
            if (d.kind == DeviceKind::VoltageSource) {
                row -= source_scale * eval_source(d.source, tau, t);
            } else {
                acc.q(br, -d.params[0] * i);
                acc.dq(br, br, -d.params[0]);
            }
            acc.g(br, row);
            acc.dg(br, u[0], 1.0);
            acc.dg(br, u[1], -1.0);
            break;
        }
        case DeviceKind::CurrentSource: {
            const double s = source_scale * eval_source(d.source, tau, t);
            acc.g(u[0], s);
            acc.g(u[1], -s);
            break;
        }
        case DeviceKind::Diode: {
            const auto e = diode_current(volt(x, u[0]) - volt(x, u[1]), d.params[0], d.params[1]);
            stamp_branch_current(acc, u[0], u[1], e.current, e.conductance);
            break;
        }
        case DeviceKind::Mosfet: {
            const int nd = u[0], ng = u[1], ns = u[2];
            const double vd = volt(x, nd), vg = volt(x, ng), vs = volt(x, ns);
            const double k = d.params[0], vt = d.params[1], lambda = d.params[2];
            double id = 0.0, did_dd = 0.0, did_dg = 0.0, did_ds = 0.0;
            if (vd >= vs) {
                const auto m = mosfet_forward(vg - vs, vd - vs, k, vt, lambda);
                id = m.id;
                did_dg = m.gm;
                did_dd = m.gds;
                did_ds = -m.gm - m.gds;
            } else {
                // Source and drain swap roles; current reverses.
                const auto m = mosfet_forward(vg - vd, vs - vd, k, vt, lambda);
                id = -m.id;
                did_dg = -m.gm;
                did_ds = -m.gds;
                did_dd = m.gm + m.gds;
            }
            acc.g(nd, id);
            acc.g(ns, -id);
            acc.dg(nd, nd, did_dd);
            acc.dg(nd, ng, did_dg);
            acc.dg(nd, ns, did_ds);
            acc.dg(ns, nd, -did_dd);
            acc.dg(ns, ng, -did_dg);
            acc.dg(ns, ns, -did_ds);
            break;
        }
    }
}

SparsityPattern compile_pattern(const std::vector<std::pair<int, int>>& calls) {
    SparsityPattern p;
    std::map<std::pair<int, int>, int> slot;
    for (const auto& rc : calls) slot.emplace(rc, 0);
    int next = 0;
    for (auto& [rc, s] : slot) {
        s = next++;
        p.entries.push_back(rc);
    }
    p.calls.reserve(calls.size());
    for (const auto& rc : calls) p.calls.push_back(slot.at(rc));
    return p;
}

Eigen::SparseMatrix<double> to_sparse(int dim, const SparsityPattern& p, const std::vector<double>& values) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(p.entries.size());
    for (std::size_t s = 0; s < p.entries.size(); ++s) {
        trips.emplace_back(p.entries[s].first, p.entries[s].second, values[s]);
    }
    Eigen::SparseMatrix<double> m(dim, dim);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

}  // namespace

SystemLayout build_layout(const Subcircuit& sub, const std::vector<EnvelopeFunction>& envelopes, double period) {
    SystemLayout layout;
    layout.node_count_ = static_cast<int>(sub.node_names.size());
    for (const auto& n : sub.node_names) {
        layout.names_.push_back("v_" + n);
        layout.kinds_.push_back(SystemLayout::UnknownKind::NodeVoltage);
    }
    layout.device_branch_.assign(sub.devices.size(), -1);
    for (std::size_t d = 0; d < sub.devices.size(); ++d) {
        const auto& dev = sub.devices[d];
        if (dev.kind == DeviceKind::VoltageSource || dev.kind == DeviceKind::Inductor) {
            layout.device_branch_[d] = static_cast<int>(layout.names_.size());
            layout.names_.push_back("i_" + dev.name);
            layout.kinds_.push_back(SystemLayout::UnknownKind::BranchCurrent);
        }
    }
    layout.first_connection_ = static_cast<int>(layout.names_.size());
    for (std::size_t e = 0; e < sub.connection_ends.size(); ++e) {
        layout.names_.push_back("iconn_" + std::to_string(sub.connection_ends[e]));
        layout.kinds_.push_back(SystemLayout::UnknownKind::ConnectionCurrent);
    }

    for (std::size_t d = 0; d < sub.devices.size(); ++d) {
        const auto& dev = sub.devices[d];
        SystemLayout::CompiledDevice cd;
        cd.kind = dev.kind;
        cd.params = dev.params;
        cd.branch = layout.device_branch_[d];
        for (int t : dev.terminals) cd.unknowns.push_back(t == kGround ? -1 : t);
        cd.source.spec = dev.source;
        cd.source.period = period;
        if (dev.source.shape == SourceSpec::Shape::Am) {
            auto it = std::find_if(envelopes.begin(), envelopes.end(),
                                   [&](const EnvelopeFunction& e) { return e.name == dev.source.envelope; });
            if (it == envelopes.end()) {
                throw Error(ErrorCode::InvalidParameter, "undefined envelope " + dev.source.envelope);
            }
            cd.source.envelope = *it;
        }
        layout.devices_.push_back(std::move(cd));
    }

    Recorder rec;
    std::vector<double> zero(layout.names_.size(), 0.0);
    for (std::size_t e = 0; e < sub.connection_ends.size(); ++e) {
        layout.connection_nodes_.push_back(sub.connection_nodes.at(e));
    }
    for (const auto& cd : layout.devices_) stamp_device(rec, cd, zero.data(), 0.0, 0.0, 1.0);
    layout.stamp_connections(rec, zero.data());
    layout.dq_pattern_ = compile_pattern(rec.dq_calls);
    layout.dg_pattern_ = compile_pattern(rec.dg_calls);
    return layout;
}

// Connection currents enter KCL at their node rows; their own rows stay empty.
template <class Acc>
void SystemLayout::stamp_connections(Acc& acc, const double* x) const {
    for (std::size_t e = 0; e < connection_nodes_.size(); ++e) {
        const int br = first_connection_ + static_cast<int>(e);
        acc.g(connection_nodes_[e], x[br]);
        acc.dg(connection_nodes_[e], br, 1.0);
    }
}

StampWorkspace SystemLayout::make_workspace() const {
    StampWorkspace ws;
    ws.q = Eigen::VectorXd::Zero(dimension());
    ws.g = Eigen::VectorXd::Zero(dimension());
    ws.dq.assign(dq_pattern_.entries.size(), 0.0);
    ws.dg.assign(dg_pattern_.entries.size(), 0.0);
    return ws;
}

void SystemLayout::eval(StampWorkspace& ws, const double* x, double tau, double t, double source_scale) const {
    ws.q.setZero();
    ws.g.setZero();
    std::fill(ws.dq.begin(), ws.dq.end(), 0.0);
    std::fill(ws.dg.begin(), ws.dg.end(), 0.0);
    Writer w{ws, dq_pattern_.calls.data(), dg_pattern_.calls.data()};
    for (const auto& d : devices_) stamp_device(w, d, x, tau, t, source_scale);
    stamp_connections(w, x);
}

StampResult eval_stamps(const SystemLayout& layout, const Eigen::VectorXd& x, double tau, double t) {
    if (x.size() != layout.dimension()) {
        throw Error(ErrorCode::InvalidParameter, "state dimension mismatch");
    }
    if (!x.allFinite()) throw Error(ErrorCode::NonFiniteState, "state vector contains non-finite entries");
    auto ws = layout.make_workspace();
    layout.eval(ws, x.data(), tau, t);
    StampResult r;
    r.q = ws.q;
    r.g = ws.g;
    if (!r.q.allFinite() || !r.g.allFinite()) {
        throw Error(ErrorCode::ModelDomainError, "device evaluation produced non-finite values");
    }
    r.dq = to_sparse(layout.dimension(), layout.dq_pattern(), ws.dq);
    r.dg = to_sparse(layout.dimension(), layout.dg_pattern(), ws.dg);
    return r;
}

}  // namespace mrsim
