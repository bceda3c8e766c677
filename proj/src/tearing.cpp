#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "mrsim/error.hpp"
#include "mrsim/netlist.hpp"

namespace mrsim {

int Subcircuit::local_node(int global) const {
    auto it = std::find(global_nodes.begin(), global_nodes.end(), global);
    return it == global_nodes.end() ? -2 : static_cast<int>(it - global_nodes.begin());
}

int PartitionedCircuit::find_subcircuit(std::string_view name) const {
    for (std::size_t i = 0; i < subcircuits.size(); ++i) {
        if (subcircuits[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

std::size_t PartitionedCircuit::device_count() const {
    std::size_t n = 0;
    for (const auto& s : subcircuits) n += s.devices.size();
    return n;
}

namespace {

int owner_partition(const Device& dev, const std::vector<int>& home) {
    for (int t : dev.terminals) {
        if (t != kGround) return home[t];
    }
    return 0;
}

PartitionedCircuit tear(const Circuit& circuit, const std::vector<std::string>& names, const std::vector<int>& home) {
    const int num_parts = static_cast<int>(names.size());
    const int num_nodes = static_cast<int>(circuit.nodes.size());

    std::vector<int> owner(circuit.devices.size());
    for (std::size_t d = 0; d < circuit.devices.size(); ++d) {
        const auto& dev = circuit.devices[d];
        std::set<int> touched;
        for (int t : dev.terminals) {
            if (t != kGround) touched.insert(home[t]);
        }
        if (touched.size() >= 3) {
            throw Error(ErrorCode::DeviceSpansThreeSubcircuits,
                        "device " + dev.name + " touches " + std::to_string(touched.size()) + " partitions");
        }
        owner[d] = owner_partition(dev, home);
    }

    // Partitions that need a local copy of each node.
    std::vector<std::set<int>> users(num_nodes);
    for (int n = 0; n < num_nodes; ++n) users[n].insert(home[n]);
    for (std::size_t d = 0; d < circuit.devices.size(); ++d) {
        for (int t : circuit.devices[d].terminals) {
            if (t != kGround) users[t].insert(owner[d]);
        }
    }

    PartitionedCircuit pc;
    pc.global_nodes = circuit.nodes;
    pc.envelopes = circuit.envelopes;
    pc.period = circuit.period;
    pc.omega = circuit.omega;
    pc.home_subcircuit = home;
    pc.home_local.assign(num_nodes, -1);
    pc.subcircuits.resize(num_parts);
    for (int p = 0; p < num_parts; ++p) pc.subcircuits[p].name = names[p];

    for (int n = 0; n < num_nodes; ++n) {
        for (int p : users[n]) {
            auto& sub = pc.subcircuits[p];
            if (p == home[n]) pc.home_local[n] = static_cast<int>(sub.global_nodes.size());
            sub.node_names.push_back(circuit.nodes[n]);
            sub.global_nodes.push_back(n);
            sub.torn.push_back(p != home[n]);
        }
        pc.duplicated_nodes += static_cast<int>(users[n].size()) - 1;
    }

    for (std::size_t d = 0; d < circuit.devices.size(); ++d) {
        const auto& dev = circuit.devices[d];
        auto& sub = pc.subcircuits[owner[d]];
        LocalDevice ld;
        ld.kind = dev.kind;
        ld.name = dev.name;
        ld.params = dev.params;
        ld.source = dev.source;
        ld.global_index = static_cast<int>(d);
        for (int t : dev.terminals) ld.terminals.push_back(t == kGround ? kGround : sub.local_node(t));
        sub.devices.push_back(std::move(ld));
    }

    // Chain of pairwise connections per shared node, in partition order.
    for (int n = 0; n < num_nodes; ++n) {
        if (users[n].size() < 2) continue;
        std::vector<int> chain(users[n].begin(), users[n].end());
        for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
            int a = chain[i];
            int b = chain[i + 1];
            // The voltage condition lives on the grid of the side holding the copy.
            int k = (b == home[n]) ? a : b;
            int l = (k == a) ? b : a;
            Connection c;
            c.sub_k = k;
            c.sub_l = l;
            c.global_node = n;
            c.node_mu = pc.subcircuits[k].local_node(n);
            c.node_nu = pc.subcircuits[l].local_node(n);
            const int index = static_cast<int>(pc.connections.size());
            c.current_unknowns.first = static_cast<int>(pc.subcircuits[k].connection_ends.size());
            pc.subcircuits[k].connection_ends.push_back(index);
            pc.subcircuits[k].connection_nodes.push_back(c.node_mu);
            c.current_unknowns.second = static_cast<int>(pc.subcircuits[l].connection_ends.size());
            pc.subcircuits[l].connection_ends.push_back(index);
            pc.subcircuits[l].connection_nodes.push_back(c.node_nu);
            pc.connections.push_back(c);
        }
    }
    return pc;
}

}  // namespace

PartitionedCircuit apply_node_tearing(const Circuit& circuit) {
    if (circuit.partitions.empty()) return monolithic(circuit);
    if (!(circuit.period > 0.0)) throw Error(ErrorCode::MissingPeriod, "period must be positive");

    const int num_nodes = static_cast<int>(circuit.nodes.size());
    std::vector<int> home(num_nodes, -1);
    std::vector<std::string> names;
    for (std::size_t p = 0; p < circuit.partitions.size(); ++p) {
        const auto& dir = circuit.partitions[p];
        names.push_back(dir.name);
        for (const auto& name : dir.nodes) {
            const int id = circuit.find_node(name);
            if (id == kGround) continue;
            if (id < 0) throw Error(ErrorCode::UndefinedNode, "partition " + dir.name + " names unknown node " + name);
            if (home[id] >= 0) {
                throw Error(ErrorCode::AmbiguousPartition,
                            "node " + name + " is in partitions " + names[home[id]] + " and " + dir.name);
            }
            home[id] = static_cast<int>(p);
        }
    }
    for (int n = 0; n < num_nodes; ++n) {
        if (home[n] < 0) throw Error(ErrorCode::UncoveredNode, "node " + circuit.nodes[n] + " is in no partition");
    }
    return tear(circuit, names, home);
}

PartitionedCircuit monolithic(const Circuit& circuit) {
    if (!(circuit.period > 0.0)) throw Error(ErrorCode::MissingPeriod, "period must be positive");
    std::vector<int> home(circuit.nodes.size(), 0);
    return tear(circuit, {"main"}, home);
}

ValidationReport validate_circuit(const PartitionedCircuit& pc) {
    ValidationReport report;
    report.connections = static_cast<int>(pc.connections.size());
    report.duplicated_nodes = pc.duplicated_nodes;
    for (const auto& sub : pc.subcircuits) {
        SubcircuitReport r;
        r.name = sub.name;
        r.nodes = static_cast<int>(sub.node_names.size());
        r.devices = static_cast<int>(sub.devices.size());
        int branches = 0;
        for (const auto& d : sub.devices) {
            if (d.kind == DeviceKind::VoltageSource || d.kind == DeviceKind::Inductor) ++branches;
        }
        r.connection_unknowns = static_cast<int>(sub.connection_ends.size());
        r.unknowns = r.nodes + branches + r.connection_unknowns;
        r.internal_unknowns = r.unknowns - r.connection_unknowns;
        if (r.connection_unknowns > r.internal_unknowns) {
            report.warnings.push_back("subcircuit " + sub.name + ": connection unknowns exceed internal unknowns");
        }
        report.subcircuits.push_back(r);
    }
    return report;
}

std::string ValidationReport::table() const {
    std::ostringstream out;
    out << std::left << std::setw(16) << "subcircuit" << std::right << std::setw(8) << "nodes" << std::setw(9)
        << "devices" << std::setw(10) << "unknowns" << std::setw(10) << "internal" << std::setw(12) << "connection"
        << '\n';
    for (const auto& s : subcircuits) {
        out << std::left << std::setw(16) << s.name << std::right << std::setw(8) << s.nodes << std::setw(9)
            << s.devices << std::setw(10) << s.unknowns << std::setw(10) << s.internal_unknowns << std::setw(12)
            << s.connection_unknowns << '\n';
    }
    out << "connections: " << connections << ", duplicated nodes: " << duplicated_nodes << '\n';
    for (const auto& w : warnings) out << "warning: " << w << '\n';
    return out.str();
}

std::string ValidationReport::key_values() const {
    std::ostringstream out;
    out << "subcircuits=" << subcircuits.size() << '\n';
    out << "connections=" << connections << '\n';
    out << "duplicated_nodes=" << duplicated_nodes << '\n';
    for (const auto& s : subcircuits) {
        out << "unknowns_" << s.name << '=' << s.unknowns << '\n';
        out << "connection_unknowns_" << s.name << '=' << s.connection_unknowns << '\n';
    }
    out << "warnings=" << warnings.size() << '\n';
    return out.str();
}

}  // namespace mrsim
