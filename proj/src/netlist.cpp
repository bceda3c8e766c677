#include "mrsim/netlist.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

#include "mrsim/error.hpp"

namespace mrsim {

std::string_view device_letter(DeviceKind kind) {
    switch (kind) {
        case DeviceKind::Resistor: return "R";
        case DeviceKind::Capacitor: return "C";
        case DeviceKind::Inductor: return "L";
        case DeviceKind::VoltageSource: return "V";
        case DeviceKind::CurrentSource: return "I";
        case DeviceKind::Diode: return "D";
        case DeviceKind::Mosfet: return "M";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Table

Table::Table(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    if (x_.size() != y_.size() || x_.empty()) {
        throw Error(ErrorCode::InvalidParameter, "table needs matching, nonempty columns");
    }
    for (std::size_t i = 1; i < x_.size(); ++i) {
        if (!(x_[i] > x_[i - 1])) {
            throw Error(ErrorCode::InvalidParameter, "table abscissa must be strictly increasing");
        }
    }
}

double Table::operator()(double x) const {
    if (x_.empty()) {
        throw Error(ErrorCode::TableOutOfRange, "empty table");
    }
    const double slack = 1e-12 * std::max(1.0, std::abs(x_.back() - x_.front()));
    if (x < x_.front() - slack || x > x_.back() + slack) {
        throw Error(ErrorCode::TableOutOfRange,
                    "abscissa " + std::to_string(x) + " outside [" + std::to_string(x_.front()) +
                        ", " + std::to_string(x_.back()) + "]");
    }
    if (x_.size() == 1) return y_.front();
    auto it = std::upper_bound(x_.begin(), x_.end(), x);
    std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - x_.begin()), 1, x_.size() - 1);
    std::size_t lo = hi - 1;
    const double w = std::clamp((x - x_[lo]) / (x_[hi] - x_[lo]), 0.0, 1.0);
    return (1.0 - w) * y_[lo] + w * y_[hi];
}

Table load_table_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open table file " + path.string());
    }
    std::vector<double> xs, ys;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        double a = 0.0, b = 0.0;
        if (!(ls >> a >> b)) {
            if (xs.empty()) continue;  // header
            throw Error(ErrorCode::SyntaxError, "malformed table line in " + path.string() + ": " + line);
        }
        xs.push_back(a);
        ys.push_back(b);
    }
    return Table(std::move(xs), std::move(ys));
}

double EnvelopeFunction::operator()(double tau) const {
    switch (shape) {
        case Shape::Constant: return coeffs.at(0);
        case Shape::Linear: return coeffs.at(0) + coeffs.at(1) * tau;
        case Shape::Sine:
            return coeffs.at(0) + coeffs.at(1) * std::sin(2.0 * std::numbers::pi * tau / coeffs.at(2));
        case Shape::Table: return table(tau);
    }
    return 0.0;
}

int Circuit::find_node(std::string_view name) const {
    if (name == "0" || name == "gnd") return kGround;
    auto it = std::find(nodes.begin(), nodes.end(), name);
    return it == nodes.end() ? -2 : static_cast<int>(it - nodes.begin());
}

const EnvelopeFunction* Circuit::find_envelope(std::string_view name) const {
    for (const auto& e : envelopes) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

struct Token {
    std::string text;
    int column = 0;
};

std::vector<Token> tokenize(std::string_view line) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i >= line.size()) break;
        std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        out.push_back({std::string(line.substr(start, i - start)), static_cast<int>(start) + 1});
    }
    return out;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool is_ground(std::string_view name) { return name == "0" || name == "gnd"; }

class Parser {
public:
    Parser(std::string_view text, std::filesystem::path base) : text_(text), base_(std::move(base)) {}

    Circuit run() {
        std::size_t pos = 0;
        int line_no = 0;
        while (pos <= text_.size()) {
            std::size_t eol = text_.find('\n', pos);
            if (eol == std::string_view::npos) eol = text_.size();
            std::string_view line = text_.substr(pos, eol - pos);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            ++line_no;
            line_ = line_no;
            if (!parse_line(line)) break;
            if (eol == text_.size()) break;
            pos = eol + 1;
        }
        finish();
        return std::move(circuit_);
    }

private:
    [[noreturn]] void fail(ErrorCode code, const Token& tok, const std::string& msg) const {
        throw ParseError(code, line_, tok.column, msg);
    }
    [[noreturn]] void fail(ErrorCode code, int column, const std::string& msg) const {
        throw ParseError(code, line_, column, msg);
    }

    double number(const Token& tok) const {
        auto v = parse_spice_number(tok.text);
        if (!v) fail(ErrorCode::SyntaxError, tok, "expected a number, got '" + tok.text + "'");
        return *v;
    }

    void require_positive(const Token& tok, double v, const char* what) const {
        if (!(v > 0.0)) fail(ErrorCode::InvalidParameter, tok, std::string(what) + " must be positive");
    }

    int node(const Token& tok) {
        if (is_ground(tok.text)) return kGround;
        int id = circuit_.find_node(tok.text);
        if (id >= 0) return id;
        circuit_.nodes.push_back(tok.text);
        return static_cast<int>(circuit_.nodes.size()) - 1;
    }

    void expect_count(const std::vector<Token>& toks, std::size_t lo, std::size_t hi, const char* usage) const {
        if (toks.size() < lo || toks.size() > hi) {
            const int column = toks.size() < lo ? static_cast<int>(toks.back().column + toks.back().text.size())
                                                : toks[hi].column;
            fail(ErrorCode::SyntaxError, column, std::string("expected: ") + usage);
        }
    }

    bool parse_line(std::string_view line) {
        auto toks = tokenize(line);
        if (toks.empty() || toks[0].text[0] == '*') return true;
        if (toks[0].text[0] == '.') return parse_directive(toks);
        parse_device(toks);
        return true;
    }

    void parse_device(const std::vector<Token>& toks) {
        const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(toks[0].text[0])));
        Device dev;
        dev.name = toks[0].text;
        switch (letter) {
            case 'R': dev.kind = DeviceKind::Resistor; break;
            case 'C': dev.kind = DeviceKind::Capacitor; break;
            case 'L': dev.kind = DeviceKind::Inductor; break;
            case 'V': dev.kind = DeviceKind::VoltageSource; break;
            case 'I': dev.kind = DeviceKind::CurrentSource; break;
            case 'D': dev.kind = DeviceKind::Diode; break;
            case 'M': dev.kind = DeviceKind::Mosfet; break;
            default: fail(ErrorCode::UnknownDevice, toks[0], "unknown device type '" + toks[0].text + "'");
        }
        for (const auto& d : circuit_.devices) {
            if (d.name == dev.name) fail(ErrorCode::DuplicateName, toks[0], "duplicate device name " + dev.name);
        }
        switch (dev.kind) {
            case DeviceKind::Resistor:
            case DeviceKind::Capacitor:
            case DeviceKind::Inductor: {
                expect_count(toks, 4, 4, "<name> n+ n- value");
                dev.terminals = {node(toks[1]), node(toks[2])};
                const double v = number(toks[3]);
                require_positive(toks[3], v, "element value");
                dev.params = {v};
                break;
            }
            case DeviceKind::Diode: {
                expect_count(toks, 5, 5, "D<name> n+ n- Is Vt");
                dev.terminals = {node(toks[1]), node(toks[2])};
                const double is = number(toks[3]);
                const double vt = number(toks[4]);
                require_positive(toks[3], is, "saturation current");
                require_positive(toks[4], vt, "thermal voltage");
                dev.params = {is, vt};
                break;
            }
            case DeviceKind::Mosfet: {
                expect_count(toks, 7, 7, "M<name> nd ng ns K VT lambda");
                dev.terminals = {node(toks[1]), node(toks[2]), node(toks[3])};
                const double k = number(toks[4]);
                const double vt = number(toks[5]);
                const double lambda = number(toks[6]);
                require_positive(toks[4], k, "transconductance K");
                if (lambda < 0.0) fail(ErrorCode::InvalidParameter, toks[6], "lambda must be nonnegative");
                dev.params = {k, vt, lambda};
                break;
            }
            case DeviceKind::VoltageSource:
            case DeviceKind::CurrentSource: {
                if (toks.size() < 4) expect_count(toks, 4, 4, "<name> n+ n- <sourcespec>");
                dev.terminals = {node(toks[1]), node(toks[2])};
                dev.source = source_spec(toks);
                break;
            }
        }
        circuit_.devices.push_back(std::move(dev));
    }

    SourceSpec source_spec(const std::vector<Token>& toks) {
        SourceSpec s;
        const std::string shape = lower(toks[3].text);
        if (shape == "dc") {
            expect_count(toks, 5, 5, "dc V0");
            s.shape = SourceSpec::Shape::Dc;
            s.offset = number(toks[4]);
        } else if (shape == "sin") {
            expect_count(toks, 6, 7, "sin V0 VA [harmonic]");
            s.shape = SourceSpec::Shape::Sin;
            s.offset = number(toks[4]);
            s.amplitude = number(toks[5]);
            if (toks.size() == 7) s.harmonic = harmonic(toks[6]);
        } else if (shape == "am") {
            expect_count(toks, 7, 8, "am V0 VA envelope [harmonic]");
            s.shape = SourceSpec::Shape::Am;
            s.offset = number(toks[4]);
            s.amplitude = number(toks[5]);
            s.envelope = toks[6].text;
            envelope_refs_.push_back({line_, toks[6]});
            if (toks.size() == 8) s.harmonic = harmonic(toks[7]);
        } else if (parse_spice_number(toks[3].text)) {
            expect_count(toks, 4, 4, "<name> n+ n- value");
            s.shape = SourceSpec::Shape::Dc;
            s.offset = number(toks[3]);
        } else {
            fail(ErrorCode::SyntaxError, toks[3], "unknown source shape '" + toks[3].text + "'");
        }
        return s;
    }

    int harmonic(const Token& tok) const {
        const double h = number(tok);
        if (h < 1.0 || h != std::floor(h) || h > 1e6) {
            fail(ErrorCode::InvalidParameter, tok, "harmonic must be a positive integer");
        }
        return static_cast<int>(h);
    }

    bool parse_directive(const std::vector<Token>& toks) {
        const std::string name = lower(toks[0].text);
        if (name == ".end") return false;
        if (name == ".period") {
            expect_count(toks, 2, 2, ".period P");
            if (have_period_) fail(ErrorCode::DuplicateName, toks[0], "period already set");
            const double p = number(toks[1]);
            require_positive(toks[1], p, "period");
            circuit_.period = p;
            have_period_ = true;
        } else if (name == ".omega") {
            expect_count(toks, 3, 3, ".omega const W | .omega table file.csv");
            if (have_omega_) fail(ErrorCode::DuplicateName, toks[0], "omega already set");
            const std::string kind = lower(toks[1].text);
            if (kind == "const") {
                circuit_.omega.tabulated = false;
                circuit_.omega.value = number(toks[2]);
                if (circuit_.omega.value < 0.0) fail(ErrorCode::InvalidParameter, toks[2], "omega must be nonnegative");
            } else if (kind == "table") {
                circuit_.omega.tabulated = true;
                circuit_.omega.table_path = toks[2].text;
                circuit_.omega.table = load(toks[2]);
            } else {
                fail(ErrorCode::SyntaxError, toks[1], "expected 'const' or 'table'");
            }
            have_omega_ = true;
        } else if (name == ".partition") {
            if (toks.size() < 2) expect_count(toks, 2, 2, ".partition <name> n1 n2 ...");
            for (const auto& p : circuit_.partitions) {
                if (p.name == toks[1].text) fail(ErrorCode::DuplicateName, toks[1], "duplicate partition " + p.name);
            }
            PartitionDirective dir;
            dir.name = toks[1].text;
            for (std::size_t i = 2; i < toks.size(); ++i) {
                dir.nodes.push_back(toks[i].text);
                partition_refs_.push_back({line_, toks[i]});
            }
            circuit_.partitions.push_back(std::move(dir));
        } else if (name == ".envelope") {
            parse_envelope(toks);
        } else {
            fail(ErrorCode::SyntaxError, toks[0], "unknown directive " + toks[0].text);
        }
        return true;
    }

    void parse_envelope(const std::vector<Token>& toks) {
        if (toks.size() < 3) expect_count(toks, 3, 3, ".envelope <name> const|linear|sine|table ...");
        if (circuit_.find_envelope(toks[1].text)) {
            fail(ErrorCode::DuplicateName, toks[1], "duplicate envelope " + toks[1].text);
        }
        EnvelopeFunction env;
        env.name = toks[1].text;
        const std::string kind = lower(toks[2].text);
        if (kind == "const") {
            expect_count(toks, 4, 4, ".envelope <name> const a");
            env.shape = EnvelopeFunction::Shape::Constant;
            env.coeffs = {number(toks[3])};
        } else if (kind == "linear") {
            expect_count(toks, 5, 5, ".envelope <name> linear a b");
            env.shape = EnvelopeFunction::Shape::Linear;
            env.coeffs = {number(toks[3]), number(toks[4])};
        } else if (kind == "sine") {
            expect_count(toks, 6, 6, ".envelope <name> sine a b T");
            env.shape = EnvelopeFunction::Shape::Sine;
            env.coeffs = {number(toks[3]), number(toks[4]), number(toks[5])};
            require_positive(toks[5], env.coeffs[2], "modulation period");
        } else if (kind == "table") {
            expect_count(toks, 4, 4, ".envelope <name> table file.csv");
            env.shape = EnvelopeFunction::Shape::Table;
            env.table_path = toks[3].text;
            env.table = load(toks[3]);
        } else {
            fail(ErrorCode::SyntaxError, toks[2], "unknown envelope shape '" + toks[2].text + "'");
        }
        circuit_.envelopes.push_back(std::move(env));
    }

    Table load(const Token& tok) const {
        std::filesystem::path p(tok.text);
        if (p.is_relative() && !base_.empty()) p = base_ / p;
        try {
            return load_table_csv(p);
        } catch (const Error& e) {
            fail(e.code(), tok, e.what());
        }
    }

    void finish() {
        if (!have_period_) {
            throw ParseError(ErrorCode::MissingPeriod, line_, 1, "missing .period directive");
        }
        if (!have_omega_) {
            circuit_.omega.tabulated = false;
            circuit_.omega.value = 2.0 * std::numbers::pi / circuit_.period;
        }
        for (const auto& [line, tok] : partition_refs_) {
            if (!is_ground(tok.text) && circuit_.find_node(tok.text) < 0) {
                throw ParseError(ErrorCode::UndefinedNode, line, tok.column, "undefined node " + tok.text);
            }
        }
        for (const auto& [line, tok] : envelope_refs_) {
            if (!circuit_.find_envelope(tok.text)) {
                throw ParseError(ErrorCode::InvalidParameter, line, tok.column, "undefined envelope " + tok.text);
            }
        }
    }

    std::string_view text_;
    std::filesystem::path base_;
    Circuit circuit_;
    int line_ = 0;
    bool have_period_ = false;
    bool have_omega_ = false;
    std::vector<std::pair<int, Token>> partition_refs_;
    std::vector<std::pair<int, Token>> envelope_refs_;
};

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::optional<double> parse_spice_number(const std::string& text) {
    if (text.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str()) return std::nullopt;
    const std::string suffix = lower(std::string(end));
    double scale = 1.0;
    if (suffix.empty()) {
        scale = 1.0;
    } else if (suffix == "meg") {
        scale = 1e6;
    } else if (suffix.size() == 1) {
        switch (suffix[0]) {
            case 'f': scale = 1e-15; break;
            case 'p': scale = 1e-12; break;
            case 'n': scale = 1e-9; break;
            case 'u': scale = 1e-6; break;
            case 'm': scale = 1e-3; break;
            case 'k': scale = 1e3; break;
            case 'g': scale = 1e9; break;
            case 't': scale = 1e12; break;
            default: return std::nullopt;
        }
    } else {
        return std::nullopt;
    }
    const double out = v * scale;
    if (!std::isfinite(out)) return std::nullopt;
    return out;
}

Circuit parse_netlist(std::string_view text, const std::filesystem::path& base_dir) {
    return Parser(text, base_dir).run();
}

Circuit parse_netlist_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open netlist " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_netlist(ss.str(), path.parent_path());
}

std::string serialize_netlist(const Circuit& circuit) {
    std::ostringstream out;
    auto node_name = [&](int id) { return id == kGround ? std::string("0") : circuit.nodes.at(id); };
    for (const auto& env : circuit.envelopes) {
        out << ".envelope " << env.name;
        switch (env.shape) {
            case EnvelopeFunction::Shape::Constant: out << " const"; break;
            case EnvelopeFunction::Shape::Linear: out << " linear"; break;
            case EnvelopeFunction::Shape::Sine: out << " sine"; break;
            case EnvelopeFunction::Shape::Table: out << " table " << env.table_path; break;
        }
        for (double c : env.coeffs) out << ' ' << fmt_double(c);
        out << '\n';
    }
    for (const auto& dev : circuit.devices) {
        out << dev.name;
        for (int t : dev.terminals) out << ' ' << node_name(t);
        if (dev.kind == DeviceKind::VoltageSource || dev.kind == DeviceKind::CurrentSource) {
            const auto& s = dev.source;
            switch (s.shape) {
                case SourceSpec::Shape::Dc: out << " dc " << fmt_double(s.offset); break;
                case SourceSpec::Shape::Sin:
                    out << " sin " << fmt_double(s.offset) << ' ' << fmt_double(s.amplitude) << ' ' << s.harmonic;
                    break;
                case SourceSpec::Shape::Am:
                    out << " am " << fmt_double(s.offset) << ' ' << fmt_double(s.amplitude) << ' ' << s.envelope
                        << ' ' << s.harmonic;
                    break;
            }
        } else {
            for (double p : dev.params) out << ' ' << fmt_double(p);
        }
        out << '\n';
    }
    for (const auto& part : circuit.partitions) {
        out << ".partition " << part.name;
        for (const auto& n : part.nodes) out << ' ' << n;
        out << '\n';
    }
    out << ".period " << fmt_double(circuit.period) << '\n';
    if (circuit.omega.tabulated) {
        out << ".omega table " << circuit.omega.table_path << '\n';
    } else {
        out << ".omega const " << fmt_double(circuit.omega.value) << '\n';
    }
    return out.str();
}

}  // namespace mrsim
