#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mrsim/error.hpp"
#include "mrsim/mna.hpp"
#include "support.hpp"

using namespace mrsim;

namespace {

SystemLayout layout_of(const std::string& text, int sub = 0) {
    const auto c = parse_netlist(text);
    const auto pc = apply_node_tearing(c);
    return build_layout(pc.subcircuits.at(sub), pc.envelopes, pc.period);
}

// Largest central-difference mismatch of dq and dg, relative to the larger
// of the two Jacobian norms.
double jacobian_fd_error(const SystemLayout& layout, const Eigen::VectorXd& x, double tau, double t) {
    const auto s = eval_stamps(layout, x, tau, t);
    const Eigen::MatrixXd dq = s.dq, dg = s.dg;
    const int m = layout.dimension();
    Eigen::MatrixXd fq(m, m), fg(m, m);
    for (int j = 0; j < m; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
        Eigen::VectorXd xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const auto sp = eval_stamps(layout, xp, tau, t);
        const auto sm = eval_stamps(layout, xm, tau, t);
        fq.col(j) = (sp.q - sm.q) / (2 * h);
        fg.col(j) = (sp.g - sm.g) / (2 * h);
    }
    const double scale = std::max({dq.cwiseAbs().maxCoeff(), dg.cwiseAbs().maxCoeff(), 1e-300});
    return std::max((fq - dq).cwiseAbs().maxCoeff(), (fg - dg).cwiseAbs().maxCoeff()) / scale;
}

}  // namespace

TEST_SUITE("mna") {

TEST_CASE("layout ordering") {
    const auto l1 = layout_of("R1 n1 m 1\nR2 m 0 1\n.partition A n1\n.partition B m\n.period 1");
    CHECK(l1.dimension() == 3);  // v_n1, v_m', iconn
    CHECK(l1.names().back().rfind("iconn", 0) == 0);
    CHECK(l1.kind(2) == SystemLayout::UnknownKind::ConnectionCurrent);

    const auto l2 = layout_of("V1 n1 0 dc 1\nL1 n1 n2 1\nR1 n2 0 1\n.period 1");
    CHECK(l2.names() == std::vector<std::string>{"v_n1", "v_n2", "i_V1", "i_L1"});
    CHECK(l2.dimension() == 4);

    // B owns nothing but its node, which A's resistor reaches.
    const auto l3 = layout_of("R1 a b 1\nR2 a 0 1\n.partition A a\n.partition B b\n.period 1", 1);
    CHECK(l3.dimension() == 2);
    CHECK(l3.kind(0) == SystemLayout::UnknownKind::NodeVoltage);
    CHECK(l3.kind(1) == SystemLayout::UnknownKind::ConnectionCurrent);
}

TEST_CASE("resistor and capacitor stamps") {
    const auto r = eval_stamps(layout_of("R1 n1 0 2.0\n.period 1"), Eigen::VectorXd::Constant(1, 4.0), 0.0, 0.0);
    CHECK(r.g[0] == doctest::Approx(2.0));
    CHECK(Eigen::MatrixXd(r.dg)(0, 0) == doctest::Approx(0.5));
    CHECK(r.q[0] == 0.0);

    const auto c = eval_stamps(layout_of("C1 n1 0 1e-6\n.period 1"), Eigen::VectorXd::Constant(1, 2.0), 0.0, 0.0);
    CHECK(c.q[0] == doctest::Approx(2e-6));
    CHECK(Eigen::MatrixXd(c.dq)(0, 0) == doctest::Approx(1e-6));
    CHECK(c.g[0] == 0.0);
}

TEST_CASE("inductor flux sits on the branch row") {
    const auto l = layout_of("L1 a 0 2e-3\nR1 a 0 1\n.period 1");
    Eigen::VectorXd x(2);
    x << 0.3, 0.5;  // v_a, i_L1
    const auto s = eval_stamps(l, x, 0.0, 0.0);
    CHECK(s.q[1] == doctest::Approx(-2e-3 * 0.5));
    CHECK(s.q[0] == 0.0);
}

TEST_CASE("scalar device models") {
    const auto d = diode_current(0.0, 1e-12, 0.025);
    CHECK(d.current == 0.0);
    CHECK(d.conductance == doctest::Approx(4e-11));

    // Linear continuation beyond 40 Vt keeps the slope of the exponential.
    const double vt = 0.025, is = 1e-12;
    const auto a = diode_current(40 * vt, is, vt);
    const auto b = diode_current(45 * vt, is, vt);
    CHECK(std::isfinite(diode_current(1e3, is, vt).current));
    CHECK(b.conductance == doctest::Approx(a.conductance));
    CHECK(b.current == doctest::Approx(a.current + a.conductance * 5 * vt));

    // Saturation, vgs = 2, vds = 3, lambda = 0.
    const auto m = mosfet_forward(2.0, 3.0, 1e-3, 1.0, 0.0);
    CHECK(m.id == doctest::Approx(0.5e-3 * 1.0 * 1.0));
    CHECK(m.gm == doctest::Approx(1e-3));
    CHECK(m.gds == 0.0);
    // Triode, vds < vgs - vt.
    const auto tr = mosfet_forward(3.0, 0.5, 1e-3, 1.0, 0.0);
    CHECK(tr.id == doctest::Approx(1e-3 * (2.0 * 0.5 - 0.125)));
    CHECK(mosfet_forward(0.5, 1.0, 1e-3, 1.0, 0.0).id == 0.0);
}

TEST_CASE("sources") {
    const auto c = parse_netlist("V1 a 0 am 0 1 e\nR1 a 0 1\n.envelope e linear 1 0.5\n.period 2\n");
    BivariateSource src{c.devices[0].source, *c.find_envelope("e"), c.period};
    CHECK(eval_source(src, 2.0, 0.5) == doctest::Approx(2.0));
    CHECK(eval_source(src, 2.0, 0.5 + 3 * c.period) == doctest::Approx(2.0));

    BivariateSource dc{SourceSpec{SourceSpec::Shape::Dc, 5.0, 0.0, 1, ""}, {}, 1.0};
    CHECK(eval_source(dc, 3.7, 0.123) == 5.0);
    BivariateSource sn{SourceSpec{SourceSpec::Shape::Sin, 0.0, 1.0, 1, ""}, {}, 1.0};
    CHECK(eval_source(sn, 9.0, 0.25) == doctest::Approx(1.0));
    BivariateSource h3{SourceSpec{SourceSpec::Shape::Sin, 0.0, 1.0, 3, ""}, {}, 1.0};
    CHECK(eval_source(h3, 0.0, 1.0 / 12.0) == doctest::Approx(1.0));

    EnvelopeFunction sine{"s", EnvelopeFunction::Shape::Sine, {1.0, 0.5, 10.0}, "", {}};
    CHECK(sine(2.5) == doctest::Approx(1.5));
    Table tab({0.0, 1.0}, {1.0, 3.0});
    EnvelopeFunction tenv{"t", EnvelopeFunction::Shape::Table, {}, "", tab};
    BivariateSource am{SourceSpec{SourceSpec::Shape::Am, 0.0, 1.0, 1, "t"}, tenv, 1.0};
    CHECK(eval_source(am, 0.5, 0.25) == doctest::Approx(2.0));
    CHECK_THROWS_AS(eval_source(am, 1.5, 0.25), Error);
}

TEST_CASE("source folding sign") {
    // V1 a 0 dc 3: branch row reads v_a - s = 0; the KCL row of a carries +i.
    const auto l = layout_of("V1 a 0 dc 3\nR1 a 0 1\n.period 1");
    Eigen::VectorXd x(2);
    x << 3.0, -3.0;
    const auto s = eval_stamps(l, x, 0.0, 0.0);
    CHECK(s.g.cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-14));
    const auto zero = eval_stamps(l, Eigen::VectorXd::Zero(2), 0.0, 0.0);
    CHECK(zero.g[1] == doctest::Approx(-3.0));

    const auto li = layout_of("I1 0 a dc 2\nR1 a 0 1\n.period 1");
    CHECK(eval_stamps(li, Eigen::VectorXd::Zero(1), 0.0, 0.0).g[0] == doctest::Approx(-2.0));
}

TEST_CASE("passive circuits vanish at the origin") {
    const auto l = layout_of("R1 a b 1\nC1 b 0 1\nL1 a 0 1\nD1 b c 1e-14 0.025\nR2 c 0 5\nM1 c a b 1e-3 0.5 0.01\n.period 1");
    for (double t : {0.0, 0.3, 0.77}) {
        const auto s = eval_stamps(l, Eigen::VectorXd::Zero(l.dimension()), 0.0, t);
        CHECK(s.g.cwiseAbs().maxCoeff() == 0.0);
        CHECK(s.q.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("superposition of stamps") {
    // Both halves see nodes x, y in the same order; the 1e300 resistors only
    // pin that order.
    const std::string pad = "R8 x 0 1e300\nR9 y 0 1e300\n";
    const std::string a = "R1 x y 3\nC1 y 0 2\n", b = "D1 x 0 1e-12 0.03\nC2 x y 0.5\nM1 y x 0 1e-3 0.2 0\n";
    const auto la = layout_of(pad + a + ".period 1");
    const auto lb = layout_of(pad + b + ".period 1");
    const auto lab = layout_of(pad + a + b + ".period 1");
    REQUIRE(lab.dimension() == 2);
    auto gen = testing::rng(3);
    std::uniform_real_distribution<double> u(-0.6, 0.6);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x(2);
        x << u(gen), u(gen);
        const auto sa = eval_stamps(la, x, 0.0, 0.0);
        const auto sb = eval_stamps(lb, x, 0.0, 0.0);
        const auto sab = eval_stamps(lab, x, 0.0, 0.0);
        CHECK((sa.g + sb.g - sab.g).cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + sab.g.cwiseAbs().maxCoeff()));
        CHECK((sa.q + sb.q - sab.q).cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + sab.q.cwiseAbs().maxCoeff()));
        const Eigen::MatrixXd dg = Eigen::MatrixXd(sa.dg) + Eigen::MatrixXd(sb.dg) - Eigen::MatrixXd(sab.dg);
        CHECK(dg.cwiseAbs().maxCoeff() <= 1e-14);
    }
}

TEST_CASE("KCL over cutsets") {
    // Passive, source-free network: the node rows of g are the currents
    // leaving each node, so any node subset balances against the devices
    // crossing its boundary, and the full node set sums to the ground current.
    const auto c = parse_netlist("R1 a b 1\nR2 b c 2\nR3 c a 3\nD1 a 0 1e-12 0.03\nR4 c 0 4\nM1 b a c 1e-3 0.2 0.01\n.period 1");
    const auto l = build_layout(monolithic(c).subcircuits[0], {}, 1.0);
    auto gen = testing::rng(7);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd x(3);
        for (int j = 0; j < 3; ++j) x[j] = u(gen);
        const auto s = eval_stamps(l, x, 0.0, 0.0);
        const double va = x[0], vb = x[1], vc = x[2];
        const double to_ground = diode_current(va, 1e-12, 0.03).current + vc / 4.0;
        CHECK(s.g.sum() == doctest::Approx(to_ground).epsilon(1e-12));
        // Cutset {a}: R1, R3, D1 and the MOSFET gate (no current).
        const double out_a = (va - vb) / 1.0 + (va - vc) / 3.0 + diode_current(va, 1e-12, 0.03).current;
        CHECK(s.g[0] == doctest::Approx(out_a).epsilon(1e-12));
    }
}

TEST_CASE("finite-difference Jacobians for every device kind") {
    const char* nets[] = {
        "R1 a b 3\nR2 b 0 1\n.period 1",
        "C1 a b 2e-3\nC2 b 0 1\nR1 a 0 1\n.period 1",
        "L1 a b 1e-3\nR1 b 0 1\n.period 1",
        "V1 a 0 sin 0.5 2\nR1 a 0 1\n.period 1",
        "I1 a 0 am 0.1 2 e\nR1 a 0 1\n.envelope e sine 1 0.5 3\n.period 1",
        "D1 a b 1e-12 0.03\nR1 b 0 1\nR2 a 0 1\n.period 1",
        "M1 d g s 2e-3 0.4 0.02\nR1 d 0 1\nR2 g 0 1\nR3 s 0 1\n.period 1",
        "R1 a m 1\nC1 m 0 1\nD1 m 0 1e-12 0.03\n.partition A a\n.partition B m\n.period 1",
    };
    auto gen = testing::rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (const char* net : nets) {
        const auto pc = apply_node_tearing(parse_netlist(net));
        for (const auto& sub : pc.subcircuits) {
            const auto layout = build_layout(sub, pc.envelopes, pc.period);
            double worst = 0.0;
            for (int trial = 0; trial < 100; ++trial) {
                Eigen::VectorXd x(layout.dimension());
                for (int j = 0; j < x.size(); ++j) x[j] = u(gen);
                worst = std::max(worst, jacobian_fd_error(layout, x, u(gen) + 1.0, u(gen) + 1.0));
            }
            INFO(net);
            CHECK(worst <= 1e-6);
        }
    }
}

TEST_CASE("mosfet symmetric under drain-source exchange") {
    const auto l = layout_of("M1 d g s 1e-3 0.5 0.01\nR1 d 0 1\nR2 g 0 1\nR3 s 0 1\n.period 1");
    Eigen::VectorXd x(3), y(3);
    x << 0.2, 1.5, 0.9;  // v_d < v_s: reverse operation
    y << 0.9, 1.5, 0.2;
    const auto sx = eval_stamps(l, x, 0.0, 0.0);
    const auto sy = eval_stamps(l, y, 0.0, 0.0);
    // Drain current of the reversed device equals minus the forward one.
    CHECK(sx.g[0] - x[0] == doctest::Approx(-(sy.g[0] - y[0])));
}

TEST_CASE("capacitor charge Jacobian is symmetric") {
    const auto l = layout_of("C1 a b 2\nC2 b c 3\nC3 c 0 1\nL1 a 0 1\nR1 b 0 1\n.period 1");
    const Eigen::MatrixXd dq = eval_stamps(l, Eigen::VectorXd::Random(l.dimension()), 0.0, 0.0).dq;
    CHECK((dq - dq.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("invalid states") {
    const auto l = layout_of("R1 a 0 1\n.period 1");
    Eigen::VectorXd x(1);
    x[0] = std::nan("");
    CHECK_THROWS_WITH_AS(eval_stamps(l, x, 0.0, 0.0), doctest::Contains("non-finite"), Error);
}

}  // TEST_SUITE
