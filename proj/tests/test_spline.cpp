#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mrsim/error.hpp"
#include "mrsim/spline.hpp"
#include "support.hpp"

using namespace mrsim;
using testing::error_code;

namespace {

// Plain Cox-de Boor recursion on an explicit knot vector.
double cox_de_boor(const std::vector<double>& u, int j, int d, double t) {
    if (d == 0) return (u[j] <= t && t < u[j + 1]) ? 1.0 : 0.0;
    double v = 0.0;
    if (u[j + d] > u[j]) v += (t - u[j]) / (u[j + d] - u[j]) * cox_de_boor(u, j, d - 1, t);
    if (u[j + d + 1] > u[j + 1]) v += (u[j + d + 1] - t) / (u[j + d + 1] - u[j + 1]) * cox_de_boor(u, j + 1, d - 1, t);
    return v;
}

std::vector<double> random_knots(std::mt19937_64& gen, int n, double period) {
    std::uniform_real_distribution<double> u(0.3, 1.7);
    std::vector<double> gaps(n);
    for (auto& g : gaps) g = u(gen);
    double total = 0.0;
    for (double g : gaps) total += g;
    std::vector<double> k(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += gaps[i] / total * period;
        k[i] = acc;
    }
    k.back() = period;
    return k;
}

SplineWaveform random_waveform(std::mt19937_64& gen, const PeriodicSplineBasis& b, int cols) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    SplineWaveform wf{b, Eigen::MatrixXd(b.size(), cols)};
    for (int i = 0; i < b.size(); ++i)
        for (int j = 0; j < cols; ++j) wf.coeffs(i, j) = u(gen);
    return wf;
}

double max_diff(const SplineWaveform& a, const SplineWaveform& b, int samples) {
    double worst = 0.0;
    const double p = a.basis.period();
    for (int s = 0; s < samples; ++s) {
        const double t = p * (s + 0.37) / samples;
        worst = std::max(worst, (eval_waveform(a, t) - eval_waveform(b, t)).cwiseAbs().maxCoeff());
    }
    return worst;
}

}  // namespace

TEST_SUITE("spline") {

TEST_CASE("construction") {
    const auto b = build_basis({0.25, 0.5, 0.75, 1.0}, 3, 1.0);
    CHECK(b.size() == 4);
    CHECK(error_code([] { build_basis({1.0}, 3, 1.0); }) == ErrorCode::TooFewKnots);
    CHECK(error_code([] { build_basis({0.5, 0.25}, 1, 1.0); }) == ErrorCode::NonIncreasingKnots);
    CHECK(error_code([] { build_basis({0.25, 0.25, 0.5}, 1, 1.0); }) == ErrorCode::NonIncreasingKnots);
    CHECK(error_code([] { build_basis({0.0, 0.5, 1.0}, 1, 1.0); }) == ErrorCode::KnotOutOfDomain);
    CHECK(error_code([] { build_basis({0.5, 1.5}, 1, 1.0); }) == ErrorCode::KnotOutOfDomain);
    CHECK(b.knot(-1) == doctest::Approx(0.0));
    CHECK(b.knot(5) == doctest::Approx(1.5));
    CHECK(b.index(-1) == 3);
}

TEST_CASE("basis values against Cox-de Boor") {
    // Cubic on uniform h: the function centered at a knot peaks at 4/6 there.
    const auto b = PeriodicSplineBasis::uniform(8, 3, 1.0);
    const auto act = b.eval_active(b.knots()[3]);
    double centered = 0.0;
    for (int k = 0; k <= 3; ++k)
        if ((act.first + k) % 8 == 3) centered = act.values[k];
    CHECK(centered == doctest::Approx(4.0 / 6.0).epsilon(1e-14));

    const auto hat = PeriodicSplineBasis::uniform(5, 1, 1.0);
    const auto ha = hat.eval_active(hat.knots()[2]);
    CHECK(*std::max_element(ha.values.begin(), ha.values.begin() + 2) == doctest::Approx(1.0));

    // Random grids: every active value matches the recursion on the
    // unrolled extended knots.
    auto gen = testing::rng(5);
    for (int d = 1; d <= 5; ++d) {
        const auto rb = build_basis(random_knots(gen, 11, 2.0), d, 2.0);
        std::vector<double> u;
        for (long j = -3L * rb.size(); j <= 3L * rb.size(); ++j) u.push_back(rb.knot(j));
        const long base = 3L * rb.size();
        std::uniform_real_distribution<double> ut(0.0, 2.0);
        for (int trial = 0; trial < 50; ++trial) {
            const double t = ut(gen);
            const auto a = rb.eval_active(t);
            for (int k = 0; k <= d; ++k) {
                // Periodized function j is the sum of its translates.
                double expect = 0.0;
                const int j = (a.first + k) % rb.size();
                for (int wrap = -2; wrap <= 2; ++wrap) {
                    const long lo = base + j - rb.shift() + wrap * rb.size();
                    if (lo >= 0 && lo + d + 1 < static_cast<long>(u.size())) expect += cox_de_boor(u, lo, d, t);
                }
                CHECK(a.values[k] == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("partition of unity and local support") {
    auto gen = testing::rng(17);
    std::uniform_real_distribution<double> ut(-3.0, 3.0);
    for (int d = 1; d <= 5; ++d) {
        const auto b = build_basis(random_knots(gen, d + 1 + 3, 1.0), d, 1.0);
        for (int trial = 0; trial < 200; ++trial) {
            const auto a = b.eval_active(ut(gen));
            double sum = 0.0, dsum = 0.0;
            for (int k = 0; k <= d; ++k) {
                sum += a.values[k];
                dsum += a.derivs[k];
                CHECK(a.values[k] >= -1e-15);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
            CHECK(std::abs(dsum) <= 1e-9);
        }
    }
}

TEST_CASE("waveform evaluation") {
    auto gen = testing::rng(23);
    const auto b = build_basis(random_knots(gen, 9, 3.0), 3, 3.0);
    SplineWaveform c{b, Eigen::MatrixXd(9, 2)};
    c.coeffs.col(0).setConstant(1.5);
    c.coeffs.col(1).setConstant(-2.0);
    for (double t : {0.0, 0.4, 1.7, 3.0}) {
        CHECK(eval_waveform(c, t)[0] == doctest::Approx(1.5));
        CHECK(eval_waveform(c, t)[1] == doctest::Approx(-2.0));
        CHECK(eval_waveform_derivative(c, t).cwiseAbs().maxCoeff() <= 1e-12);
    }

    // Degree 1 interpolates its knot values.
    const auto h = build_basis(random_knots(gen, 7, 1.0), 1, 1.0);
    SplineWaveform lin{h, Eigen::MatrixXd(7, 1)};
    for (int k = 0; k < 7; ++k) lin.coeffs(k, 0) = std::cos(2 * testing::kPi * h.knots()[k]);
    for (int k = 0; k < 7; ++k) CHECK(eval_waveform(lin, h.knots()[k])[0] == doctest::Approx(lin.coeffs(k, 0)));

    // Periodicity and derivative by central differences.
    const auto wf = random_waveform(gen, build_basis(random_knots(gen, 12, 2.0), 4, 2.0), 3);
    std::uniform_real_distribution<double> ut(0.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        const double t = ut(gen);
        CHECK((eval_waveform(wf, t) - eval_waveform(wf, t + 2.0)).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((eval_waveform(wf, t) - eval_waveform(wf, t - 4.0)).cwiseAbs().maxCoeff() <= 1e-12);
        const double e = 1e-6;
        const Eigen::VectorXd fd = (eval_waveform(wf, t + e) - eval_waveform(wf, t - e)) / (2 * e);
        CHECK((fd - eval_waveform_derivative(wf, t)).cwiseAbs().maxCoeff() <= 1e-5);
    }
}

TEST_CASE("exact integration") {
    const auto b = PeriodicSplineBasis::uniform(10, 3, 1.0);
    SplineWaveform one{b, Eigen::MatrixXd::Ones(10, 1)};
    CHECK(integrate_waveform(one, 0.0, 1.0)[0] == doctest::Approx(1.0));
    CHECK(integrate_waveform(one, 0.13, 0.71)[0] == doctest::Approx(0.58));
    CHECK(integrate_waveform(one, 0.4, 0.4)[0] == 0.0);
    CHECK(error_code([&] { integrate_waveform(one, 0.5, 0.4); }) == ErrorCode::InvalidInterval);
    CHECK(error_code([&] { integrate_waveform(one, 0.0, 1.5); }) == ErrorCode::InvalidInterval);

    // A single cubic B-spline on spacing h integrates to h; checked by a
    // midpoint Riemann sum as well.
    SplineWaveform single{b, Eigen::MatrixXd::Zero(10, 1)};
    single.coeffs(4, 0) = 1.0;
    const double exact = integrate_waveform(single, 0.0, 1.0)[0];
    CHECK(exact == doctest::Approx(0.1).epsilon(1e-14));
    const int m = 100000;
    double riemann = 0.0;
    for (int s = 0; s < m; ++s) riemann += eval_waveform(single, (s + 0.5) / m)[0] / m;
    CHECK(riemann == doctest::Approx(0.1).epsilon(1e-9));

    // Random splines, random windows, 1e6-point midpoint sums.
    auto gen = testing::rng(29);
    std::uniform_real_distribution<double> ut(0.0, 1.0);
    for (int d : {1, 2, 3, 5}) {
        const auto wf = random_waveform(gen, build_basis(random_knots(gen, 13, 1.0), d, 1.0), 1);
        const double a = ut(gen) - 0.5, len = 0.9 * ut(gen) + 0.1;
        const int samples = 1000000;
        const double h = len / samples;
        double sum = 0.0;
        for (int s = 0; s < samples; ++s) sum += eval_waveform(wf, a + (s + 0.5) * h)[0];
        sum *= h;
        double mag = 0.0;
        for (int s = 0; s < samples; s += 97) mag += std::abs(eval_waveform(wf, a + (s + 0.5) * h)[0]);
        mag *= 97 * h;
        INFO("degree " << d);
        CHECK(std::abs(integrate_waveform(wf, a, a + len)[0] - sum) <= 1e-9 * std::max(mag, 1e-3));
    }

    // integrate_basis sums to the interval length.
    double total = 0.0;
    for (const auto& [k, v] : integrate_basis(b, 0.33, 0.91)) total += v;
    CHECK(total == doctest::Approx(0.58));
}

TEST_CASE("knot insertion") {
    auto gen = testing::rng(31);
    std::uniform_real_distribution<double> ut(0.0, 1.0);
    for (int d = 1; d <= 5; ++d) {
        const auto b = build_basis(random_knots(gen, 9, 1.0), d, 1.0);
        const auto wf = random_waveform(gen, b, 2);
        double t_new = ut(gen);
        while (std::any_of(b.knots().begin(), b.knots().end(), [&](double k) { return std::abs(k - t_new) < 1e-3; }))
            t_new = ut(gen);
        const auto ins = insert_knot(b, t_new);
        CHECK(ins.basis.size() == 10);
        CHECK(ins.prolongation.rows() == 10);
        CHECK(ins.prolongation.cols() == 9);
        const Eigen::MatrixXd p = ins.prolongation;
        for (int r = 0; r < 10; ++r) CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-14));
        const SplineWaveform fine{ins.basis, p * wf.coeffs};
        CHECK(max_diff(wf, fine, 1000) <= 1e-12);

        // Removing the inserted knot gives the original coefficients back.
        const int k = static_cast<int>(std::find(ins.basis.knots().begin(), ins.basis.knots().end(), t_new) -
                                       ins.basis.knots().begin());
        const auto rem = remove_knot(ins.basis, k, fine);
        CHECK(rem.basis == b);
        CHECK((rem.coeffs - wf.coeffs).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK(rem.local_error <= 1e-12);
    }

    // Degree 1: the new coefficient is the linear interpolant of its neighbours.
    const auto h = build_basis({0.2, 0.5, 0.9, 1.0}, 1, 1.0);
    SplineWaveform lin{h, Eigen::MatrixXd(4, 1)};
    lin.coeffs << 1.0, 4.0, -2.0, 0.5;
    const auto ins = insert_knot(h, 0.6);
    const Eigen::VectorXd c = Eigen::MatrixXd(ins.prolongation) * lin.coeffs;
    CHECK(c[2] == doctest::Approx(4.0 + (0.1 / 0.4) * (-6.0)));

    CHECK(error_code([&] { insert_knot(h, 0.5); }) == ErrorCode::DuplicateKnot);
    CHECK(error_code([&] { insert_knot(h, 1.2); }) == ErrorCode::KnotOutOfDomain);
}

TEST_CASE("knot removal") {
    const auto b = PeriodicSplineBasis::uniform(10, 3, 1.0);
    SplineWaveform c{b, Eigen::MatrixXd::Constant(10, 1, 0.7)};
    for (int k = 0; k < 10; ++k) {
        const auto r = remove_knot(b, k, c);
        CHECK(r.local_error <= 1e-12);
        CHECK(r.basis.size() == 9);
    }
    CHECK(error_code([] {
              const auto m = PeriodicSplineBasis::uniform(4, 3, 1.0);
              remove_knot(m, 0, SplineWaveform{m, Eigen::MatrixXd::Zero(4, 1)});
          }) == ErrorCode::MinimalGrid);

    // Remove, then re-insert: the re-inserted spline is the coarsened one.
    auto gen = testing::rng(37);
    const auto wf = random_waveform(gen, b, 1);
    const auto r = remove_knot(b, 6, wf);
    const SplineWaveform coarse{r.basis, r.coeffs};
    const auto ins = insert_knot(r.basis, b.knots()[6]);
    const SplineWaveform back{ins.basis, Eigen::MatrixXd(ins.prolongation) * r.coeffs};
    CHECK(max_diff(coarse, back, 1000) <= 1e-12);
    CHECK(r.local_error > 0.0);
}

TEST_CASE("degree-1 tent removal against a dense oracle") {
    // Tent of height 1 at knot r on spacing h. The local fit uses the coarse
    // hats at t_{r-1} and t_{r+1} over [t_{r-2}, t_{r+2}].
    const int n = 8, r = 4;
    const double h = 1.0 / n;
    const auto b = PeriodicSplineBasis::uniform(n, 1, 1.0);
    SplineWaveform tent{b, Eigen::MatrixXd::Zero(n, 1)};
    tent.coeffs(r, 0) = 1.0;
    const auto rem = remove_knot(b, r, tent);

    const double x0 = b.knots()[r];
    auto f = [&](double x) { return std::max(0.0, 1.0 - std::abs(x - x0) / h); };
    auto left = [&](double x) {  // coarse hat at x0 - h, support [x0 - 2h, x0 + h]
        if (x < x0 - 2 * h || x > x0 + h) return 0.0;
        return x <= x0 - h ? (x - (x0 - 2 * h)) / h : (x0 + h - x) / (2 * h);
    };
    auto right = [&](double x) { return left(2 * x0 - x); };
    const int m = 40000;
    Eigen::Matrix2d gram = Eigen::Matrix2d::Zero();
    Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
    for (int s = 0; s < m; ++s) {
        const double x = x0 - 2 * h + 4 * h * (s + 0.5) / m;
        const Eigen::Vector2d phi(left(x), right(x));
        gram += phi * phi.transpose();
        rhs += phi * f(x);
    }
    const Eigen::Vector2d ab = gram.ldlt().solve(rhs);
    double ls_err = 0.0;
    for (int s = 0; s <= m; ++s) {
        const double x = x0 - 2 * h + 4 * h * s / m;
        ls_err = std::max(ls_err, std::abs(f(x) - ab[0] * left(x) - ab[1] * right(x)));
    }
    CHECK(rem.local_error == doctest::Approx(ls_err).epsilon(1e-4));

    // The least-squares error is bounded below by the best max-norm fit.
    double best = 1e9;
    for (int i = 0; i <= 200; ++i) {
        for (int j = 0; j <= 200; ++j) {
            const double a = i / 200.0, c = j / 200.0;
            double e = 0.0;
            for (int s = 0; s <= 400; ++s) {
                const double x = x0 - 2 * h + 4 * h * s / 400.0;
                e = std::max(e, std::abs(f(x) - a * left(x) - c * right(x)));
            }
            best = std::min(best, e);
        }
    }
    CHECK(best <= rem.local_error + 1e-12);
    CHECK(rem.local_error <= 1.0);
}

TEST_CASE("gram matrix and projection") {
    auto gen = testing::rng(41);
    const auto b = build_basis(random_knots(gen, 10, 1.0), 3, 1.0);
    const Eigen::MatrixXd g = gram_matrix(b);
    CHECK((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(g.sum() == doctest::Approx(1.0));
    CHECK(g.ldlt().vectorD().minCoeff() > 0.0);

    const auto wf = random_waveform(gen, b, 2);
    const auto proj = project_function(b, 2, [&](double t) { return eval_waveform(wf, t); });
    CHECK((proj.coeffs - wf.coeffs).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("grid csv") {
    std::ostringstream out;
    write_grid_csv(out, build_basis({0.25, 0.5, 1.0}, 2, 1.0));
    CHECK(out.str() == "index,knot\n0,0.25\n1,0.5\n2,1\n");
}

}  // TEST_SUITE
