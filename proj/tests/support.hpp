#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <random>
#include <string>

#include "mrsim/error.hpp"
#include "mrsim/netlist.hpp"

namespace testing {

inline constexpr double kPi = std::numbers::pi;

// V1 in 0 sin 0 1; R1 in out R; C1 out 0 C
inline std::string rc_netlist(double r, double c, double period, const std::string& extra = "") {
    return "V1 in 0 sin 0 1\nR1 in out " + std::to_string(r) + "\nC1 out 0 " + std::to_string(c) + "\n.period " +
           std::to_string(period) + "\n" + extra;
}

// Steady state of v_out for the RC above, computed from the phasor
// H = 1 / (1 + j w R C).
inline double rc_phasor(double r, double c, double period, double t) {
    const double w = 2.0 * kPi / period;
    const std::complex<double> h = 1.0 / (1.0 + std::complex<double>(0.0, w * r * c));
    return std::abs(h) * std::sin(w * t + std::arg(h));
}

// Code of the mrsim::Error thrown by f, or nullopt when nothing is thrown.
template <class F>
std::optional<mrsim::ErrorCode> error_code(F&& f) {
    try {
        f();
    } catch (const mrsim::Error& e) {
        return e.code();
    }
    return std::nullopt;
}

inline std::mt19937_64 rng(unsigned seed) { return std::mt19937_64(seed); }

}  // namespace testing
