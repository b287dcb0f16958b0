#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "zsource/loads.hpp"

using namespace zsource::loads;
using Catch::Approx;

namespace {

constexpr double pi = 3.14159265358979323846;

std::array<double, 3> supply(double t, double V_line, double f) {
    const double a = V_line * std::sqrt(2.0 / 3.0);
    const double w = 2 * pi * f * t;
    return {a * std::cos(w), a * std::cos(w - 2 * pi / 3), a * std::cos(w + 2 * pi / 3)};
}

struct Settled {
    double torque;
    double p_in;
};

// Speed-locked run; returns cycle averages over the last supply period.
Settled run_locked(double slip, const IMParams& p, double dt = 1e-5, double V_line = 400,
                   double f = 50) {
    auto s = IMState::at_rpm((1 - slip) * 60 * f / p.pole_pairs, p);
    const int per_cycle = static_cast<int>(std::lround(1 / (f * dt)));
    const int cycles = 25;
    Settled out{0, 0};
    for (int k = 0; k < per_cycle * cycles; ++k) {
        const auto r = im_step(s, [&](double t) { return supply(t, V_line, f); }, k * dt, 0.0,
                               dt, p, true);
        if (k >= per_cycle * (cycles - 1)) {
            out.torque += r.torque / per_cycle;
            const auto v = supply((k + 1) * dt, V_line, f);
            for (int ph = 0; ph < 3; ++ph) out.p_in += v[ph] * r.i_abc[ph] / per_cycle;
        }
        s = r.state;
    }
    return out;
}

}  // namespace

TEST_CASE("Clarke round trip", "[loads][property]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-500, 500);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 x(u(rng), u(rng), u(rng));
        REQUIRE((inverse_clarke(clarke(x)) - x).norm() <= 1e-12 * (1 + x.norm()));
    }
    const Vec3 ab0 = clarke(Vec3(1, -0.5, -0.5));
    CHECK(ab0(0) == Approx(1.0));
    CHECK(ab0(1) == Approx(0.0).margin(1e-15));
    CHECK(ab0(2) == Approx(0.0).margin(1e-15));
}

TEST_CASE("equivalent-circuit oracle", "[loads]") {
    const auto p = IMParams::drive_machine();
    CHECK(im_steady_torque(0.0, 400, 50, p) == 0.0);
    CHECK(p.synchronous_speed(50) == Approx(2 * pi * 25));
    const double t4 = im_steady_torque(0.04, 400, 50, p);
    CHECK(t4 == Approx(6.79).epsilon(0.01));
    for (double s : {0.005, 0.01, 0.02}) {
        const double a = im_steady_torque(s, 400, 50, p), b = im_steady_torque(-s, 400, 50, p);
        CHECK(a > 0);
        CHECK(b < 0);
        CHECK(std::abs(a + b) < 0.1 * a);
    }
    // Air-gap power balance: P_in = stator copper + P_airgap.
    const auto sp = im_steady_point(0.04, 400, 50, p);
    CHECK(sp.p_in == Approx(3 * sp.i_stator * sp.i_stator * p.Rs + sp.p_airgap).epsilon(1e-12));
}

TEST_CASE("magnetising current dominates the 3.4 kW drive machine", "[loads]") {
    // With the 6.4 mH magnetising inductance the stator copper loss
    // exceeds any air-gap power the rotor can return, so the electrical input
    // stays positive even at negative slip.
    const auto p = IMParams::drive_machine();
    for (double s : {-0.02, -0.04, -0.08, -0.2}) {
        const auto sp = im_steady_point(s, 400, 50, p);
        CHECK(sp.p_airgap < 0);
        CHECK(sp.p_in > 0);
    }
    // A machine with a realistic magnetising branch does regenerate.
    auto q = p;
    q.Lm = 0.3;
    CHECK(im_steady_point(-0.04, 400, 50, q).p_in < 0);
}

TEST_CASE("zero input keeps the machine at rest", "[loads]") {
    const auto p = IMParams::drive_machine();
    IMState s;
    for (int k = 0; k < 100; ++k) s = im_step(s, {0, 0, 0}, 0, 1e-5, p).state;
    CHECK(s.psi.norm() == 0.0);
    CHECK(s.omega_r == 0.0);
}

TEST_CASE("settled torque matches the equivalent circuit", "[loads]") {
    const auto p = IMParams::drive_machine();
    CHECK(std::abs(run_locked(0.0, p).torque) < 1e-6);
    for (double s : {0.02, 0.04, 0.08}) {
        const double oracle = im_steady_torque(s, 400, 50, p);
        CHECK(run_locked(s, p).torque == Approx(oracle).epsilon(0.02));
    }
}

TEST_CASE("driven above synchronous speed", "[loads]") {
    auto q = IMParams::drive_machine();
    q.Lm = 0.3;
    const auto r = run_locked(-0.04, q);
    CHECK(r.torque < 0);
    CHECK(r.p_in < 0);
    CHECK(r.p_in == Approx(im_steady_point(-0.04, 400, 50, q).p_in).epsilon(0.02));
}

TEST_CASE("per-step power balance", "[loads][property]") {
    const auto p = IMParams::drive_machine();
    IMState s = IMState::at_rpm(300, p);
    const double dt = 1e-6;
    double worst = 0;
    for (int k = 0; k < 20000; ++k) {
        const auto v = supply((k + 0.5) * dt, 400, 50);
        const auto r = im_step(s, v, 1.0, dt, p);
        auto losses = [&](const IMState& x) {
            const Vec4 i = currents(x, p);
            const Vec3 vab = clarke(Vec3(v[0], v[1], v[2]));
            const double pin = 1.5 * (vab(0) * i(0) + vab(1) * i(1));
            const double cu = 1.5 * (p.Rs * (i(0) * i(0) + i(1) * i(1)) +
                                     p.Rr * (i(2) * i(2) + i(3) * i(3)));
            const double mech = torque(x, p) * x.omega_r / p.pole_pairs;
            return std::array<double, 2>{pin, pin - cu - mech};
        };
        const auto a = losses(s), b = losses(r.state);
        const double dW = (field_energy(r.state, p) - field_energy(s, p)) / dt;
        const double scale = std::max(std::abs(a[0]), std::abs(b[0]));
        if (scale > 100) worst = std::max(worst, std::abs(0.5 * (a[1] + b[1]) - dW) / scale);
        s = r.state;
    }
    CHECK(worst < 0.005);
}
