#include "zsource/loads.hpp"

#include <cmath>
#include <complex>

#include "zsource/errors.hpp"

namespace zsource::loads {

namespace {
constexpr double pi = 3.14159265358979323846;
const double sqrt3 = std::sqrt(3.0);

Eigen::Matrix4d inductance(const IMParams& p) {
    Eigen::Matrix4d L = Eigen::Matrix4d::Zero();
    L(0, 0) = L(1, 1) = p.Ls();
    L(2, 2) = L(3, 3) = p.Lr();
    L(0, 2) = L(2, 0) = L(1, 3) = L(3, 1) = p.Lm;
    return L;
}

struct Deriv {
    Vec4 dpsi;
    double domega;
};

Deriv derivative(const IMState& s, const Vec3& vab, double t_load, bool locked,
                 const IMParams& p) {
    const Vec4 i = currents(s, p);
    Deriv d;
    d.dpsi(0) = vab(0) - p.Rs * i(0);
    d.dpsi(1) = vab(1) - p.Rs * i(1);
    d.dpsi(2) = -p.Rr * i(2) - s.omega_r * s.psi(3);
    d.dpsi(3) = -p.Rr * i(3) + s.omega_r * s.psi(2);
    d.domega = locked ? 0.0 : p.pole_pairs * (torque(s, p) - t_load) / p.J;
    return d;
}

template <typename Supply>
IMStepResult rk4(const IMState& s, const Supply& vab_at, double t_load, double dt, bool locked,
                 const IMParams& p) {
    const Vec3 v0 = vab_at(0.0), vh = vab_at(dt / 2), v1 = vab_at(dt);
    auto shifted = [&](const Deriv& k, double h) {
        IMState x = s;
        x.psi += h * k.dpsi;
        x.omega_r += h * k.domega;
        return x;
    };
    const Deriv k1 = derivative(s, v0, t_load, locked, p);
    const Deriv k2 = derivative(shifted(k1, dt / 2), vh, t_load, locked, p);
    const Deriv k3 = derivative(shifted(k2, dt / 2), vh, t_load, locked, p);
    const Deriv k4 = derivative(shifted(k3, dt), v1, t_load, locked, p);

    IMStepResult r;
    r.state = s;
    r.state.psi += dt / 6 * (k1.dpsi + 2 * k2.dpsi + 2 * k3.dpsi + k4.dpsi);
    r.state.omega_r += dt / 6 * (k1.domega + 2 * k2.domega + 2 * k3.domega + k4.domega);
    r.state.theta_r = std::fmod(s.theta_r + dt * 0.5 * (s.omega_r + r.state.omega_r), 2 * pi);
    r.i_abc = stator_currents_abc(r.state, p);
    r.torque = torque(r.state, p);
    return r;
}
}  // namespace

Vec3 clarke(const Vec3& abc) {
    return {(2.0 * abc(0) - abc(1) - abc(2)) / 3.0, (abc(1) - abc(2)) / sqrt3,
            (abc(0) + abc(1) + abc(2)) / 3.0};
}

Vec3 inverse_clarke(const Vec3& ab0) {
    return {ab0(0) + ab0(2), -0.5 * ab0(0) + 0.5 * sqrt3 * ab0(1) + ab0(2),
            -0.5 * ab0(0) - 0.5 * sqrt3 * ab0(1) + ab0(2)};
}

void IMParams::validate() const {
    if (!(Rs > 0 && Rr > 0 && Lls > 0 && Llr > 0 && Lm > 0 && J > 0 && pole_pairs >= 1 &&
          f_rated > 0))
        throw ConfigError("induction machine parameters must be positive");
}

double IMParams::synchronous_speed(double f) const { return 2 * pi * f / pole_pairs; }

double IMState::rpm(const IMParams& p) const { return omega_r / p.pole_pairs * 60.0 / (2 * pi); }

IMState IMState::at_rpm(double rpm, const IMParams& p) {
    IMState s;
    s.omega_r = rpm * 2 * pi / 60.0 * p.pole_pairs;
    return s;
}

Vec4 currents(const IMState& s, const IMParams& p) {
    // 2x2 blocks decouple per axis: [psi_s; psi_r] = [Ls Lm; Lm Lr] [i_s; i_r].
    const double det = p.Ls() * p.Lr() - p.Lm * p.Lm;
    Vec4 i;
    for (int ax = 0; ax < 2; ++ax) {
        const double ps = s.psi(ax), pr = s.psi(ax + 2);
        i(ax) = (p.Lr() * ps - p.Lm * pr) / det;
        i(ax + 2) = (p.Ls() * pr - p.Lm * ps) / det;
    }
    return i;
}

std::array<double, 3> stator_currents_abc(const IMState& s, const IMParams& p) {
    const Vec4 i = currents(s, p);
    const Vec3 abc = inverse_clarke(Vec3(i(0), i(1), 0.0));
    return {abc(0), abc(1), abc(2)};
}

double torque(const IMState& s, const IMParams& p) {
    const Vec4 i = currents(s, p);
    return 1.5 * p.pole_pairs * (s.psi(0) * i(1) - s.psi(1) * i(0));
}

double field_energy(const IMState& s, const IMParams& p) {
    const Vec4 i = currents(s, p);
    return 0.75 * i.dot(inductance(p) * i);
}

IMStepResult im_step(const IMState& s, const std::array<double, 3>& v_abc, double t_load,
                     double dt, const IMParams& p) {
    const Vec3 v = clarke(Vec3(v_abc[0], v_abc[1], v_abc[2]));
    return rk4(s, [&](double) { return v; }, t_load, dt, false, p);
}

IMStepResult im_step_locked(const IMState& s, const std::array<double, 3>& v_abc, double dt,
                            const IMParams& p) {
    const Vec3 v = clarke(Vec3(v_abc[0], v_abc[1], v_abc[2]));
    return rk4(s, [&](double) { return v; }, 0.0, dt, true, p);
}

IMStepResult im_step(const IMState& s, const VoltageFn& v_abc, double t0, double t_load,
                     double dt, const IMParams& p, bool locked) {
    auto vab = [&](double tau) {
        const auto v = v_abc(t0 + tau);
        return clarke(Vec3(v[0], v[1], v[2]));
    };
    return rk4(s, vab, t_load, dt, locked, p);
}

SteadyPoint im_steady_point(double slip, double V_line, double f, const IMParams& p) {
    using C = std::complex<double>;
    const double w = 2 * pi * f;
    const C V(V_line / sqrt3, 0);
    const C Zs(p.Rs, w * p.Lls), Zm(0, w * p.Lm);
    SteadyPoint out;
    C Is;
    if (slip == 0.0) {
        Is = V / (Zs + Zm);
        out.i_stator = std::abs(Is);
        out.p_in = 3 * (V * std::conj(Is)).real();
        return out;
    }
    const C Zr(p.Rr / slip, w * p.Llr);
    Is = V / (Zs + Zm * Zr / (Zm + Zr));
    const C Ir = Is * Zm / (Zm + Zr);
    out.i_stator = std::abs(Is);
    out.p_in = 3 * (V * std::conj(Is)).real();
    out.p_airgap = 3 * std::norm(Ir) * p.Rr / slip;
    out.torque = out.p_airgap / p.synchronous_speed(f);
    return out;
}

double im_steady_torque(double slip, double V_line, double f, const IMParams& p) {
    return im_steady_point(slip, V_line, f, p).torque;
}

}  // namespace zsource::loads
