#pragma once

// Squirrel-cage induction machine in the stationary alpha-beta frame, plus the
// per-phase equivalent circuit used to check it.
//
// Clarke transform is amplitude invariant, so instantaneous three-phase
// power is 1.5 * (v_alpha i_alpha + v_beta i_beta) + 3 * v0 i0. The stator is
// star connected with an isolated neutral; zero-sequence current is zero.

#include <array>
#include <functional>

#include <Eigen/Dense>

namespace zsource::loads {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

Vec3 clarke(const Vec3& abc);          ///< (alpha, beta, zero)
Vec3 inverse_clarke(const Vec3& ab0);

struct IMParams {
    double V_rated{400};  ///< line-line rms
    double P_rated{3400};
    double f_rated{50};
    double rpm_rated{1440};
    double Rs{2.125};
    double Rr{2.05};
    double Lls{2e-3};
    double Llr{2e-3};
    double Lm{6.4e-3};
    double J{0.015};
    int pole_pairs{2};

    static IMParams drive_machine() { return {}; }
    /// Throws ConfigError on non-physical values.
    void validate() const;

    double Ls() const { return Lls + Lm; }
    double Lr() const { return Llr + Lm; }
    /// Mechanical synchronous speed in rad/s at supply frequency f.
    double synchronous_speed(double f) const;
};

struct IMState {
    Vec4 psi{Vec4::Zero()};  ///< stator alpha, stator beta, rotor alpha, rotor beta (Wb)
    double omega_r{0};       ///< rotor electrical speed, rad/s
    double theta_r{0};       ///< rotor electrical angle, rad

    double rpm(const IMParams& p) const;
    static IMState at_rpm(double rpm, const IMParams& p);
};

/// (i_s_alpha, i_s_beta, i_r_alpha, i_r_beta).
Vec4 currents(const IMState& s, const IMParams& p);
std::array<double, 3> stator_currents_abc(const IMState& s, const IMParams& p);
double torque(const IMState& s, const IMParams& p);
/// 1.5 * i^T L i over both windings.
double field_energy(const IMState& s, const IMParams& p);

struct IMStepResult {
    IMState state;
    std::array<double, 3> i_abc;
    double torque;
};

/// One RK4 step with v_abc held over the interval. Returned currents and torque
/// belong to the new state.
IMStepResult im_step(const IMState& s, const std::array<double, 3>& v_abc, double t_load,
                     double dt, const IMParams& p);
/// Same, with the shaft driven externally at constant speed.
IMStepResult im_step_locked(const IMState& s, const std::array<double, 3>& v_abc, double dt,
                            const IMParams& p);

/// Supply given as a function of time over [t0, t0 + dt]; keeps RK4's order for smooth sources.
using VoltageFn = std::function<std::array<double, 3>(double)>;
IMStepResult im_step(const IMState& s, const VoltageFn& v_abc, double t0, double t_load,
                     double dt, const IMParams& p, bool locked = false);

struct SteadyPoint {
    double torque{0};       ///< N*m
    double p_in{0};         ///< electrical input, W
    double p_airgap{0};     ///< W
    double i_stator{0};     ///< rms phase current, A
};

/// Per-phase equivalent circuit at slip s, balanced supply V_line (rms) at f.
SteadyPoint im_steady_point(double slip, double V_line, double f, const IMParams& p);
double im_steady_torque(double slip, double V_line, double f, const IMParams& p);

}  // namespace zsource::loads
