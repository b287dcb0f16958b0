#pragma once

// Two-state (ST / NST) state-space model of the proposed network with ideal
// transformer, ideal diode and lossless storage. It is written from the loop
// equations directly rather than from a netlist, so it serves as an
// independent check on the MNA engine.
//
// State: magnetizing current referred to winding 1, series inductor current
// and the two capacitor voltages. The DC link is loaded by a conductance that
// is only seen in NST (ST shorts the link).

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zsource/analytics.hpp"
#include "zsource/errors.hpp"
#include "zsource/modulation.hpp"
#include "zsource/netlist.hpp"
#include "zsource/trace.hpp"

namespace zsource::refmodel {

enum class Phase { st, nst };

/// Element inventory or wiring that the verifier cannot interpret.
class StructuralError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

struct RefState {
    double i_m{0};
    double i_lr{0};
    double v_c1{0};
    double v_c2{0};

    Eigen::Vector4d vec() const { return {i_m, i_lr, v_c1, v_c2}; }
    static RefState from(const Eigen::Vector4d& x) { return {x(0), x(1), x(2), x(3)}; }
};

/// What the link feeds during NST.
struct RefLoad {
    enum class Kind { open, link_resistor, star_resistor };
    Kind kind{Kind::open};
    double r{0};

    /// Peak-detecting DC output R seen through the NST window: (1-d)*R.
    static RefLoad dcdc(double r_out, double d) { return {Kind::link_resistor, (1 - d) * r_out}; }
    /// Bridge feeding a star-connected resistor of r per phase.
    static RefLoad bridge(double r_phase) { return {Kind::star_resistor, r_phase}; }

    /// Link conductance for the given gate state.
    double conductance(const modulation::GateSet& g) const;
};

/// Mean NST link conductance over one schedule period.
double nst_mean_conductance(const RefLoad& load, const modulation::Modulator& mod);

struct RefParams {
    analytics::Params op;
    double c1{0};
    double c2{0};
    double lr{0};
    double lm{0};
    RefLoad load;

    static RefParams from(const analytics::Params& op, const netlist::ComponentValues& v,
                          const RefLoad& load);
};

struct Voltages {
    double v_m{0};   ///< magnetizing voltage referred to winding 1
    double v_lr{0};
    double v_pn{0};
};

struct Currents {
    std::array<double, 3> i_w{0, 0, 0};  ///< winding currents
    double i_link{0};
};

Voltages voltages(const RefState& s, Phase ph, double K, double P, double V_dc);

/// Branch currents for the given state; `g_link` is the NST link conductance.
Currents currents(const RefState& s, Phase ph, double K, double P, double V_dc, double g_link);

RefState derivatives(const RefState& s, Phase ph, const RefParams& p, double g_link);

/// Volt-second balance of both inductors solved for the capacitor voltages.
/// Throws DomainError when the system is singular (d = d_max).
analytics::CapVoltages<double> averaged_steady_state(const analytics::Params& op);

struct AveragedPoint {
    double v_c1{0};
    double v_c2{0};
    double v_pn{0};    ///< NST plateau
    double i_m{0};
    double i_lr{0};
    double g_link{0};  ///< NST-averaged link conductance used
};

/// Capacitor voltages from volt-second balance plus inductor currents from
/// capacitor charge balance, for a given NST link conductance.
AveragedPoint averaged_operating_point(const analytics::Params& op, double g_link_nst);

/// Storage initial state matching an averaged point, with winding currents
/// consistent with ST (the schedule starts in ST).
netlist::InitialState initial_state(const AveragedPoint& a, double K, double P);

struct RefOptions {
    double t_end{0};
    double record_from{0};
    long stride{1};
};

/// RK4 at the modulator's dt, steps split at gate edges. Columns:
/// i_m, i_lr, v_c1, v_c2, v_pn, v_m, v_lr.
Trace simulate_ref(const RefParams& p, const modulation::Modulator& mod, const RefOptions& opts,
                   const RefState& x0 = {}, RefState* final_state = nullptr);

struct RelationCheck {
    std::string name;
    bool pass{false};
    double worst{0};  ///< largest relative residual over the draws
};

struct TopologyReport {
    std::vector<RelationCheck> relations;  ///< magnetizing NST, Lr NST, C1, C2, link
    int draws{0};
    std::string link_node;

    bool pass() const;
};

/// Solves the network's ST and NST operating relations with inductors as
/// current sources and capacitors as voltage sources, for random turns,
/// duty and operating values, and compares with the closed-form relations.
TopologyReport verify_topology(const netlist::Circuit& c, int draws = 100, unsigned seed = 7);

}  // namespace zsource::refmodel
