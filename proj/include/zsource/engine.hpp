#pragma once

// Switched-circuit simulator: modified nodal analysis with trapezoidal
// companion models, an ideal-diode state fixpoint and gate-aligned fixed steps.
//
// Steps are split at the exact gate edges found by the modulator. The
// first step after any change of switch/diode configuration uses backward
// Euler companions instead of trapezoidal ones; this damps the two-step
// ringing the trapezoidal rule shows when an inductor current is forced to
// jump.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zsource/loads.hpp"
#include "zsource/modulation.hpp"
#include "zsource/netlist.hpp"
#include "zsource/trace.hpp"

namespace zsource::engine {

inline constexpr double leakage_floor = 1e-9;

/// On/off state of every S and D element, in circuit order.
struct SwitchConfiguration {
    std::vector<bool> switch_on;
    std::vector<bool> diode_on;

    bool operator==(const SwitchConfiguration& o) const {
        return switch_on == o.switch_on && diode_on == o.diode_on;
    }
};

/// Flat dynamic state: capacitor voltages, inductor currents (L elements, then
/// three winding currents per W3), then per machine psi[4] and rotor speed.
struct SimState {
    double t{0};
    long step{0};
    Eigen::VectorXd x;
};

/// Parsed probe expression: v(a), v(a,b), i(e), i(e:k), im(e), vm(e), vl(e),
/// p(e), torque(e), rpm(e), estore. vm and vl are L*di/dt averaged over the
/// whole last step (all edge sub-steps), so their means over a window telescope to the flux change.
struct Probe {
    enum class Kind { node_voltage, current, magnetizing_current, magnetizing_voltage,
                      inductive_voltage, power, torque, rpm, stored_energy };
    Kind kind{Kind::node_voltage};
    std::string text;
    int a{-1};
    int b{-1};
    int element{-1};  ///< index into the compiled element table of the matching type
    int sub{0};
};

struct AuditStats {
    double max_relative{0};   ///< worst per-step residual over the step's largest power term
    double source_energy{0};  ///< J delivered by V sources
    double dissipated{0};     ///< J in resistive elements
    double load_energy{0};    ///< J delivered to LOAD3 terminals
    double stored_start{0};
    double stored_end{0};
    long steps{0};
};

class Simulator {
public:
    Simulator(const netlist::Circuit& c, double dt);
    ~Simulator();
    Simulator(Simulator&&) noexcept;
    Simulator& operator=(Simulator&&) noexcept;

    double dt() const noexcept;
    double time() const noexcept;
    long step_index() const noexcept;

    /// State built from the v0/i0/rpm0 fields of the circuit.
    SimState initial_state() const;
    SimState state() const;
    /// Replaces the dynamic state; the next step starts with backward Euler.
    void set_state(const SimState& s);
    std::vector<std::string> state_names() const;

    /// Advances one dt with the given gates. Throws SimulationError.
    void step(const modulation::GateSet& gates);
    /// Advances one dt, splitting it at the gate edges.
    void step(const modulation::StepGates& gates);

    Probe probe(const std::string& expr) const;
    double read(const Probe& p) const;
    double stored_energy() const;
    /// Instantaneous power delivered by all V sources.
    double source_power() const;
    const SwitchConfiguration& configuration() const;
    /// True when the last step changed the switch/diode configuration.
    bool switched() const noexcept;
    bool st() const noexcept;

    void enable_audit(bool on);
    const AuditStats& audit() const;

    /// Configuration-keyed factorization cache size (for tests).
    std::size_t cached_factorizations() const;

    /// Assembled conductance matrix and source vector at the current state for
    /// a configuration, trapezoidal companions. Unknowns: node voltages (sorted
    /// node names, ground excluded), then V-source and winding branch currents.
    std::pair<Eigen::MatrixXd, Eigen::VectorXd> assemble(const SwitchConfiguration& sw) const;
    std::vector<std::string> unknown_names() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Called after every accepted step.
using Observer = std::function<void(const Simulator&)>;

struct SimOptions {
    double t_end{0};
    double record_from{0};  ///< first recorded time
    long stride{1};         ///< record every stride-th step
    std::vector<std::string> probes;
    bool audit{false};
};

struct SimResult {
    Trace trace;
    SimState final_state;
    AuditStats audit;
};

/// Runs from the circuit's initial state (or `start` if given). The modulator's
/// dt sets the step.
SimResult simulate(const netlist::Circuit& c, const modulation::Modulator& mod,
                   const SimOptions& opts, const Observer& observer = {},
                   const SimState* start = nullptr);

}  // namespace zsource::engine
