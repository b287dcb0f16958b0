#pragma once

// Scenario execution and steady-state metrics: brute-force settling with a
// trailing steady window, Newton shooting for the periodic orbit, and the
// three builtin case studies.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "zsource/analytics.hpp"
#include "zsource/engine.hpp"
#include "zsource/loads.hpp"
#include "zsource/modulation.hpp"
#include "zsource/netlist.hpp"
#include "zsource/trace.hpp"

namespace zsource::harness {

enum class CaseId { none, case1_motor, case2_generator, case3_dcdc };

std::string to_string(CaseId c);
CaseId case_from_string(const std::string& s);
std::vector<CaseId> all_cases();

/// Probe expressions for the quantities the metrics need. Empty entries are
/// skipped by the report.
struct Signals {
    std::string v_pn;   ///< DC link
    std::string i_in;   ///< source current, positive when delivering
    std::string p_in;   ///< source power
    std::string p_out;  ///< load power
    std::string v_c1;
    std::string v_c2;
    std::string v_out;
    std::string v_l1;  ///< magnetizing L di/dt referred to winding 1
    std::string v_lr;  ///< series inductor L di/dt
    std::string i_sw;  ///< switch whose turn-on current is reported
    std::string sw_gate{"st"};
};

struct SimConfig {
    double dt{1e-7};
    double t_end{0.2};
    double steady_window{0};     ///< s; 0 selects 20 switching or 2 output periods
    double startup_window{0.05};  ///< min input current is taken after this
    double inrush_window{0.01};
};

enum class Start { zero, averaged };

struct Scenario {
    std::string name;
    CaseId case_id{CaseId::none};

    // Circuit: a builtin (dcdc | inverter) or a netlist file.
    std::string builtin{"dcdc"};
    std::string netlist_path;
    analytics::Params params;
    netlist::ComponentValues values;
    std::optional<loads::IMParams> machine;  ///< overrides written to the load3 element

    modulation::ModulationSpec modulation;
    SimConfig sim;
    Start start{Start::zero};
    std::vector<std::string> probes;  ///< extra recorded probes
    Signals signals;

    static Scenario builtin_case(CaseId id);

    netlist::Circuit circuit() const;
    /// Engine state at t = 0 (averaged start or the circuit's own fields).
    engine::SimState start_state() const;
    double steady_window() const;
    /// Period of the gate schedule.
    double period() const { return modulation.period(); }
    /// Throws ConfigError on inconsistent settings.
    void validate() const;

    nlohmann::json to_json() const;
    static Scenario from_json(const nlohmann::json& j);
    static Scenario load(const std::string& path);
};

struct SignalStats {
    std::string name;
    std::string probe;
    double mean{0};
    double ripple{0};  ///< peak to peak
    double min{0};
    double max{0};
    double rms{0};
};

struct Delta {
    std::string name;
    double measured{0};
    double predicted{0};
    double percent{0};
};

struct SteadyReport {
    std::string scenario;
    double window_start{0};
    double window_end{0};
    std::vector<SignalStats> signals;
    std::optional<double> v_pn_nst;  ///< mean link voltage over NST samples
    std::optional<double> B_meas;
    std::optional<double> min_input_current;  ///< after the startup window
    std::optional<double> inrush_ratio;
    std::map<std::string, double> volt_second;  ///< |mean L di/dt| / V_dc per inductor
    std::optional<double> efficiency;
    std::optional<double> p_in;
    std::optional<double> p_out;
    std::optional<double> soft_switching;  ///< mean |i_sw| before turn-on / mean input current
    double st_duty{0};
    std::vector<Delta> deltas;
    bool settled{true};
    double settle_change{0};  ///< largest relative change of a window mean
    std::vector<std::string> unsettled;
    double audit_max_relative{0};

    const SignalStats* stats(const std::string& name) const;
    nlohmann::json to_json() const;
    std::string to_text() const;
};

struct RunResult {
    Trace trace;  ///< steady window at full resolution
    SteadyReport report;
    engine::SimState final_state;
};

RunResult run(const Scenario& s);

/// What the streaming observer saw outside the recorded window.
struct RunContext {
    std::map<std::string, double> prev_means;  ///< per probe, previous window
    std::optional<double> stored_at_window_start;
    std::optional<double> inrush_peak;
    std::optional<double> min_input_after_startup;
    double audit_max_relative{0};
    // Window means from the engine's energy integrals. Preferred over sample
    // means, which over-weight commutation spikes on short edge sub-steps.
    std::optional<double> source_power;
    std::optional<double> load3_power;
};

/// Metrics of a steady-window trace. Exposed for callers that simulate
/// themselves.
SteadyReport analyse(const Scenario& s, const Trace& window, const RunContext& ctx);

struct ShootOptions {
    int max_iterations{30};
    double tolerance{1e-6};
    double perturbation{1e-6};
};

struct ShootResult {
    engine::SimState state;  ///< x* on the periodic orbit, at a period boundary
    int iterations{0};
    std::vector<double> residuals;
};

class ConvergenceError : public SimulationError {
public:
    ConvergenceError(const std::string& what, std::vector<double> history)
        : SimulationError(what, 0), history_(std::move(history)) {}
    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

/// One-period map of the engine from `x` at a period boundary.
Eigen::VectorXd period_map(const netlist::Circuit& c, const modulation::Modulator& mod,
                           const engine::SimState& x);

/// Newton on x = period_map(x) with a forward-difference Jacobian.
ShootResult shoot_steady(const netlist::Circuit& c, const modulation::Modulator& mod,
                         const engine::SimState& x0, const ShootOptions& opt = {});
ShootResult shoot_steady(const Scenario& s, const engine::SimState& x0,
                         const ShootOptions& opt = {});

struct CaseComparison {
    analytics::ComparisonReport table;
    std::vector<std::pair<std::string, SteadyReport>> reports;
    /// Case 1 vs case 2 converter-side RMS difference / RMS of case 1.
    std::map<std::string, double> rms_difference;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

/// Runs the given cases (concurrently up to `threads`) and assembles the
/// comparison table.
CaseComparison compare_cases(const std::vector<CaseId>& cases, int threads = 1);

/// Worker count from ZSOURCE_LAB_THREADS, default 1.
int thread_budget();

}  // namespace zsource::harness
