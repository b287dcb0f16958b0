#pragma once

// Gate schedules: DC-DC shoot-through gating and simple-boost SPWM for a
// three-leg bridge. All functions are pure.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

#include "zsource/trace.hpp"

namespace zsource::modulation {

enum class Mode { dcdc, spwm };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct ModulationSpec {
    Mode mode{Mode::dcdc};
    double d{0};
    double M{0};
    double f_sw{20e3};
    double f_out{50};
    std::array<double, 3> phase{0.0, -2.0943951023931953, 2.0943951023931953};  ///< rad, legs a b c

    static ModulationSpec dcdc(double d, double f_sw);
    static ModulationSpec spwm(double M, double d, double f_sw, double f_out);

    /// Throws ConfigError when infeasible.
    void validate() const;
    /// Period after which the schedule repeats exactly.
    double period() const { return mode == Mode::dcdc ? 1.0 / f_sw : 1.0 / f_out; }
};

/// Gate channels: st, nst and the six bridge switches ah al bh bl ch cl.
struct GateSet {
    bool st{false};
    std::array<bool, 6> leg{};

    bool channel(std::string_view name) const;
    bool operator==(const GateSet& o) const { return st == o.st && leg == o.leg; }
};

/// Gates held up to `end`, a fraction of the step in (0, 1].
struct GateSegment {
    double end{1};
    GateSet gates;
};

/// Piecewise-constant gates over one step, in time order.
struct StepGates {
    int count{0};
    std::array<GateSegment, 8> seg{};

    const GateSegment* begin() const { return seg.data(); }
    const GateSegment* end() const { return seg.data() + count; }
    const GateSet& last() const { return seg[count - 1].gates; }
};

/// Triangular carrier in [-1, 1], minimum at the start of each period.
double carrier(double tau);

GateSet gates_at(const ModulationSpec& spec, double t);

/// Grid-locked evaluation: step k covers [k*dt, (k+1)*dt) and is sampled at its
/// midpoint, with the phase reduced by integer arithmetic so the schedule is
/// exactly periodic.
class Modulator {
public:
    Modulator(const ModulationSpec& spec, double dt);

    const ModulationSpec& spec() const noexcept { return spec_; }
    double dt() const noexcept { return dt_; }
    long steps_per_switching_period() const noexcept { return n_sw_; }
    long steps_per_period() const noexcept { return n_period_; }

    GateSet at_step(long k) const;
    /// Exact gate edges inside step k, located by bisection to ~1e-12 of a
    /// step. Pulses narrower than half a step that start and end inside the
    /// same half are not resolved.
    StepGates segments(long k) const;

private:
    ModulationSpec spec_;
    double dt_;
    long n_sw_;
    long n_period_;
};

/// Number of dt steps in `period`; throws ConfigError unless it is an integer.
long steps_in(double period, double dt);

/// Fraction of ST-flagged samples; the trace must span whole switching periods.
double measured_st_duty(const Trace& trace, double f_sw);

/// One row per step: t, st, nst, ah, al, bh, bl, ch, cl.
void write_schedule_csv(std::ostream& os, const Modulator& mod, long steps);

}  // namespace zsource::modulation
