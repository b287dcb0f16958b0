#include "zsource/modulation.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "zsource/errors.hpp"

namespace zsource::modulation {

namespace {
constexpr double two_pi = 6.283185307179586;

GateSet evaluate(const ModulationSpec& spec, double tau, double t_out) {
    GateSet g;
    if (spec.mode == Mode::dcdc) {
        g.st = tau < spec.d;
        return g;
    }
    const double c = carrier(tau);
    g.st = std::abs(c) > 1.0 - spec.d;
    for (int leg = 0; leg < 3; ++leg) {
        const bool high = spec.M * std::sin(two_pi * spec.f_out * t_out + spec.phase[leg]) > c;
        g.leg[2 * leg] = g.st || high;
        g.leg[2 * leg + 1] = g.st || !high;
    }
    return g;
}
}  // namespace

std::string to_string(Mode m) { return m == Mode::dcdc ? "dcdc" : "spwm"; }

Mode mode_from_string(const std::string& s) {
    if (s == "dcdc") return Mode::dcdc;
    if (s == "spwm") return Mode::spwm;
    throw ConfigError("unknown modulation mode '" + s + "'");
}

ModulationSpec ModulationSpec::dcdc(double d, double f_sw) {
    ModulationSpec s;
    s.mode = Mode::dcdc;
    s.d = d;
    s.f_sw = f_sw;
    s.validate();
    return s;
}

ModulationSpec ModulationSpec::spwm(double M, double d, double f_sw, double f_out) {
    ModulationSpec s;
    s.mode = Mode::spwm;
    s.M = M;
    s.d = d;
    s.f_sw = f_sw;
    s.f_out = f_out;
    s.validate();
    return s;
}

void ModulationSpec::validate() const {
    if (!(f_sw > 0)) throw ConfigError("switching frequency must be positive");
    if (!(d >= 0 && d < 1)) throw ConfigError("shoot-through duty must lie in [0, 1)");
    if (mode == Mode::dcdc) return;
    if (!(M >= 0 && M <= 1)) throw ConfigError("modulation index must lie in [0, 1]");
    if (M + d > 1 + 1e-12)
        throw ConfigError("simple-boost modulation needs M + d <= 1 (M=" + std::to_string(M) +
                          ", d=" + std::to_string(d) + ")");
    if (!(f_out > 0)) throw ConfigError("output frequency must be positive");
    const double ratio = f_sw / f_out;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
        throw ConfigError("switching frequency must be an integer multiple of the output frequency");
}

bool GateSet::channel(std::string_view name) const {
    if (name == "st") return st;
    if (name == "nst") return !st;
    static constexpr std::string_view legs[] = {"ah", "al", "bh", "bl", "ch", "cl"};
    for (int i = 0; i < 6; ++i)
        if (name == legs[i]) return leg[i];
    throw ConfigError("unknown gate channel '" + std::string(name) + "'");
}

double carrier(double tau) { return 1.0 - 4.0 * std::abs(tau - 0.5); }

GateSet gates_at(const ModulationSpec& spec, double t) {
    spec.validate();
    double tau = std::fmod(t * spec.f_sw, 1.0);
    if (tau < 0) tau += 1.0;
    return evaluate(spec, tau, t);
}

long steps_in(double period, double dt) {
    if (!(dt > 0)) throw ConfigError("time step must be positive");
    const double n = period / dt;
    const double r = std::round(n);
    if (r < 1 || std::abs(n - r) > 1e-6 * r)
        throw ConfigError("time step " + std::to_string(dt) + " does not divide the period " +
                          std::to_string(period));
    return static_cast<long>(r);
}

Modulator::Modulator(const ModulationSpec& spec, double dt) : spec_(spec), dt_(dt) {
    spec_.validate();
    n_sw_ = steps_in(1.0 / spec_.f_sw, dt);
    n_period_ = spec_.mode == Mode::dcdc ? n_sw_ : steps_in(1.0 / spec_.f_out, dt);
}

GateSet Modulator::at_step(long k) const {
    const long j = k % n_sw_;
    const double tau = (static_cast<double>(j) + 0.5) / static_cast<double>(n_sw_);
    const double t_out = (static_cast<double>(k % n_period_) + 0.5) * dt_;
    return evaluate(spec_, tau, t_out);
}

StepGates Modulator::segments(long k) const {
    const double j = static_cast<double>(k % n_sw_);
    const double jo = static_cast<double>(k % n_period_);
    const double nsw = static_cast<double>(n_sw_);
    // Right-continuous: g(s) holds on [s, s+).
    auto g = [&](double s) { return evaluate(spec_, (j + s) / nsw, (jo + s) * dt_); };

    constexpr double eps = 1e-9;
    double edges[8];
    GateSet after[8];
    int n = 0;
    auto split = [&](auto&& self, double a, double b, const GateSet& ga, const GateSet& gb) -> void {
        if (ga == gb) return;
        if (b - a < 1e-12) {
            if (n < 7) {
                edges[n] = b;
                after[n] = gb;
                ++n;
            }
            return;
        }
        const double m = 0.5 * (a + b);
        const GateSet gm = g(m);
        self(self, a, m, ga, gm);
        self(self, m, b, gm, gb);
    };
    const GateSet g0 = g(0), gm = g(0.5), g1 = g(1 - eps);
    split(split, 0, 0.5, g0, gm);
    split(split, 0.5, 1 - eps, gm, g1);

    StepGates out;
    out.seg[0].gates = g0;
    out.count = 1;
    for (int i = 0; i < n; ++i) {
        if (edges[i] < eps) {
            out.seg[out.count - 1].gates = after[i];
            continue;
        }
        out.seg[out.count - 1].end = edges[i];
        out.seg[out.count].gates = after[i];
        ++out.count;
    }
    out.seg[out.count - 1].end = 1;
    return out;
}

double measured_st_duty(const Trace& trace, double f_sw) {
    if (trace.empty()) throw ConfigError("empty trace");
    const double periods = static_cast<double>(trace.size()) * trace.dt() * f_sw;
    if (std::abs(periods - std::round(periods)) > 1e-6 || std::round(periods) < 1)
        throw ConfigError("trace window is not a whole number of switching periods");
    long on = 0;
    for (auto s : trace.st()) on += s;
    return static_cast<double>(on) / static_cast<double>(trace.size());
}

void write_schedule_csv(std::ostream& os, const Modulator& mod, long steps) {
    os << "t,st,nst,ah,al,bh,bl,ch,cl\n";
    char buf[32];
    for (long k = 0; k < steps; ++k) {
        const auto g = mod.at_step(k);
        std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(k) * mod.dt());
        os << buf << ',' << g.st << ',' << !g.st;
        for (bool b : g.leg) os << ',' << b;
        os << '\n';
    }
}

}  // namespace zsource::modulation
