// Acceptance run: one line per criterion. Exit status is 0 when every
// criterion comes out as expected; criteria listed in `known_red` are
// expected to fail (analysis in the decisions ledger) and flip the exit
// status if they start passing, so the record gets updated.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "netlist_gen.hpp"
#include "zsource/analytics.hpp"
#include "zsource/harness.hpp"
#include "zsource/loads.hpp"
#include "zsource/netlist.hpp"
#include "zsource/refmodel.hpp"

using namespace zsource;
using namespace zsource::harness;

namespace {

const std::set<int> known_red = {3, 4, 8};

struct Outcome {
    bool pass{false};
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rms_rel(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) return INFINITY;
    double d2 = 0, b2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d2 += (a[i] - b[i]) * (a[i] - b[i]);
        b2 += b[i] * b[i];
    }
    return std::sqrt(d2 / b2);
}

bool within(double v, double want, double rel) { return std::abs(v - want) <= rel * std::abs(want); }

// Runs shared between criteria.
struct Runs {
    RunResult case1, case2, case3;
    double t_case1{0}, t_case3{0};
};

Outcome c1_gain() {
    const double a = analytics::boost_proposed(3.4, 1.0, 0.25);
    const double b = analytics::boost_proposed(2.0, 2.0, 0.4);
    const bool ok = std::abs(a - 5) <= 1e-12 * 5 && std::abs(b - 5) <= 1e-12 * 5;
    return {ok, "B(3.4,1,0.25)=" + fmt("%.15g", a) + " B(2,2,0.4)=" + fmt("%.15g", b)};
}

Outcome c2_case3(const Runs& r) {
    const auto& rep = r.case3.report;
    const double vo = rep.stats("v_out")->mean, c1 = rep.stats("v_c1")->mean,
                 c2 = rep.stats("v_c2")->mean;
    const bool ok = within(vo, 100, 0.03) && within(c1, 40, 0.03) && within(c2, 60, 0.03) &&
                    r.t_case3 <= 60;
    return {ok, "V_out=" + fmt("%.3f", vo) + " V_C1=" + fmt("%.3f", c1) + " V_C2=" +
                    fmt("%.3f", c2) + " runtime " + fmt("%.1f", r.t_case3) + " s"};
}

Outcome c3_case1(const Runs& r) {
    const auto& rep = r.case1.report;
    const double v = rep.v_pn_nst.value_or(NAN);
    const double imin = rep.min_input_current.value_or(NAN);
    const bool ok = within(v, 400, 0.05) && imin >= 0 && r.t_case1 <= 600;

    // Information only: the same scenario with the leakage at its floor.
    auto s = Scenario::builtin_case(CaseId::case1_motor);
    s.values.leakage = 1e-9;
    const auto floor = run(s).report.v_pn_nst.value_or(NAN);
    return {ok, "NST V_pn=" + fmt("%.1f", v) + " V (" + fmt("%+.1f", 100 * (v - 400) / 400) +
                    "%), min i_in=" + fmt("%.2f", imin) + " A, runtime " +
                    fmt("%.1f", r.t_case1) + " s; info: 1 nH leakage gives " +
                    fmt("%.1f", floor) + " V"};
}

Outcome c4_regen(const Runs& r) {
    const auto& rep = r.case2.report;
    const double p = rep.p_in.value_or(NAN);
    double torque = NAN;
    if (const auto* t = rep.stats("torque(load3m)")) torque = t->mean;
    return {p < 0, "mean source power=" + fmt("%.1f", p) + " W at 1560 rpm (shaft torque " +
                       fmt("%.2f", torque) + " N*m)"};
}

Outcome c5_volt_second(const Runs& r) {
    bool ok = true;
    int settled = 0;
    std::ostringstream os;
    for (const auto* res : {&r.case3, &r.case1, &r.case2}) {
        const auto& rep = res->report;
        os << rep.scenario << (rep.settled ? "" : "(unsettled)") << ":";
        for (const auto& [name, v] : rep.volt_second) {
            os << " " << name << "=" << fmt("%.2e", v);
            if (rep.settled && !(v <= 0.01)) ok = false;
        }
        os << "; ";
        settled += rep.settled;
    }
    // Never pass vacuously.
    if (settled == 0) ok = false;
    return {ok, os.str() + "limit 1e-2 of V_dc on settled runs"};
}

Outcome c6_oracle() {
    std::ostringstream os;
    bool ok = true;
    auto compare = [&](Scenario s, const refmodel::RefLoad& load) {
        s.values.leakage = 1e-9;
        s.values.parasitics = netlist::Parasitics::ideal();
        s.probes.clear();
        const auto eng = run(s);
        const auto rp = refmodel::RefParams::from(s.params, s.values, load);
        const modulation::Modulator mod(s.modulation, s.sim.dt);
        const auto a = refmodel::averaged_operating_point(
            s.params, refmodel::nst_mean_conductance(load, mod));
        const double from = s.sim.t_end - s.steady_window() + 0.5 * s.sim.dt;
        const auto ref = refmodel::simulate_ref(rp, mod, {s.sim.t_end, from, 1},
                                                {a.i_m, a.i_lr, a.v_c1, a.v_c2});
        os << s.builtin << ":";
        for (const auto& [probe, col] : {std::pair{s.signals.v_c1, "v_c1"},
                                         std::pair{s.signals.v_c2, "v_c2"},
                                         std::pair{s.signals.v_pn, "v_pn"}}) {
            const double e = rms_rel(eng.trace.column(probe), ref.column(col));
            os << " " << col << "=" << fmt("%.2e", e);
            if (!(e <= 0.02)) ok = false;
        }
        os << "; ";
    };
    auto s3 = Scenario::builtin_case(CaseId::case3_dcdc);
    compare(s3, refmodel::RefLoad::dcdc(s3.values.r_load, s3.params.d));
    auto s1 = Scenario::builtin_case(CaseId::case1_motor);
    s1.values.load3.model = "r";
    s1.values.load3.r = 10;
    s1.start = Start::averaged;
    s1.sim.t_end = 0.2;
    compare(s1, refmodel::RefLoad::bridge(10));

    std::mt19937_64 rng(1000);
    std::uniform_real_distribution<double> t(0.1, 6), u(0, 1), v(1, 1000);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const double K = t(rng), P = t(rng);
        auto op = analytics::Params::from_turns(1, K, P);
        op.d = 0.999 * u(rng) * analytics::duty_feasibility(K, P);
        op.V_dc = v(rng);
        const auto got = refmodel::averaged_steady_state(op);
        const auto want = analytics::cap_voltages(K, P, op.d, op.V_dc);
        worst = std::max({worst, std::abs(got.V_C1 - want.V_C1) / std::max(std::abs(want.V_C1), op.V_dc),
                          std::abs(got.V_C2 - want.V_C2) / std::abs(want.V_C2)});
    }
    if (!(worst <= 1e-9)) ok = false;
    os << "averaged vs closed form over 1000 draws: worst " << fmt("%.1e", worst);
    return {ok, os.str()};
}

Outcome c7_shooting() {
    std::ostringstream os;
    bool ok = true;

    const auto boost = netlist::parse(
        "v1 in 0 dc=10\nl1 in sw l=100u\ns1 sw 0 gate=st\nd1 sw out\nc1 out 0 c=100u\nr1 out 0 r=10\n");
    const modulation::Modulator mod(modulation::ModulationSpec::dcdc(0.5, 20e3), 1e-7);
    engine::SimOptions o;
    o.t_end = 0.5;
    o.record_from = 0.5;
    const auto brute = engine::simulate(boost, mod, o);
    const auto shot = shoot_steady(boost, mod, engine::Simulator(boost, 1e-7).initial_state());
    const double e1 = (shot.state.x - brute.final_state.x).norm() / brute.final_state.x.norm();
    ok = ok && e1 <= 1e-3 && shot.iterations <= 30;
    os << "boost: " << fmt("%.1e", e1) << " in " << shot.iterations << " iterations; ";

    auto s = Scenario::builtin_case(CaseId::case3_dcdc);
    s.sim.t_end = 1.0;  // brute force past the slow network mode
    const auto b3 = run(s);
    const auto s3 = shoot_steady(s, s.start_state());
    const double e3 = (s3.state.x - b3.final_state.x).norm() / b3.final_state.x.norm();
    ok = ok && e3 <= 1e-3 && s3.iterations <= 30;
    os << "case3: " << fmt("%.1e", e3) << " in " << s3.iterations << " iterations";
    return {ok, os.str()};
}

Outcome c8_efficiency(const Runs& r) {
    const double ideal = r.case3.report.efficiency.value_or(NAN);
    auto s = Scenario::builtin_case(CaseId::case3_dcdc);
    s.values.parasitics = netlist::Parasitics::nominal();
    const double nominal = run(s).report.efficiency.value_or(NAN);
    const bool ok = std::abs(ideal - 1) <= 0.005 && nominal >= 0.95 && nominal <= 0.99;
    return {ok, "ideal " + fmt("%.4f", ideal) + " (1 +- 0.005), nominal parasitics " +
                    fmt("%.4f", nominal) + " (want [0.95, 0.99])"};
}

Outcome c9_parser() {
    std::mt19937_64 rng(2024);
    int round_trips = 0;
    for (int i = 0; i < 500; ++i) {
        const auto c = testgen::random_circuit(rng);
        const auto text = netlist::serialize(c);
        const auto back = netlist::parse(text);
        round_trips += back == c && netlist::serialize(back) == text;
    }
    std::mt19937_64 rng2(99);
    int rejected = 0, with_lines = 0;
    for (int i = 0; i < 500; ++i) {
        const auto text = testgen::corrupt(netlist::serialize(testgen::random_circuit(rng2)), rng2);
        const int lines = static_cast<int>(std::count(text.begin(), text.end(), '\n')) + 1;
        try {
            netlist::parse(text);
        } catch (const netlist::ParseError& e) {
            ++rejected;
            bool all = !e.diagnostics().empty();
            for (const auto& d : e.diagnostics()) all = all && d.line >= 1 && d.line <= lines;
            with_lines += all;
        }
    }
    const bool ok = round_trips == 500 && rejected > 0 && with_lines == rejected;
    return {ok, std::to_string(round_trips) + "/500 round trips; " + std::to_string(with_lines) +
                    "/" + std::to_string(rejected) + " rejected inputs carry line numbers"};
}

// Speed-locked machine on a balanced 400 V, 50 Hz supply; mean torque over the
// last of 25 cycles.
double locked_torque(double slip, const loads::IMParams& p) {
    constexpr double pi = 3.14159265358979323846;
    const double dt = 1e-5, f = 50, a = 400 * std::sqrt(2.0 / 3.0);
    auto supply = [&](double t) {
        const double w = 2 * pi * f * t;
        return std::array<double, 3>{a * std::cos(w), a * std::cos(w - 2 * pi / 3),
                                     a * std::cos(w + 2 * pi / 3)};
    };
    auto s = loads::IMState::at_rpm((1 - slip) * 60 * f / p.pole_pairs, p);
    const int per_cycle = static_cast<int>(std::lround(1 / (f * dt)));
    double torque = 0;
    for (int k = 0; k < 25 * per_cycle; ++k) {
        const auto r = loads::im_step(s, supply, k * dt, 0.0, dt, p, true);
        if (k >= 24 * per_cycle) torque += r.torque / per_cycle;
        s = r.state;
    }
    return torque;
}

Outcome c10_machine() {
    const auto p = loads::IMParams::drive_machine();
    const double t0 = locked_torque(0, p);
    bool ok = std::abs(t0) <= 1e-6;
    std::ostringstream os;
    os << "torque at synchronous speed " << fmt("%.1e", t0) << " N*m;";
    for (double s : {0.02, 0.04, 0.08}) {
        const double got = locked_torque(s, p), want = loads::im_steady_torque(s, 400, 50, p);
        ok = ok && within(got, want, 0.02);
        os << " s=" << s << ": " << fmt("%.3f", got) << " vs " << fmt("%.3f", want);
    }
    return {ok, os.str()};
}

}  // namespace

int main() {
    Runs runs;
    auto t0 = std::chrono::steady_clock::now();
    runs.case3 = run(Scenario::builtin_case(CaseId::case3_dcdc));
    runs.t_case3 = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    runs.case1 = run(Scenario::builtin_case(CaseId::case1_motor));
    runs.t_case1 = seconds_since(t0);
    runs.case2 = run(Scenario::builtin_case(CaseId::case2_generator));

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gain formula at the two design points", c1_gain},
        {"case 3 end to end", [&] { return c2_case3(runs); }},
        {"case 1 link plateau and input current", [&] { return c3_case1(runs); }},
        {"case 2 regeneration", [&] { return c4_regen(runs); }},
        {"volt-second balance", [&] { return c5_volt_second(runs); }},
        {"reference model agreement", c6_oracle},
        {"shooting vs brute force", c7_shooting},
        {"efficiency bracket", [&] { return c8_efficiency(runs); }},
        {"parser properties", c9_parser},
        {"machine model", c10_machine},
    };

    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const bool expected_red = known_red.count(n) > 0;
        std::string note;
        if (o.pass == expected_red) {
            ++unexpected;
            note = expected_red ? " [expected to fail; update the record]" : "";
        } else if (expected_red) {
            note = " [known, see ledger]";
        }
        std::printf("criterion %2d %s: %s: %s%s\n", n, o.pass ? "PASS" : "FAIL",
                    criteria[i].first.c_str(), o.detail.c_str(), note.c_str());
        std::fflush(stdout);
    }
    return unexpected == 0 ? 0 : 1;
}
