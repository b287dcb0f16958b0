#include <catch_amalgamated.hpp>

#include <random>

#include "zsource/refmodel.hpp"

using namespace zsource;
using namespace zsource::refmodel;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

analytics::Params op(double n2, double n3, double d, double vdc, double M = 0) {
    auto p = analytics::Params::from_turns(1, n2, n3);
    p.d = d;
    p.V_dc = vdc;
    p.M = M;
    p.f_sw = 20e3;
    return p;
}

double nst_mean(const Trace& t, const std::string& col) {
    const auto& v = t.column(col);
    double s = 0;
    long n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!t.st()[i]) {
            s += v[i];
            ++n;
        }
    return s / n;
}

RefState averaged_start(const RefParams& rp, const modulation::Modulator& mod) {
    const auto a = averaged_operating_point(rp.op, nst_mean_conductance(rp.load, mod));
    return {a.i_m, a.i_lr, a.v_c1, a.v_c2};
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
}

}  // namespace

TEST_CASE("loop voltages at the 20 V to 100 V operating point", "[refmodel]") {
    const RefState s{0, 0, 40, 60};
    const auto nst = voltages(s, Phase::nst, 2, 2, 20);
    CHECK_THAT(nst.v_m, WithinAbs(-40.0 / 3, 1e-12));
    CHECK_THAT(nst.v_lr, WithinAbs(-40, 1e-12));
    CHECK_THAT(nst.v_pn, WithinAbs(100, 1e-12));
    const auto st = voltages(s, Phase::st, 2, 2, 20);
    CHECK_THAT(st.v_lr, WithinAbs(60, 1e-12));
    CHECK_THAT(st.v_m, WithinAbs(20, 1e-12));
    CHECK(st.v_pn == 0);
    // Both inductors are balanced over a 0.4 / 0.6 split.
    CHECK_THAT(0.4 * st.v_lr + 0.6 * nst.v_lr, WithinAbs(0, 1e-12));
    CHECK_THAT(0.4 * st.v_m + 0.6 * nst.v_m, WithinAbs(0, 1e-12));

    RefParams p;
    p.op = op(2, 2, 0.4, 0);
    p.c1 = p.c2 = 1e-4;
    p.lr = p.lm = 1e-3;
    for (auto ph : {Phase::st, Phase::nst}) {
        const auto d = derivatives({}, ph, p, 0.1);
        CHECK(d.vec().isZero(0));
    }
}

TEST_CASE("winding currents honour ampere-turns and KCL", "[refmodel][property]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10, 10), t(0.3, 4);
    for (int i = 0; i < 200; ++i) {
        const double K = t(rng), P = t(rng);
        const RefState s{u(rng), u(rng), 10 * u(rng), 10 * u(rng)};
        for (auto ph : {Phase::st, Phase::nst}) {
            const auto c = currents(s, ph, K, P, 50, std::abs(u(rng)));
            REQUIRE_THAT(c.i_w[0] + K * c.i_w[1] + P * c.i_w[2], WithinAbs(s.i_m, 1e-9));
            REQUIRE_THAT(c.i_w[0], WithinAbs(c.i_w[1] + c.i_w[2], 1e-9));
            REQUIRE_THAT(c.i_w[2] + s.i_lr, WithinAbs(c.i_link, 1e-9));
        }
    }
}

TEST_CASE("averaged steady state", "[refmodel]") {
    auto c = averaged_steady_state(op(2, 2, 0.4, 20));
    CHECK_THAT(c.V_C1, WithinAbs(40, 1e-9));
    CHECK_THAT(c.V_C2, WithinAbs(60, 1e-9));
    c = averaged_steady_state(op(2, 2, 0, 20));
    CHECK_THAT(c.V_C1, WithinAbs(0, 1e-12));
    CHECK_THAT(c.V_C2, WithinAbs(20, 1e-12));
    c = averaged_steady_state(op(3.4, 1, 0.25, 80));
    CHECK_THAT(c.V_C1, WithinAbs(220, 1e-9));
    CHECK_THAT(c.V_C2, WithinAbs(300, 1e-9));

    CHECK_THROWS_AS(averaged_steady_state(op(2, 2, 0.5, 20)), DomainError);
}

TEST_CASE("volt-second solution equals the closed form", "[refmodel][property]") {
    std::mt19937_64 rng(1000);
    std::uniform_real_distribution<double> t(0.1, 6), u(0, 1), v(1, 1000);
    for (int i = 0; i < 1000; ++i) {
        const double K = t(rng), P = t(rng);
        const double d = 0.999 * u(rng) * analytics::duty_feasibility(K, P);
        const auto p = op(K, P, d, v(rng));
        const auto got = averaged_steady_state(p);
        const auto want = analytics::cap_voltages(K, P, d, p.V_dc);
        REQUIRE_THAT(got.V_C1, WithinRel(want.V_C1, 1e-9) || WithinAbs(want.V_C1, 1e-9 * p.V_dc));
        REQUIRE_THAT(got.V_C2, WithinRel(want.V_C2, 1e-9));
    }
}

TEST_CASE("averaged operating point balances power", "[refmodel]") {
    const auto p = op(2, 2, 0.4, 20);
    const double R = 245;
    const auto a = averaged_operating_point(p, 1 / ((1 - p.d) * R));
    CHECK_THAT(a.v_pn, WithinAbs(100, 1e-9));
    const double i_out = a.v_pn / R;
    CHECK_THAT(a.i_lr, WithinRel(5 * i_out, 1e-9));

    // Mean input (winding 1) current times V_dc equals the load power.
    const RefState s{a.i_m, a.i_lr, a.v_c1, a.v_c2};
    const double i_st = currents(s, Phase::st, 2, 2, 20, a.g_link).i_w[0];
    const double i_nst = currents(s, Phase::nst, 2, 2, 20, a.g_link).i_w[0];
    const double p_in = 20 * (p.d * i_st + (1 - p.d) * i_nst);
    CHECK_THAT(p_in, WithinRel(a.v_pn * i_out, 1e-9));
    // Input current does not reverse in either interval.
    CHECK(i_st > 0);
    CHECK(i_nst > 0);

    const auto init = initial_state(a, 2, 2);
    CHECK(init.i_w[1] == 0);
    CHECK_THAT(init.i_w[0] + 2 * init.i_w[2], WithinRel(a.i_m, 1e-12));
}

TEST_CASE("reference simulation of the 20 V to 100 V converter", "[refmodel]") {
    const auto p = op(2, 2, 0.4, 20);
    const auto vals = netlist::ComponentValues::dcdc_sample();
    const auto rp = RefParams::from(p, vals, RefLoad::dcdc(vals.r_load, p.d));
    const modulation::Modulator mod(modulation::ModulationSpec::dcdc(p.d, p.f_sw), 1e-7);
    const auto tr = simulate_ref(rp, mod, {0.6, 0.6 - 20 / p.f_sw, 1}, averaged_start(rp, mod));
    CHECK_THAT(nst_mean(tr, "v_pn"), WithinRel(100.0, 0.02));
    CHECK_THAT(mean(tr.column("v_c1")), WithinRel(40.0, 0.02));
    CHECK_THAT(mean(tr.column("v_c2")), WithinRel(60.0, 0.02));
    // Volt-second residual over whole periods.
    CHECK(std::abs(mean(tr.column("v_m"))) < 0.01 * 20);
    CHECK(std::abs(mean(tr.column("v_lr"))) < 0.01 * 20);
}

TEST_CASE("reference simulation with zero duty follows the source", "[refmodel]") {
    const auto p = op(2, 2, 0, 20);
    const auto vals = netlist::ComponentValues::dcdc_sample();
    const auto rp = RefParams::from(p, vals, RefLoad::dcdc(vals.r_load, 0));
    const modulation::Modulator mod(modulation::ModulationSpec::dcdc(0, p.f_sw), 1e-7);
    const auto tr = simulate_ref(rp, mod, {0.1, 0.1 - 20 / p.f_sw, 1}, averaged_start(rp, mod));
    CHECK_THAT(mean(tr.column("v_pn")), WithinRel(20.0, 0.01));
}

TEST_CASE("reference simulation of the 80 V drive, resistive stand-in", "[refmodel]") {
    const auto p = op(3.4, 1, 0.25, 80, 0.75);
    const auto vals = netlist::ComponentValues::drive_sample();
    const auto rp = RefParams::from(p, vals, RefLoad::bridge(10));
    const modulation::Modulator mod(modulation::ModulationSpec::spwm(0.75, 0.25, 20e3, 50), 1e-7);
    const auto tr = simulate_ref(rp, mod, {0.6, 0.56, 1}, averaged_start(rp, mod));
    CHECK_THAT(nst_mean(tr, "v_pn"), WithinRel(400.0, 0.02));
    CHECK(*std::min_element(tr.column("i_in").begin(), tr.column("i_in").end()) >= 0);
}

TEST_CASE("topology verification of the builtin networks", "[refmodel]") {
    auto t3 = analytics::Params::from_turns(1, 2, 2);
    t3.d = 0.4;
    t3.V_dc = 20;
    auto t2 = analytics::Params::from_turns(1, 3.4, 1);
    t2.d = 0.25;
    t2.V_dc = 80;
    t2.M = 0.75;
    auto active = netlist::ComponentValues::drive_sample();
    active.active_d1 = true;
    for (const auto& c :
         {netlist::builtin(t3, netlist::ComponentValues::dcdc_sample(), netlist::Mode::dcdc),
          netlist::builtin(t2, netlist::ComponentValues::drive_sample(), netlist::Mode::inverter),
          netlist::builtin(t2, active, netlist::Mode::inverter)}) {
        const auto rep = verify_topology(c);
        CHECK(rep.draws == 100);
        CHECK(rep.link_node == "p");
        for (const auto& r : rep.relations) {
            INFO(r.name << " worst " << r.worst);
            CHECK(r.pass);
        }
        CHECK(rep.pass());
    }
}

TEST_CASE("topology verification rejects miswired networks", "[refmodel]") {
    auto t3 = analytics::Params::from_turns(1, 2, 2);
    t3.d = 0.4;
    t3.V_dc = 20;
    const auto c = netlist::builtin(t3, netlist::ComponentValues::dcdc_sample(), netlist::Mode::dcdc);

    // C2 across the DC link instead of from the Lr junction to ground.
    auto moved = c.at("c2");
    moved.nodes = {"p", "0"};
    const auto rep = verify_topology(c.with(moved));
    CHECK_FALSE(rep.pass());
    CHECK_FALSE(rep.relations[3].pass);

    // C2 in parallel with Lr.
    moved.nodes = {"c", "p"};
    CHECK_FALSE(verify_topology(c.with(moved)).relations[3].pass);

    // Swapped winding polarity on winding 3.
    auto w = c.at("w3y");
    std::swap(w.nodes[4], w.nodes[5]);
    CHECK_FALSE(verify_topology(c.with(w)).pass());

    // Inventory errors.
    auto extra = c.at("c1");
    extra.name = "c9";
    extra.nodes = {"x", "0"};
    CHECK_THROWS_AS(verify_topology(c.with(extra)), StructuralError);
    auto r = netlist::Element{};
    r.kind = netlist::Kind::R;
    r.name = "rx";
    r.nodes = {"e", "0"};
    r.values["r"] = 1;
    CHECK_THROWS_AS(verify_topology(c.with(r)), StructuralError);
}
