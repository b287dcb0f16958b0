#include <catch_amalgamated.hpp>

#include <random>

#include "zsource/netlist.hpp"
#include "netlist_gen.hpp"

using namespace zsource;
using namespace zsource::netlist;

namespace {

std::vector<std::string> codes(const std::string& text) {
    try {
        parse(text);
    } catch (const ParseError& e) {
        std::vector<std::string> out;
        for (const auto& d : e.diagnostics()) out.push_back(d.code);
        return out;
    }
    return {};
}

analytics::Params dcdc_op() {
    auto p = analytics::Params::from_turns(1, 2, 2);
    p.d = 0.4;
    p.V_dc = 20;
    p.f_sw = 20e3;
    return p;
}

analytics::Params drive_op() {
    auto p = analytics::Params::from_turns(1, 3.4, 1);
    p.d = 0.25;
    p.M = 0.75;
    p.V_dc = 80;
    return p;
}

}  // namespace

TEST_CASE("SI numbers", "[netlist]") {
    CHECK(parse_si("100u").value() == 100e-6);
    CHECK(parse_si("330U").value() == 330e-6);
    CHECK(parse_si("1meg").value() == 1e6);
    CHECK(parse_si("0.15u").value() == 0.15e-6);
    CHECK(parse_si("2.5e-3k").value() == 2.5);
    CHECK(parse_si("-4.7n").value() == -4.7e-9);
    CHECK(parse_si("20").value() == 20.0);
    CHECK_FALSE(parse_si("100uF"));
    CHECK_FALSE(parse_si("abc"));
    CHECK_FALSE(parse_si("1e"));
    CHECK_FALSE(parse_si("m"));

    CHECK(format_si(100e-6) == "100u");
    CHECK(format_si(0.15e-6) == "150n");
    CHECK(format_si(1e6) == "1meg");
    CHECK(format_si(245) == "245");
    CHECK(format_si(0) == "0");
    CHECK(format_si(-0.45) == "-450m");

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> mant(-10, 10);
    std::uniform_int_distribution<int> ex(-20, 20);
    for (int i = 0; i < 5000; ++i) {
        const double v = mant(rng) * std::pow(10.0, ex(rng));
        REQUIRE(parse_si(format_si(v)).value() == v);
    }
}

TEST_CASE("parse single element", "[netlist]") {
    const auto c = parse("V1 in 0 dc=20\n");
    REQUIRE(c.elements().size() == 1);
    CHECK(c.elements()[0].kind == Kind::V);
    CHECK(c.elements()[0].name == "v1");
    CHECK(c.nodes() == std::set<std::string>{"in", "0"});
    CHECK(c.find("V1") != nullptr);
}

TEST_CASE("parse diagnostics", "[netlist]") {
    CHECK(codes("C1 a 0 c=100u\nC1 a 0 c=1u\n") == std::vector<std::string>{"duplicate-name"});
    CHECK(codes("q1 a 0 r=1\n") == std::vector<std::string>{"unknown-kind"});
    CHECK(codes("r1 a r=1\n")[0] == "arity");
    CHECK(codes("v1\n")[0] == "arity");
    CHECK(codes("r1 a 0 r=1x\n")[0] == "bad-number");
    CHECK(codes("r1 a 0\n")[0] == "missing-param");
    CHECK(codes("r1 a b r=1\n")[0] == "missing-ground");
    CHECK(codes("r1 a 0 r=1\nr2 b c r=1\n")[0] == "floating-node");
    CHECK(codes("r1 a 0 r=-1\n")[0] == "bad-value");
    CHECK(codes("r1 a 0 r=1 foo=2\n")[0] == "unknown-param");
    CHECK(codes("d1 a 0 ron=2 roff=1\n")[0] == "bad-value");
    CHECK(codes("w3y a 0 b 0 c 0 lm=1m turns=1:0:2\n")[0] == "bad-number");

    try {
        parse("# header\nr1 a 0 r=1\n\nc2 a 0 c=1q\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(e.diagnostics().size() == 1);
        CHECK(e.diagnostics()[0].line == 4);
        CHECK(e.diagnostics()[0].column == 10);
        CHECK(e.diagnostics()[0].format("x.net").rfind("x.net:4: bad-number:", 0) == 0);
    }
}

TEST_CASE("case-insensitive names", "[netlist]") {
    CHECK(codes("R1 a 0 r=1\nr1 a 0 r=2\n") == std::vector<std::string>{"duplicate-name"});
    const auto c = parse("R1 A 0 R=1K\n");
    CHECK(c.elements()[0].value("r") == 1000.0);
    CHECK(c.nodes().count("a") == 1);
}

TEST_CASE("serialize", "[netlist]") {
    CHECK(serialize(Circuit{}) == "# zsource netlist\n");
    CHECK(parse(serialize(Circuit{})).empty());

    const auto c = parse("C1 a 0 v0=12 c=100u\nL1 a 0 l=1m i0=2.5\n");
    const auto text = serialize(c);
    CHECK(text == "# zsource netlist\nc1 a 0 c=100u v0=12\nl1 a 0 i0=2.5 l=1m\n");
    CHECK(parse(text) == c);
}

TEST_CASE("round trip over random netlists", "[netlist][property]") {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 500; ++i) {
        const auto c = testgen::random_circuit(rng);
        const auto text = serialize(c);
        const auto back = parse(text);
        REQUIRE(back == c);
        REQUIRE(serialize(back) == text);
    }
}

TEST_CASE("malformed inputs always carry line numbers", "[netlist][property]") {
    std::mt19937_64 rng(99);
    int rejected = 0;
    for (int i = 0; i < 500; ++i) {
        const auto text = testgen::corrupt(serialize(testgen::random_circuit(rng)), rng);
        const int lines = static_cast<int>(std::count(text.begin(), text.end(), '\n')) + 1;
        try {
            parse(text);
        } catch (const ParseError& e) {
            ++rejected;
            REQUIRE_FALSE(e.diagnostics().empty());
            for (const auto& d : e.diagnostics()) {
                REQUIRE(d.line >= 1);
                REQUIRE(d.line <= lines);
                REQUIRE_FALSE(d.code.empty());
            }
        }
    }
    CHECK(rejected > 400);
}

TEST_CASE("builtin netlists", "[netlist]") {
    const auto c3 = builtin(dcdc_op(), ComponentValues::dcdc_sample(), Mode::dcdc);
    CHECK(c3.at("c1").value("c") == 220e-6);
    CHECK(c3.at("c2").value("c") == 680e-6);
    CHECK(c3.at("rload").value("r") == 245);
    CHECK(c3.at("w3y").turns() == std::array<double, 3>{1, 2, 2});
    CHECK(parse(serialize(c3)) == c3);

    const auto c2 = builtin(drive_op(), ComponentValues::drive_sample(), Mode::inverter);
    CHECK(c2.at("w3y").turns() == std::array<double, 3>{1, 3.4, 1});
    CHECK(c2.at("w3y").value("lm") == 370e-6);
    CHECK(c2.at("w3y").value("ll1") == 0.15e-6);
    CHECK(c2.count(Kind::S) == 6);
    CHECK(c2.count(Kind::LOAD3) == 1);
    CHECK(parse(serialize(c2)) == c2);

    // Zero leakage is accepted; the engine floors it.
    auto v = ComponentValues::dcdc_sample();
    v.leakage = 0;
    const auto z = builtin(dcdc_op(), v, Mode::dcdc);
    CHECK(z.at("w3y").value("ll2") == 0.0);

    auto bad = dcdc_op();
    bad.d = 0.5;
    CHECK_THROWS_AS(builtin(bad, ComponentValues::dcdc_sample(), Mode::dcdc), DomainError);
}

TEST_CASE("builtin keeps the network inventory", "[netlist]") {
    for (auto mode : {Mode::dcdc, Mode::inverter}) {
        const auto c = builtin(mode == Mode::dcdc ? dcdc_op() : drive_op(),
                               mode == Mode::dcdc ? ComponentValues::dcdc_sample()
                                                  : ComponentValues::drive_sample(),
                               mode);
        int caps = 0, diodes = 0;
        for (const auto& e : c.elements()) {
            const bool network = std::any_of(e.nodes.begin(), e.nodes.end(), [](const auto& n) {
                return n == nodes::tap || n == nodes::d1_out || n == nodes::c2_top ||
                       n == nodes::c1_low;
            });
            if (!network) continue;
            caps += e.kind == Kind::C;
            diodes += e.kind == Kind::D;
        }
        CHECK(caps == 2);
        CHECK(diodes == 1);
    }
}
