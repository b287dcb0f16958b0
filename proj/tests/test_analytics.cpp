#include <catch_amalgamated.hpp>

#include <random>

#include "zsource/analytics.hpp"

using namespace zsource;
using namespace zsource::analytics;
using Catch::Approx;

namespace {

// Bisection on the forward gain; independent of the closed-form inverse.
double bisect_duty(double B, double K, double P) {
    double lo = 0, hi = duty_feasibility(K, P) * (1 - 1e-15);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (boost_proposed(K, P, mid) < B) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

struct Draw {
    double K, P, d, V;
};

Draw random_feasible(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ratio(0.2, 5.0), frac(0.0, 0.98), volt(1, 400);
    Draw x{ratio(rng), ratio(rng), 0, volt(rng)};
    x.d = frac(rng) * duty_feasibility(x.K, x.P);
    return x;
}

}  // namespace

TEST_CASE("boost factor of the proposed network", "[analytics]") {
    CHECK(boost_proposed(3.4, 1.0, 0.25) == Approx(5.0).epsilon(1e-12));
    CHECK(boost_proposed(2.0, 2.0, 0.4) == Approx(5.0).epsilon(1e-12));
    CHECK(boost_proposed(7.0, 0.3, 0.0) == 1.0);
    CHECK_THROWS_AS(boost_proposed(2.0, 2.0, 0.5), DomainError);
    CHECK_THROWS_WITH(boost_proposed(2.0, 2.0, 0.6), Catch::Matchers::ContainsSubstring("d_max=0.5"));
    CHECK_THROWS_AS(boost_proposed(2.0, 2.0, -0.1), DomainError);
}

TEST_CASE("capacitor voltages", "[analytics]") {
    auto a = cap_voltages(2.0, 2.0, 0.4, 20.0);
    CHECK(a.V_C1 == Approx(40.0).epsilon(1e-12));
    CHECK(a.V_C2 == Approx(60.0).epsilon(1e-12));
    CHECK(link_from_caps(2.0, 2.0, 20.0, a.V_C1, a.V_C2) == Approx(100.0).epsilon(1e-12));

    auto b = cap_voltages(3.4, 1.0, 0.25, 80.0);
    CHECK(b.V_C1 == Approx(220.0).epsilon(1e-12));
    CHECK(b.V_C2 == Approx(300.0).epsilon(1e-12));
    CHECK(link_from_caps(3.4, 1.0, 80.0, b.V_C1, b.V_C2) == Approx(400.0).epsilon(1e-12));

    auto z = cap_voltages(1.7, 0.9, 0.0, 33.0);
    CHECK(z.V_C1 == 0.0);
    CHECK(z.V_C2 == Approx(33.0).epsilon(1e-15));
    CHECK_THROWS_AS(cap_voltages(2.0, 2.0, 0.5, 20.0), DomainError);
}

TEST_CASE("dc link", "[analytics]") {
    CHECK(dc_link(2.0, 2.0, 0.4, 20.0) == Approx(100.0).epsilon(1e-12));
    CHECK(dc_link(3.4, 1.0, 0.25, 80.0) == Approx(400.0).epsilon(1e-12));
    CHECK(dc_link(1.0, 1.0, 0.0, 48.0) == Approx(48.0).epsilon(1e-15));
    CHECK_THROWS_AS(dc_link(3.4, 1.0, 0.3125, 80.0), DomainError);
}

TEST_CASE("non-shoot-through inductor voltages", "[analytics]") {
    auto a = nst_inductor_voltages(2.0, 2.0, 20.0, 40.0, 60.0);
    CHECK(a.V_L1 == Approx(-40.0 / 3.0).epsilon(1e-12));
    CHECK(a.V_Lr == Approx(-40.0).epsilon(1e-12));
    auto b = nst_inductor_voltages(3.4, 1.0, 80.0, 220.0, 300.0);
    CHECK(b.V_L1 == Approx(-50.0).epsilon(1e-12));
    // (1-3.4)/(4.4)*(80-300) - 220; also the value that closes volt-second
    // balance against the shoot-through voltage V_C2 = 300 at d = 0.25.
    CHECK(b.V_Lr == Approx(-100.0).epsilon(1e-12));
    CHECK(0.25 * 300.0 + 0.75 * b.V_Lr == Approx(0).margin(1e-9));
    auto z = nst_inductor_voltages(1.3, 1.3, 25.0, 0.0, 25.0);
    CHECK(z.V_L1 == 0.0);
    CHECK(z.V_Lr == 0.0);
}

TEST_CASE("ac peak", "[analytics]") {
    CHECK(ac_peak(1.0, 2.0, 2.0, 0.4, 20.0) == Approx(50.0).epsilon(1e-12));
    CHECK(ac_peak(0.0, 2.0, 2.0, 0.4, 20.0) == 0.0);
    CHECK(ac_peak(0.8, 3.4, 1.0, 0.25, 80.0) == Approx(160.0).epsilon(1e-12));
    CHECK_THROWS_AS(ac_peak(1.2, 2.0, 2.0, 0.4, 20.0), DomainError);
}

TEST_CASE("prior topologies", "[analytics]") {
    PriorTopologyParams<double> improved{PriorTopology::improved_yzsi, 1, 1, 2, 0.2};
    CHECK(prior_coupling(improved) == Approx(3.0));
    CHECK(boost_prior(improved) == Approx(5.0).epsilon(1e-12));
    auto modified = improved;
    modified.topology = PriorTopology::modified_yzsi;
    CHECK(boost_prior(modified) == Approx(5.0).epsilon(1e-12));
    PriorTopologyParams<double> classical{PriorTopology::classical_yzsi, 1, 1, 2, 0.0};
    CHECK(boost_prior(classical) == 1.0);
    classical.d = 0.2;
    CHECK(boost_prior(classical) == Approx(1.0 / (1.0 - 0.6)));

    PriorTopologyParams<double> pole{PriorTopology::improved_yzsi, 1, 2, 2, 0.1};
    CHECK_THROWS_AS(boost_prior(pole), DomainError);
    improved.d = 0.25;  // (K+1)d = 1
    CHECK_THROWS_AS(boost_prior(improved), DomainError);
}

TEST_CASE("duty design", "[analytics]") {
    CHECK(solve_duty(5.0, 2.0, 2.0) == Approx(0.4).epsilon(1e-12));
    CHECK(solve_duty(5.0, 3.4, 1.0) == Approx(0.25).epsilon(1e-12));
    CHECK(solve_duty(1.0, 2.0, 2.0) == 0.0);
    CHECK_THROWS_AS(solve_duty(0.5, 2.0, 2.0), DomainError);

    CHECK(duty_feasibility(2.0, 2.0) == Approx(0.5));
    CHECK(duty_feasibility(3.4, 1.0) == Approx(0.3125));
    CHECK(duty_feasibility(0.7, 0.7) == Approx(0.5));

    // Closed form against bisection on the forward map.
    for (double B : {1.5, 3.0, 5.0, 12.0})
        CHECK(solve_duty(B, 3.4, 1.0) == Approx(bisect_duty(B, 3.4, 1.0)).margin(1e-12));
}

TEST_CASE("gain algebra properties", "[analytics][property]") {
    std::mt19937_64 rng(0x5eed);
    for (int i = 0; i < 1000; ++i) {
        const auto x = random_feasible(rng);
        const double B = boost_proposed(x.K, x.P, x.d);
        // round trip
        REQUIRE(solve_duty(B, x.K, x.P) == Approx(x.d).margin(1e-9));
        // two routes to the link voltage
        const auto caps = cap_voltages(x.K, x.P, x.d, x.V);
        const double link = link_from_caps(x.K, x.P, x.V, caps.V_C1, caps.V_C2);
        REQUIRE(link == Approx(B * x.V).epsilon(1e-9));
        REQUIRE_NOTHROW(dc_link(x.K, x.P, x.d, x.V));

        // Volt-second closure. Shoot-through inductor voltages follow from the
        // shoot-through loops: magnetizing (Vdc + VC1)/(1+P), series inductor VC2.
        if (x.d > 1e-6) {
            const auto nst = nst_inductor_voltages(x.K, x.P, x.V, caps.V_C1, caps.V_C2);
            const double st_m = (x.V + caps.V_C1) / (1 + x.P);
            const double st_r = caps.V_C2;
            REQUIRE(x.d * st_m + (1 - x.d) * nst.V_L1 == Approx(0).margin(1e-9 * x.V));
            REQUIRE(x.d * st_r + (1 - x.d) * nst.V_Lr == Approx(0).margin(1e-9 * x.V));
        }

        // K = P reduces to 1/(1-2d)
        const double d_sym = x.d * 0.5 / duty_feasibility(x.K, x.P);
        REQUIRE(boost_proposed(x.K, x.K, d_sym) == Approx(1 / (1 - 2 * d_sym)).epsilon(1e-12));
    }
}

TEST_CASE("gain is strictly increasing in duty", "[analytics][property]") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        const auto x = random_feasible(rng);
        const double d_max = duty_feasibility(x.K, x.P);
        double prev = boost_proposed(x.K, x.P, 0.0);
        for (int k = 1; k < 50; ++k) {
            const double b = boost_proposed(x.K, x.P, d_max * k / 50.0);
            REQUIRE(b > prev);
            prev = b;
        }
    }
}

TEST_CASE("templated on scalar", "[analytics]") {
    const long double B = boost_proposed<long double>(2.0L, 2.0L, 0.4L);
    CHECK(static_cast<double>(B) == Approx(5.0).epsilon(1e-15));
    const float f = boost_proposed<float>(3.4f, 1.0f, 0.25f);
    CHECK(f == Approx(5.0f).epsilon(1e-5));
}

TEST_CASE("comparison table", "[analytics]") {
    Params p = Params::from_turns(1, 2, 2);
    p.d = 0.4;
    p.V_dc = 20;
    const auto only = comparison_table(p, {});
    REQUIRE(only.columns.size() == 1);
    CHECK(only.columns[0].static_rows[0].second == "2");
    CHECK(only.columns[0].static_rows[2].second == "One diode");

    PriorTopologyParams<double> improved{PriorTopology::improved_yzsi, 1, 1, 2, 0.2};
    const auto r = comparison_table(p, {improved});
    REQUIRE(r.columns.size() == 2);
    CHECK(r.columns[0].boost == Approx(5.0));
    CHECK(r.columns[1].boost == Approx(5.0));
    CHECK(r.columns[1].d_for_common_boost == Approx(0.2));
    CHECK(r.columns[0].d_for_common_boost == Approx(0.4));
    // improved network at d=0.4 would be past its pole
    CHECK(std::isnan(r.columns[1].boost_at_common_d));

    const auto j = r.to_json();
    CHECK(j["columns"][1]["name"] == "improved_yzsi");
    CHECK(j["columns"][1]["boost_at_common_d"].is_null());
    const auto text = r.to_text();
    CHECK(text.find("boost factor") != std::string::npos);
    CHECK(text.find("Soft switching") != std::string::npos);
}
