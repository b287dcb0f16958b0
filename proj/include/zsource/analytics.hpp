#pragma once

// Closed-form gain and voltage relations of the Y-source impedance network.
//
// Symbols follow the usual Y-source conventions: the three coupled windings
// have turns n1:n2:n3, K = n2/n1, P = n3/n1, d is the shoot-through duty
// ratio and M the modulation index. Everything here is a pure function of
// its arguments and is templated on the scalar type so that the same algebra
// can be evaluated in double, long double or an autodiff type.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "zsource/errors.hpp"

namespace zsource::analytics {

template <typename Scalar>
struct ConverterParams {
    Scalar n1{1};
    Scalar n2{1};
    Scalar n3{1};
    Scalar d{0};      ///< shoot-through duty ratio
    Scalar M{0};      ///< modulation index
    Scalar f_sw{20e3};
    Scalar V_dc{0};

    Scalar K() const { return n2 / n1; }
    Scalar P() const { return n3 / n1; }

    static ConverterParams from_turns(Scalar a, Scalar b, Scalar c) {
        ConverterParams p;
        p.n1 = a;
        p.n2 = b;
        p.n3 = c;
        return p;
    }
};

using Params = ConverterParams<double>;

template <typename Scalar>
struct AnalyticPrediction {
    Scalar V_C1{0};
    Scalar V_C2{0};
    Scalar V_pn{0};
    Scalar B{1};
    Scalar V_L1_nst{0};
    Scalar V_Lr_nst{0};
    Scalar V_ac_peak{0};
};

enum class PriorTopology { classical_yzsi, improved_yzsi, modified_yzsi };

template <typename Scalar>
struct PriorTopologyParams {
    PriorTopology topology{PriorTopology::improved_yzsi};
    Scalar N1{1};
    Scalar N2{1};
    Scalar N3{2};
    Scalar d{0};
};

std::string to_string(PriorTopology t);
PriorTopology prior_topology_from_string(const std::string& s);

namespace detail {

template <typename Scalar>
std::string num(Scalar v) {
    std::ostringstream os;
    os.precision(6);
    os << static_cast<double>(v);
    return os.str();
}

template <typename Scalar>
void require_positive_ratios(Scalar K, Scalar P) {
    if (!(K > Scalar(0)) || !(P > Scalar(0)))
        throw DomainError("turns ratios must be positive (K=" + num(K) + ", P=" + num(P) + ")");
}

}  // namespace detail

/// Largest admissible shoot-through duty: the gain denominator
/// (1-d)(1+P) - d(1+K) vanishes at d = (1+P)/(2+K+P).
template <typename Scalar>
Scalar duty_feasibility(Scalar K, Scalar P) {
    detail::require_positive_ratios(K, P);
    return (Scalar(1) + P) / (Scalar(2) + K + P);
}

template <typename Scalar>
Scalar gain_denominator(Scalar K, Scalar P, Scalar d) {
    return (Scalar(1) - d) * (Scalar(1) + P) - d * (Scalar(1) + K);
}

template <typename Scalar>
void require_feasible_duty(Scalar K, Scalar P, Scalar d) {
    const Scalar d_max = duty_feasibility(K, P);
    if (!(d >= Scalar(0)) || !(d < d_max))
        throw DomainError("infeasible shoot-through duty d=" + detail::num(d) +
                          ": must satisfy 0 <= d < d_max=" + detail::num(d_max));
}

template <typename Scalar>
Scalar boost_proposed(Scalar K, Scalar P, Scalar d) {
    require_feasible_duty(K, P, d);
    return (Scalar(1) + P) / gain_denominator(K, P, d);
}

template <typename Scalar>
struct CapVoltages {
    Scalar V_C1;
    Scalar V_C2;
};

template <typename Scalar>
CapVoltages<Scalar> cap_voltages(Scalar K, Scalar P, Scalar d, Scalar V_dc) {
    require_feasible_duty(K, P, d);
    const Scalar den = gain_denominator(K, P, d);
    return {d * (Scalar(1) + K) / den * V_dc, (Scalar(1) - d) * (Scalar(1) + P) / den * V_dc};
}

/// Link voltage recombined from the capacitor voltages. Used as the second
/// route to the DC-link plateau.
template <typename Scalar>
Scalar link_from_caps(Scalar K, Scalar P, Scalar V_dc, Scalar V_C1, Scalar V_C2) {
    return V_C1 + (Scalar(1) + P) / (Scalar(1) + K) * V_C2 - (P - K) / (Scalar(1) + K) * V_dc;
}

/// DC-link plateau during the non-shoot-through interval. Both routes are
/// evaluated; a disagreement beyond 1e-9 relative is a programming error.
template <typename Scalar>
Scalar dc_link(Scalar K, Scalar P, Scalar d, Scalar V_dc) {
    const Scalar direct = boost_proposed(K, P, d) * V_dc;
    const auto caps = cap_voltages(K, P, d, V_dc);
    const Scalar recombined = link_from_caps(K, P, V_dc, caps.V_C1, caps.V_C2);
    using std::abs;
    using std::max;
    if (abs(direct - recombined) > Scalar(1e-9) * max(Scalar(1), abs(direct)))
        throw std::logic_error("dc_link: gain and capacitor routes disagree");
    return direct;
}

template <typename Scalar>
struct InductorVoltages {
    Scalar V_L1;
    Scalar V_Lr;
};

template <typename Scalar>
InductorVoltages<Scalar> nst_inductor_voltages(Scalar K, Scalar P, Scalar V_dc, Scalar V_C1,
                                               Scalar V_C2) {
    detail::require_positive_ratios(K, P);
    const Scalar drive = (V_dc - V_C2) / (Scalar(1) + K);
    return {drive, (P - K) * drive - V_C1};
}

/// AC phase peak, read as (M/2)*B*V_dc.
template <typename Scalar>
Scalar ac_peak(Scalar M, Scalar K, Scalar P, Scalar d, Scalar V_dc) {
    if (!(M >= Scalar(0)) || !(M <= Scalar(1)))
        throw DomainError("modulation index M=" + detail::num(M) + " outside [0, 1]");
    return M / Scalar(2) * boost_proposed(K, P, d) * V_dc;
}

/// Coupling factor of the classical/improved/modified Y-source networks,
/// K = (N3+N1)/(N3-N2).
template <typename Scalar>
Scalar prior_coupling(const PriorTopologyParams<Scalar>& p) {
    if (!(p.N1 > Scalar(0)) || !(p.N2 > Scalar(0)) || !(p.N3 > Scalar(0)))
        throw DomainError("winding turns must be positive");
    if (p.N3 == p.N2) throw DomainError("N3 == N2 makes K=(N3+N1)/(N3-N2) undefined");
    return (p.N3 + p.N1) / (p.N3 - p.N2);
}

template <typename Scalar>
Scalar boost_prior(const PriorTopologyParams<Scalar>& p) {
    const Scalar K = prior_coupling(p);
    const Scalar slope = p.topology == PriorTopology::classical_yzsi ? K : K + Scalar(1);
    const Scalar den = Scalar(1) - slope * p.d;
    if (!(p.d >= Scalar(0)) || !(den > Scalar(0)))
        throw DomainError(to_string(p.topology) + ": boost denominator 1-" + detail::num(slope) +
                          "*d is not positive at d=" + detail::num(p.d));
    return Scalar(1) / den;
}

/// Inverse of the proposed-topology gain:
/// d = (1+P)(B-1) / (B(2+K+P)).
template <typename Scalar>
Scalar solve_duty(Scalar B_target, Scalar K, Scalar P) {
    detail::require_positive_ratios(K, P);
    using std::isfinite;
    if (!isfinite(static_cast<double>(B_target)) || !(B_target >= Scalar(1)))
        throw DomainError("boost factor " + detail::num(B_target) +
                          " is unreachable: need finite B >= 1");
    return (Scalar(1) + P) * (B_target - Scalar(1)) / (B_target * (Scalar(2) + K + P));
}

/// Duty that gives a prior topology the requested gain.
template <typename Scalar>
Scalar solve_duty_prior(Scalar B_target, const PriorTopologyParams<Scalar>& p) {
    const Scalar K = prior_coupling(p);
    const Scalar slope = p.topology == PriorTopology::classical_yzsi ? K : K + Scalar(1);
    if (!(B_target >= Scalar(1)) || !(slope > Scalar(0)))
        throw DomainError("boost factor " + detail::num(B_target) + " is unreachable for " +
                          to_string(p.topology));
    return (Scalar(1) - Scalar(1) / B_target) / slope;
}

template <typename Scalar>
AnalyticPrediction<Scalar> predict(const ConverterParams<Scalar>& p) {
    const Scalar K = p.K();
    const Scalar P = p.P();
    AnalyticPrediction<Scalar> out;
    out.B = boost_proposed(K, P, p.d);
    const auto caps = cap_voltages(K, P, p.d, p.V_dc);
    out.V_C1 = caps.V_C1;
    out.V_C2 = caps.V_C2;
    out.V_pn = dc_link(K, P, p.d, p.V_dc);
    const auto nst = nst_inductor_voltages(K, P, p.V_dc, caps.V_C1, caps.V_C2);
    out.V_L1_nst = nst.V_L1;
    out.V_Lr_nst = nst.V_Lr;
    out.V_ac_peak = ac_peak(p.M, K, P, p.d, p.V_dc);
    return out;
}

// ---------------------------------------------------------------------------
// Comparison table

struct ComparisonColumn {
    std::string name;
    std::vector<std::pair<std::string, std::string>> static_rows;  ///< verbatim metadata
    double K{0};
    double d{0};
    double boost{0};             ///< gain at the column's own duty
    double boost_at_common_d{0};  ///< gain at the proposed column's duty (NaN if infeasible)
    double d_for_common_boost{0};  ///< duty reaching the proposed column's gain
};

struct ComparisonReport {
    std::vector<ComparisonColumn> columns;
    std::vector<std::pair<std::string, std::string>> measured;  ///< optional simulation rows

    nlohmann::json to_json() const;
    std::string to_text() const;
};

ComparisonReport comparison_table(const Params& proposed,
                                  const std::vector<PriorTopologyParams<double>>& priors);

nlohmann::json to_json(const AnalyticPrediction<double>& p);

}  // namespace zsource::analytics
