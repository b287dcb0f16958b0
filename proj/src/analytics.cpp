#include "zsource/analytics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

namespace zsource::analytics {

std::string to_string(PriorTopology t) {
    switch (t) {
        case PriorTopology::classical_yzsi: return "classical_yzsi";
        case PriorTopology::improved_yzsi: return "improved_yzsi";
        case PriorTopology::modified_yzsi: return "modified_yzsi";
    }
    return "unknown";
}

PriorTopology prior_topology_from_string(const std::string& s) {
    if (s == "classical_yzsi" || s == "classical") return PriorTopology::classical_yzsi;
    if (s == "improved_yzsi" || s == "improved") return PriorTopology::improved_yzsi;
    if (s == "modified_yzsi" || s == "modified") return PriorTopology::modified_yzsi;
    throw DomainError("unknown prior topology '" + s + "'");
}

namespace {

using Rows = std::vector<std::pair<std::string, std::string>>;

// Qualitative comparison rows, carried verbatim as metadata.
Rows static_rows_proposed() {
    return {{"Number of capacitors", "2"},
            {"Number of inductors", "Y-Source winding, one inductor"},
            {"Number of diodes in impedance network", "One diode"},
            {"Continuous input current", "Yes"},
            {"Startup inrush current", "Yes"},
            {"Soft switching", "Yes, it helps to soft switching in induction loads."},
            {"Common grounding", "Yes"},
            {"Efficiency", "Well"}};
}

Rows static_rows(PriorTopology t) {
    switch (t) {
        case PriorTopology::improved_yzsi:
            return {{"Number of capacitors", "2"},
                    {"Number of inductors", "Y-Source winding, one inductor"},
                    {"Number of diodes in impedance network", "One diode"},
                    {"Continuous input current", "Yes"},
                    {"Startup inrush current", "No"},
                    {"Soft switching", "No"},
                    {"Common grounding", "Yes"},
                    {"Efficiency", "Low"}};
        case PriorTopology::modified_yzsi:
            return {{"Number of capacitors", "4"},
                    {"Number of inductors", "Y-Source winding, two inductors"},
                    {"Number of diodes in impedance network", "2 diodes"},
                    {"Continuous input current", "Yes"},
                    {"Startup inrush current", "-"},
                    {"Soft switching", "No"},
                    {"Common grounding", "Yes"},
                    {"Efficiency", "well"}};
        case PriorTopology::classical_yzsi:
            break;
    }
    return {};
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

std::string fmt(double v, int prec = 4) {
    if (std::isnan(v)) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

}  // namespace

ComparisonReport comparison_table(const Params& proposed,
                                  const std::vector<PriorTopologyParams<double>>& priors) {
    ComparisonReport report;

    ComparisonColumn col;
    col.name = "proposed";
    col.static_rows = static_rows_proposed();
    col.K = proposed.K();
    col.d = proposed.d;
    col.boost = boost_proposed(proposed.K(), proposed.P(), proposed.d);
    col.boost_at_common_d = col.boost;
    col.d_for_common_boost = proposed.d;
    report.columns.push_back(col);

    const double common_d = proposed.d;
    const double common_B = col.boost;
    for (const auto& prior : priors) {
        ComparisonColumn c;
        c.name = to_string(prior.topology);
        c.static_rows = static_rows(prior.topology);
        c.K = prior_coupling(prior);
        c.d = prior.d;
        c.boost = boost_prior(prior);
        auto at_common = prior;
        at_common.d = common_d;
        try {
            c.boost_at_common_d = boost_prior(at_common);
        } catch (const DomainError&) {
            c.boost_at_common_d = nan();
        }
        c.d_for_common_boost = solve_duty_prior(common_B, prior);
        report.columns.push_back(c);
    }
    return report;
}

nlohmann::json ComparisonReport::to_json() const {
    nlohmann::json cols = nlohmann::json::array();
    auto num_or_null = [](double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); };
    for (const auto& c : columns) {
        nlohmann::json j;
        j["name"] = c.name;
        nlohmann::json rows = nlohmann::json::object();
        for (const auto& [k, v] : c.static_rows) rows[k] = v;
        j["static"] = rows;
        j["K"] = c.K;
        j["d"] = c.d;
        j["boost"] = c.boost;
        j["boost_at_common_d"] = num_or_null(c.boost_at_common_d);
        j["d_for_common_boost"] = num_or_null(c.d_for_common_boost);
        cols.push_back(j);
    }
    nlohmann::json out;
    out["columns"] = cols;
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : measured) m[k] = v;
    out["measured"] = m;
    return out;
}

std::string ComparisonReport::to_text() const {
    std::vector<std::string> labels;
    std::vector<std::vector<std::string>> cells;  // [row][col]
    auto add_row = [&](const std::string& label, std::vector<std::string> values) {
        labels.push_back(label);
        cells.push_back(std::move(values));
    };

    std::vector<std::string> header;
    for (const auto& c : columns) header.push_back(c.name);
    add_row("", header);

    if (!columns.empty()) {
        // Static rows keyed by the proposed column's labels.
        for (const auto& [label, _] : columns.front().static_rows) {
            std::vector<std::string> row;
            for (const auto& c : columns) {
                std::string v = "-";
                for (const auto& [k, val] : c.static_rows)
                    if (k == label) v = val;
                row.push_back(v);
            }
            add_row(label, row);
        }
        std::vector<std::string> k, d, b, bc, dc;
        for (const auto& c : columns) {
            k.push_back(fmt(c.K));
            d.push_back(fmt(c.d));
            b.push_back(fmt(c.boost));
            bc.push_back(fmt(c.boost_at_common_d));
            dc.push_back(fmt(c.d_for_common_boost));
        }
        add_row("K", k);
        add_row("duty d", d);
        add_row("boost factor", b);
        add_row("boost at proposed d", bc);
        add_row("d for proposed boost", dc);
    }

    std::size_t label_w = 0;
    for (const auto& l : labels) label_w = std::max(label_w, l.size());
    std::vector<std::size_t> col_w(header.size(), 0);
    for (const auto& row : cells)
        for (std::size_t i = 0; i < row.size(); ++i) col_w[i] = std::max(col_w[i], row[i].size());

    std::ostringstream os;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        os << std::left << std::setw(static_cast<int>(label_w)) << labels[r];
        for (std::size_t i = 0; i < cells[r].size(); ++i)
            os << "  " << std::setw(static_cast<int>(col_w[i])) << cells[r][i];
        os << '\n';
    }
    if (!measured.empty()) {
        os << '\n';
        std::size_t w = 0;
        for (const auto& [k, _] : measured) w = std::max(w, k.size());
        for (const auto& [k, v] : measured)
            os << std::left << std::setw(static_cast<int>(w)) << k << "  " << v << '\n';
    }
    return os.str();
}

nlohmann::json to_json(const AnalyticPrediction<double>& p) {
    return {{"B", p.B},           {"V_C1", p.V_C1},         {"V_C2", p.V_C2},
            {"V_pn", p.V_pn},     {"V_L1_nst", p.V_L1_nst}, {"V_Lr_nst", p.V_Lr_nst},
            {"V_ac_peak", p.V_ac_peak}};
}

}  // namespace zsource::analytics
