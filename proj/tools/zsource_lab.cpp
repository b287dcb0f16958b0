// zsource-lab: command-line front end.
//
// Exit codes: 0 success, 1 domain/config/simulation error, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "zsource/analytics.hpp"
#include "zsource/harness.hpp"
#include "zsource/netlist.hpp"

using namespace zsource;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
    bool json_out{false};
    bool repro{false};
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_flag("--json", c.json_out, "Print JSON instead of text");
    sub->add_flag("--repro", c.repro, "Omit run metadata (timings) for bit-identical output");
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_{std::chrono::steady_clock::now()};
};

void emit(const Common& c, json j, const std::string& text, const Clock& clock) {
    if (c.json_out) {
        if (!c.repro) j["metadata"] = {{"elapsed_s", clock.seconds()}};
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << text;
        if (!c.repro) std::cout << "elapsed " << fmt("%.3f", clock.seconds()) << " s\n";
    }
}

std::array<double, 3> parse_turns(const std::string& s) {
    std::array<double, 3> t{};
    std::stringstream ss(s);
    std::string tok;
    int k = 0;
    while (std::getline(ss, tok, ':')) {
        if (k == 3) throw CLI::ValidationError("--turns", "expected a:b:c");
        try {
            std::size_t used = 0;
            t[k] = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw CLI::ValidationError("--turns", "'" + tok + "' is not a number");
        }
        ++k;
    }
    if (k != 3) throw CLI::ValidationError("--turns", "expected a:b:c");
    return t;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_outputs(const std::string& dir, const harness::RunResult& r) {
    fs::create_directories(dir);
    r.trace.write_csv((fs::path(dir) / "trace.csv").string());
    std::ofstream(fs::path(dir) / "report.json") << r.report.to_json().dump(2) << "\n";
    std::ofstream(fs::path(dir) / "report.txt") << r.report.to_text();
    if (!fs::exists(fs::path(dir) / "report.txt"))
        throw ConfigError("cannot write to '" + dir + "'");
}

// One-line summary of the quantities each case is judged on.
std::string summary(harness::CaseId id, const harness::SteadyReport& r) {
    std::ostringstream os;
    os << harness::to_string(id) << ":";
    if (r.B_meas) os << " B_meas≈" << fmt("%.2f", *r.B_meas);
    if (r.v_pn_nst) os << " NST V_pn=" << fmt("%.1f", *r.v_pn_nst) << " V";
    for (const auto& d : r.deltas)
        if (d.name == "V_pn") os << " (" << fmt("%+.1f", d.percent) << "%)";
    if (const auto* s = r.stats("v_c1")) os << " V_C1=" << fmt("%.1f", s->mean) << " V";
    if (const auto* s = r.stats("v_c2")) os << " V_C2=" << fmt("%.1f", s->mean) << " V";
    if (const auto* s = r.stats("v_out")) os << " V_out=" << fmt("%.2f", s->mean) << " V";
    if (r.min_input_current) os << " min i_in=" << fmt("%.2f", *r.min_input_current) << " A";
    if (r.p_in)
        os << " avg source power=" << fmt("%.1f", *r.p_in) << " W"
           << (*r.p_in < 0 ? " (charging)" : "");
    if (r.efficiency) os << " efficiency=" << fmt("%.4f", *r.efficiency);
    os << (r.settled ? " [settled]" : " [not settled]") << "\n";
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Y-source impedance-network converter toolkit"};
    app.require_subcommand(1);
    Common common;
    Clock clock;
    std::function<void()> action;

    // analyze ---------------------------------------------------------------
    double k = 0, p = 0, d = 0, vdc = 0, m = 0;
    auto* analyze = app.add_subcommand("analyze", "Closed-form steady-state prediction");
    analyze->add_option("--k", k, "n2/n1")->required();
    analyze->add_option("--p", p, "n3/n1")->required();
    analyze->add_option("--d", d, "shoot-through duty")->required();
    analyze->add_option("--vdc", vdc, "source voltage")->required();
    auto* m_opt = analyze->add_option("--m", m, "modulation index");
    add_common(analyze, common);
    analyze->callback([&] {
        action = [&] {
            analytics::Params op;
            op.n1 = 1;
            op.n2 = k;
            op.n3 = p;
            op.d = d;
            op.V_dc = vdc;
            op.M = m;
            const auto pr = analytics::predict(op);
            json j = {{"K", k}, {"P", p}, {"d", d}, {"V_dc", vdc},
                      {"d_max", analytics::duty_feasibility(k, p)},
                      {"B", pr.B}, {"V_C1", pr.V_C1}, {"V_C2", pr.V_C2}, {"V_pn", pr.V_pn},
                      {"V_L1_nst", pr.V_L1_nst}, {"V_Lr_nst", pr.V_Lr_nst}};
            std::ostringstream os;
            os << "B = " << fmt("%.6g", pr.B) << "\n"
               << "V_C1 = " << fmt("%.6g", pr.V_C1) << " V\n"
               << "V_C2 = " << fmt("%.6g", pr.V_C2) << " V\n"
               << "V_pn = " << fmt("%.6g", pr.V_pn) << " V\n";
            if (*m_opt) {
                j["M"] = m;
                j["V_ac_peak"] = pr.V_ac_peak;
                os << "V_ac = " << fmt("%.6g", pr.V_ac_peak) << " V peak\n";
            }
            emit(common, j, os.str(), clock);
        };
    });

    // design ----------------------------------------------------------------
    double boost = 0;
    std::string turns;
    auto* design = app.add_subcommand("design", "Duty for a target gain");
    design->add_option("--boost", boost, "target boost factor")->required();
    design->add_option("--turns", turns, "turns n1:n2:n3")->required();
    add_common(design, common);
    design->callback([&] {
        const auto t = parse_turns(turns);
        action = [&, t] {
            if (!(t[0] > 0)) throw DomainError("n1 must be positive");
            const double K = t[1] / t[0], P = t[2] / t[0];
            const double dd = analytics::solve_duty(boost, K, P);
            const double dmax = analytics::duty_feasibility(K, P);
            json j = {{"boost", boost}, {"K", K}, {"P", P}, {"d", dd}, {"d_max", dmax},
                      {"margin", dmax - dd}};
            std::ostringstream os;
            os << "d = " << fmt("%.3f", dd) << "\n"
               << "d_max = " << fmt("%.4f", dmax) << " (margin " << fmt("%.4f", dmax - dd)
               << ")\n";
            emit(common, j, os.str(), clock);
        };
    });

    // parse -----------------------------------------------------------------
    std::string netlist_path;
    auto* parse = app.add_subcommand("parse", "Parse and validate a netlist");
    parse->add_option("netlist", netlist_path, "netlist file")->required();
    add_common(parse, common);
    parse->callback([&] {
        action = [&] {
            const auto text = read_file(netlist_path);
            try {
                const auto c = netlist::parse(text);
                json els = json::array();
                for (const auto& e : c.elements())
                    els.push_back({{"name", e.name},
                                   {"kind", netlist::to_string(e.kind)},
                                   {"nodes", e.nodes}});
                json j = {{"valid", true},
                          {"elements", els},
                          {"nodes", std::vector<std::string>(c.nodes().begin(), c.nodes().end())},
                          {"canonical", netlist::serialize(c)}};
                std::ostringstream os;
                os << netlist_path << ": " << c.elements().size() << " elements, "
                   << c.nodes().size() << " nodes\n"
                   << netlist::serialize(c);
                emit(common, j, os.str(), clock);
            } catch (const netlist::ParseError& e) {
                if (common.json_out) {
                    json diags = json::array();
                    for (const auto& dg : e.diagnostics())
                        diags.push_back({{"line", dg.line},
                                         {"column", dg.column},
                                         {"code", dg.code},
                                         {"message", dg.message}});
                    std::cout << json{{"valid", false}, {"diagnostics", diags}}.dump(2) << "\n";
                } else {
                    std::cerr << e.format(netlist_path);
                }
                throw;
            }
        };
    });

    // simulate --------------------------------------------------------------
    std::string scenario_path, out_dir;
    auto* simulate = app.add_subcommand("simulate", "Run a scenario file");
    simulate->add_option("scenario", scenario_path, "scenario JSON")->required();
    simulate->add_option("--out", out_dir, "directory for trace.csv, report.json, report.txt");
    add_common(simulate, common);
    simulate->callback([&] {
        action = [&] {
            const auto s = harness::Scenario::load(scenario_path);
            const auto r = harness::run(s);
            if (!out_dir.empty()) write_outputs(out_dir, r);
            emit(common, r.report.to_json(), r.report.to_text(), clock);
        };
    });

    // steady ----------------------------------------------------------------
    int max_iter = 30;
    auto* steady = app.add_subcommand("steady", "Periodic steady state by shooting");
    steady->add_option("scenario", scenario_path, "scenario JSON")->required();
    steady->add_option("--max-iter", max_iter, "Newton iteration limit")->check(CLI::NonNegativeNumber);
    add_common(steady, common);
    steady->callback([&] {
        action = [&] {
            const auto s = harness::Scenario::load(scenario_path);
            harness::ShootOptions o;
            o.max_iterations = max_iter;
            const auto r = harness::shoot_steady(s, s.start_state(), o);
            const auto names = engine::Simulator(s.circuit(), s.sim.dt).state_names();
            json st = json::object();
            std::ostringstream os;
            os << "converged in " << r.iterations << " iterations at t = "
               << fmt("%.9g", r.state.t) << " s\n";
            for (std::size_t i = 0; i < names.size(); ++i) {
                st[names[i]] = r.state.x[static_cast<int>(i)];
                os << "  " << names[i] << " = " << fmt("%.9g", r.state.x[static_cast<int>(i)])
                   << "\n";
            }
            emit(common, {{"iterations", r.iterations}, {"residuals", r.residuals},
                          {"t", r.state.t}, {"state", st}},
                 os.str(), clock);
        };
    });

    // case ------------------------------------------------------------------
    std::string case_name;
    std::string case_out = ".";
    auto* cs = app.add_subcommand("case", "Reproduce a builtin case study");
    cs->add_option("case", case_name, "case1_motor | case2_generator | case3_dcdc")
        ->required()
        ->check(CLI::IsMember({"case1_motor", "case2_generator", "case3_dcdc"}));
    cs->add_option("--out", case_out, "output directory (default .)");
    add_common(cs, common);
    cs->callback([&] {
        action = [&] {
            const auto id = harness::case_from_string(case_name);
            const auto r = harness::run(harness::Scenario::builtin_case(id));
            write_outputs(case_out, r);
            json j = r.report.to_json();
            j["summary"] = summary(id, r.report);
            emit(common, j, summary(id, r.report), clock);
        };
    });

    // compare ---------------------------------------------------------------
    std::vector<std::string> cases;
    int threads = 0;
    auto* cmp = app.add_subcommand("compare", "Topology comparison table with measured rows");
    cmp->add_option("cases", cases, "cases to run (default: none, analytic table only)")
        ->check(CLI::IsMember({"case1_motor", "case2_generator", "case3_dcdc", "all"}));
    cmp->add_option("--threads", threads, "worker threads (default ZSOURCE_LAB_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    add_common(cmp, common);
    cmp->callback([&] {
        action = [&] {
            std::vector<harness::CaseId> ids;
            for (const auto& c : cases) {
                if (c == "all") {
                    for (auto id : harness::all_cases()) ids.push_back(id);
                } else {
                    ids.push_back(harness::case_from_string(c));
                }
            }
            const auto r =
                harness::compare_cases(ids, threads > 0 ? threads : harness::thread_budget());
            emit(common, r.to_json(), r.to_text(), clock);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        action();
        return 0;
    } catch (const netlist::ParseError& e) {
        if (!common.json_out) std::cerr << "error: invalid netlist\n";
        return 1;
    } catch (const harness::ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const SimulationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
