#include "zsource/refmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

namespace zsource::refmodel {

double RefLoad::conductance(const modulation::GateSet& g) const {
    switch (kind) {
        case Kind::open: return 0;
        case Kind::link_resistor: return 1 / r;
        case Kind::star_resistor: {
            // High legs sit at V_pn, low legs at 0; the star point floats to
            // the mean, so the link sees n(3-n)/3 phase conductances.
            int n = 0;
            for (int k = 0; k < 3; ++k) n += g.leg[2 * k] ? 1 : 0;
            return n * (3 - n) / (3.0 * r);
        }
    }
    return 0;
}

double nst_mean_conductance(const RefLoad& load, const modulation::Modulator& mod) {
    const long n = mod.steps_per_period();
    double sum = 0;
    long count = 0;
    for (long k = 0; k < n; ++k) {
        const auto g = mod.at_step(k);
        if (g.st) continue;
        sum += load.conductance(g);
        ++count;
    }
    return count ? sum / count : 0;
}

RefParams RefParams::from(const analytics::Params& op, const netlist::ComponentValues& v,
                          const RefLoad& load) {
    RefParams p;
    p.op = op;
    p.c1 = v.c1;
    p.c2 = v.c2;
    p.lr = v.lr;
    p.lm = v.lm;
    p.load = load;
    return p;
}

Voltages voltages(const RefState& s, Phase ph, double K, double P, double V_dc) {
    Voltages v;
    if (ph == Phase::nst) {
        v.v_m = (V_dc - s.v_c2) / (1 + K);
        v.v_lr = (P - K) * v.v_m - s.v_c1;
        v.v_pn = analytics::link_from_caps(K, P, V_dc, s.v_c1, s.v_c2);
    } else {
        v.v_m = (V_dc + s.v_c1) / (1 + P);
        v.v_lr = s.v_c2;
        v.v_pn = 0;
    }
    return v;
}

Currents currents(const RefState& s, Phase ph, double K, double P, double V_dc, double g_link) {
    Currents c;
    if (ph == Phase::nst) {
        c.i_link = g_link * voltages(s, ph, K, P, V_dc).v_pn;
        const double q = c.i_link - s.i_lr;
        const double i2 = (s.i_m - (1 + P) * q) / (1 + K);
        c.i_w = {q + i2, i2, q};
    } else {
        const double i = s.i_m / (1 + P);
        c.i_w = {i, 0, i};
        c.i_link = s.i_lr + i;
    }
    return c;
}

RefState derivatives(const RefState& s, Phase ph, const RefParams& p, double g_link) {
    const double K = p.op.K(), P = p.op.P();
    const auto v = voltages(s, ph, K, P, p.op.V_dc);
    const auto c = currents(s, ph, K, P, p.op.V_dc, g_link);
    return {v.v_m / p.lm, v.v_lr / p.lr, -c.i_w[2] / p.c1, (c.i_w[1] - s.i_lr) / p.c2};
}

analytics::CapVoltages<double> averaged_steady_state(const analytics::Params& op) {
    const double K = op.K(), P = op.P(), d = op.d, V = op.V_dc;
    analytics::detail::require_positive_ratios(K, P);
    // Rows: magnetizing and Lr volt-second balance; unknowns (v_c1, v_c2).
    Eigen::Matrix2d A;
    Eigen::Vector2d b;
    A << d / (1 + P), -(1 - d) / (1 + K),
         -(1 - d), d - (1 - d) * (P - K) / (1 + K);
    b << -d * V / (1 + P) - (1 - d) * V / (1 + K),
         -(1 - d) * (P - K) / (1 + K) * V;
    const double det = A.determinant();
    const double scale = A.cwiseAbs().maxCoeff();
    if (!(std::abs(det) > 1e-12 * scale * scale))
        throw DomainError("volt-second system is singular at d=" + std::to_string(d) +
                          " (d_max=" + std::to_string(analytics::duty_feasibility(K, P)) + ")");
    const Eigen::Vector2d x = A.partialPivLu().solve(b);
    return {x(0), x(1)};
}

AveragedPoint averaged_operating_point(const analytics::Params& op, double g) {
    const double K = op.K(), P = op.P(), d = op.d;
    const auto caps = averaged_steady_state(op);
    AveragedPoint a;
    a.v_c1 = caps.V_C1;
    a.v_c2 = caps.V_C2;
    a.v_pn = analytics::link_from_caps(K, P, op.V_dc, a.v_c1, a.v_c2);
    a.g_link = g;
    const double L = g * a.v_pn;
    // Charge balance of C1 and C2; unknowns (i_m, i_lr).
    Eigen::Matrix2d A;
    Eigen::Vector2d b;
    A << d / (1 + P), -(1 - d),
         (1 - d) / (1 + K), -d + (1 - d) * ((1 + P) / (1 + K) - 1);
    b << -(1 - d) * L, (1 - d) * (1 + P) / (1 + K) * L;
    const Eigen::Vector2d x = A.fullPivLu().solve(b);
    a.i_m = x(0);
    a.i_lr = x(1);
    return a;
}

netlist::InitialState initial_state(const AveragedPoint& a, double, double P) {
    netlist::InitialState s;
    s.v_c1 = a.v_c1;
    s.v_c2 = a.v_c2;
    s.v_out = a.v_pn;
    s.i_lr = a.i_lr;
    const double i = a.i_m / (1 + P);
    s.i_w = {i, 0, i};
    return s;
}

Trace simulate_ref(const RefParams& p, const modulation::Modulator& mod, const RefOptions& opts,
                   const RefState& x0, RefState* final_state) {
    const double dt = mod.dt();
    const double K = p.op.K(), P = p.op.P();
    const long n = std::lround(opts.t_end / dt);
    const long first = std::max(0L, static_cast<long>(std::ceil(opts.record_from / dt - 1e-9)));
    const long stride = std::max(1L, opts.stride);
    Trace tr(dt, {"i_m", "i_lr", "v_c1", "v_c2", "v_pn", "v_m", "v_lr", "i_in"});
    if (n > first) tr.reserve(static_cast<std::size_t>((n - first) / stride + 1));

    Eigen::Vector4d x = x0.vec();
    if (!x.allFinite()) throw SimulationError("non-finite initial state", 0);
    for (long k = 0; k < n; ++k) {
        const auto segs = mod.segments(k);
        double s0 = 0;
        for (const auto& seg : segs) {
            const double h = (seg.end - s0) * dt;
            s0 = seg.end;
            const Phase ph = seg.gates.st ? Phase::st : Phase::nst;
            const double gl = p.load.conductance(seg.gates);
            auto f = [&](const Eigen::Vector4d& y) {
                return derivatives(RefState::from(y), ph, p, gl).vec();
            };
            const Eigen::Vector4d k1 = f(x);
            const Eigen::Vector4d k2 = f(x + 0.5 * h * k1);
            const Eigen::Vector4d k3 = f(x + 0.5 * h * k2);
            const Eigen::Vector4d k4 = f(x + h * k3);
            x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        if (!x.allFinite()) throw SimulationError("reference model diverged", (k + 1) * dt);

        const long done = k + 1;
        if (done >= first && (done - first) % stride == 0) {
            const auto& g = segs.last();
            const Phase ph = g.st ? Phase::st : Phase::nst;
            const double gl = p.load.conductance(g);
            const auto s = RefState::from(x);
            const auto v = voltages(s, ph, K, P, p.op.V_dc);
            const auto c = currents(s, ph, K, P, p.op.V_dc, gl);
            const double row[] = {s.i_m, s.i_lr, s.v_c1, s.v_c2, v.v_pn, v.v_m, v.v_lr, c.i_w[0]};
            tr.append(done * dt, row, g.st);
        }
    }
    if (final_state) *final_state = RefState::from(x);
    return tr;
}

// ---------------------------------------------------------------------------
// Topology verification

namespace {

using netlist::Element;
using netlist::Kind;

bool is_bridge(const Element& e) { return e.kind == Kind::S && e.tag_or("gate", "") != "nst"; }
bool is_network_diode(const Element& e) {
    return e.kind == Kind::D || (e.kind == Kind::S && e.tag_or("gate", "") == "nst");
}

struct Network {
    const Element* source{nullptr};
    const Element* w3{nullptr};
    const Element* lr{nullptr};
    const Element* diode{nullptr};
    std::vector<const Element*> caps;
    std::string link;
    std::vector<std::string> nodes;  ///< non-ground nodes used in the solve
};

Network extract(const netlist::Circuit& c) {
    Network net;
    std::set<std::string> bridge_nodes;
    for (const auto& e : c.elements()) {
        if (is_bridge(e)) bridge_nodes.insert(e.nodes.begin(), e.nodes.end());
        if (e.kind == Kind::V) {
            if (net.source) throw StructuralError("more than one V source");
            net.source = &e;
        }
    }
    if (!net.source) throw StructuralError("no V source");
    bridge_nodes.erase("0");

    // Flood from the source through network elements, stopping at the link.
    std::set<std::string> inner{net.source->nodes[0]}, links;
    std::vector<std::string> todo{net.source->nodes[0]};
    auto traversable = [](const Element& e) {
        return e.kind == Kind::W3 || e.kind == Kind::L || e.kind == Kind::C ||
               is_network_diode(e);
    };
    while (!todo.empty()) {
        const std::string n = todo.back();
        todo.pop_back();
        for (const auto& e : c.elements()) {
            if (!traversable(e) || std::find(e.nodes.begin(), e.nodes.end(), n) == e.nodes.end())
                continue;
            // Windings connect only their own terminal pairs.
            for (std::size_t k = 0; k < e.nodes.size(); k += 2) {
                const auto& a = e.nodes[k];
                const auto& b = e.nodes[k + 1];
                if (a != n && b != n) continue;
                const auto& m = a == n ? b : a;
                if (m == "0" || inner.count(m) || links.count(m)) continue;
                if (bridge_nodes.count(m)) {
                    links.insert(m);
                } else {
                    inner.insert(m);
                    todo.push_back(m);
                }
            }
        }
    }
    if (links.size() != 1)
        throw StructuralError("expected one DC-link node reachable from the source, found " +
                              std::to_string(links.size()));
    net.link = *links.begin();

    auto touches_inner = [&](const Element& e) {
        return std::any_of(e.nodes.begin(), e.nodes.end(),
                           [&](const std::string& n) { return inner.count(n) > 0; });
    };
    auto within = [&](const Element& e) {
        return std::all_of(e.nodes.begin(), e.nodes.end(), [&](const std::string& n) {
            return n == "0" || n == net.link || inner.count(n) > 0;
        });
    };
    for (const auto& e : c.elements()) {
        if (&e == net.source) continue;
        const bool storage = e.kind == Kind::C || e.kind == Kind::L;
        if (!touches_inner(e) && !(storage && within(e) && !is_bridge(e))) continue;
        switch (e.kind) {
            case Kind::W3:
                if (net.w3) throw StructuralError("more than one W3 in the network");
                net.w3 = &e;
                break;
            case Kind::L:
                if (net.lr) throw StructuralError("more than one series inductor in the network");
                net.lr = &e;
                break;
            case Kind::C: net.caps.push_back(&e); break;
            case Kind::D:
            case Kind::S:
                if (!is_network_diode(e)) throw StructuralError(e.name + " is a bridge switch");
                if (net.diode) throw StructuralError("more than one network diode");
                net.diode = &e;
                break;
            default:
                throw StructuralError("unexpected " + netlist::to_string(e.kind) + " '" + e.name +
                                      "' in the impedance network");
        }
    }
    if (!net.w3) throw StructuralError("no W3 coupled inductor in the network");
    if (!net.lr) throw StructuralError("no series inductor in the network");
    if (!net.diode) throw StructuralError("no network diode");
    if (net.caps.size() != 2)
        throw StructuralError("expected two network capacitors, found " +
                              std::to_string(net.caps.size()));

    std::set<std::string> all(inner.begin(), inner.end());
    all.insert(net.link);
    for (const Element* e : {net.w3, net.lr, net.diode, net.caps[0], net.caps[1], net.source})
        for (const auto& n : e->nodes)
            if (n != "0") all.insert(n);
    net.nodes.assign(all.begin(), all.end());
    return net;
}

struct Drive {
    std::array<double, 3> n;
    double V_dc, v_c1, v_c2, i_m, i_lr, i_link;
};

struct Solved {
    bool ok{false};
    double v_m{0}, v_lr{0}, v_pn{0};
};

// Ideal network with storage replaced by sources.
Solved solve(const Network& net, const Drive& dr, Phase ph) {
    std::map<std::string, int> idx;
    for (const auto& n : net.nodes) idx.emplace(n, static_cast<int>(idx.size()));
    const int nn = static_cast<int>(idx.size());

    struct VBranch {
        std::string a, b;
        double value;
        int winding;  // -1 for plain sources
    };
    std::vector<VBranch> vb;
    vb.push_back({net.source->nodes[0], net.source->nodes[1], dr.V_dc, -1});
    vb.push_back({net.caps[0]->nodes[0], net.caps[0]->nodes[1], dr.v_c1, -1});
    vb.push_back({net.caps[1]->nodes[0], net.caps[1]->nodes[1], dr.v_c2, -1});
    for (int k = 0; k < 3; ++k)
        vb.push_back({net.w3->nodes[2 * k], net.w3->nodes[2 * k + 1], 0, k});
    if (ph == Phase::nst)
        vb.push_back({net.diode->nodes[0], net.diode->nodes[1], 0, -1});
    else
        vb.push_back({net.link, "0", 0, -1});

    const int nb = static_cast<int>(vb.size());
    const int N = nn + nb + 1;  // + per-turn magnetizing voltage
    const int vm = nn + nb;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, N);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
    auto node = [&](const std::string& n) { return n == "0" ? -1 : idx.at(n); };

    for (int j = 0; j < nb; ++j) {
        const int a = node(vb[j].a), b = node(vb[j].b), col = nn + j;
        if (a >= 0) {
            A(a, col) += 1;
            A(col, a) += 1;
        }
        if (b >= 0) {
            A(b, col) -= 1;
            A(col, b) -= 1;
        }
        if (vb[j].winding >= 0) {
            A(col, vm) = -dr.n[vb[j].winding];
            A(vm, col) = dr.n[vb[j].winding];
        }
        rhs(col) = vb[j].value;
    }
    rhs(vm) = dr.n[0] * dr.i_m;

    auto inject = [&](const std::string& from, const std::string& to, double i) {
        if (const int a = node(from); a >= 0) rhs(a) -= i;
        if (const int b = node(to); b >= 0) rhs(b) += i;
    };
    inject(net.lr->nodes[0], net.lr->nodes[1], dr.i_lr);
    if (ph == Phase::nst) inject(net.link, "0", dr.i_link);

    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    lu.setThreshold(1e-10);
    if (lu.rank() < N) return {};
    const Eigen::VectorXd x = lu.solve(rhs);
    auto v = [&](const std::string& n) { return n == "0" ? 0.0 : x(idx.at(n)); };
    Solved s;
    s.ok = x.allFinite();
    s.v_m = dr.n[0] * x(vm);
    s.v_lr = v(net.lr->nodes[0]) - v(net.lr->nodes[1]);
    s.v_pn = v(net.link);
    return s;
}

double rel(double got, double want, double scale) {
    if (!std::isfinite(got)) return std::numeric_limits<double>::infinity();
    return std::abs(got - want) / std::max({std::abs(want), scale, 1e-300});
}

}  // namespace

bool TopologyReport::pass() const {
    return !relations.empty() &&
           std::all_of(relations.begin(), relations.end(), [](const auto& r) { return r.pass; });
}

TopologyReport verify_topology(const netlist::Circuit& c, int draws, unsigned seed) {
    const Network net = extract(c);
    TopologyReport rep;
    rep.link_node = net.link;
    rep.relations = {{"v_L1 (NST)"}, {"v_Lr (NST)"}, {"V_C1 (steady)"}, {"V_C2 (steady)"},
                     {"V_pn (NST)"}};
    constexpr double inf = std::numeric_limits<double>::infinity();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> turns(0.3, 4.0), unit(0.0, 1.0), vdc(5.0, 500.0),
        sym(-1.0, 1.0);
    for (int t = 0; t < draws; ++t) {
        Drive dr;
        dr.n = {1.0, turns(rng), turns(rng)};
        const double K = dr.n[1], P = dr.n[2];
        const double d = 0.95 * unit(rng) * analytics::duty_feasibility(K, P);
        dr.V_dc = vdc(rng);
        dr.v_c1 = 3 * dr.V_dc * sym(rng);
        dr.v_c2 = 3 * dr.V_dc * sym(rng);
        dr.i_m = 50 * sym(rng);
        dr.i_lr = 50 * sym(rng);
        dr.i_link = 50 * sym(rng);
        const double scale = dr.V_dc;

        const Solved nst = solve(net, dr, Phase::nst);
        const auto want = voltages({dr.i_m, dr.i_lr, dr.v_c1, dr.v_c2}, Phase::nst, K, P, dr.V_dc);
        auto& r = rep.relations;
        r[0].worst = std::max(r[0].worst, nst.ok ? rel(nst.v_m, want.v_m, scale) : inf);
        r[1].worst = std::max(r[1].worst, nst.ok ? rel(nst.v_lr, want.v_lr, scale) : inf);
        r[4].worst = std::max(r[4].worst, nst.ok ? rel(nst.v_pn, want.v_pn, scale) : inf);

        // Steady capacitor voltages: both phases are affine in (v_c1, v_c2);
        // recover the coefficients and impose volt-second balance.
        Eigen::Matrix2d A;
        Eigen::Vector2d b;
        bool ok = true;
        auto eval = [&](double c1, double c2, Phase ph) {
            Drive x = dr;
            x.v_c1 = c1;
            x.v_c2 = c2;
            const auto s = solve(net, x, ph);
            ok = ok && s.ok;
            return Eigen::Vector2d(s.v_m, s.v_lr);
        };
        const Eigen::Vector2d f0 = d * eval(0, 0, Phase::st) + (1 - d) * eval(0, 0, Phase::nst);
        const Eigen::Vector2d f1 = d * eval(1, 0, Phase::st) + (1 - d) * eval(1, 0, Phase::nst);
        const Eigen::Vector2d f2 = d * eval(0, 1, Phase::st) + (1 - d) * eval(0, 1, Phase::nst);
        A.col(0) = f1 - f0;
        A.col(1) = f2 - f0;
        b = -f0;
        double e1 = inf, e2 = inf;
        if (ok && std::abs(A.determinant()) > 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff())) {
            const Eigen::Vector2d x = A.partialPivLu().solve(b);
            const auto caps = analytics::cap_voltages(K, P, d, dr.V_dc);
            e1 = rel(x(0), caps.V_C1, scale);
            e2 = rel(x(1), caps.V_C2, scale);
        }
        r[2].worst = std::max(r[2].worst, e1);
        r[3].worst = std::max(r[3].worst, e2);
        ++rep.draws;
    }
    for (auto& r : rep.relations) r.pass = r.worst <= 1e-6;
    return rep;
}

}  // namespace zsource::refmodel
