#include "zsource/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "zsource/errors.hpp"

namespace zsource::engine {

using netlist::Kind;
using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

namespace {

enum class Method { trapezoidal, backward_euler };

struct Res {
    std::string name;
    int a, b;
    double G;
};

struct VSrc {
    std::string name;
    int a, b, branch;
    double dc, ac, w, phase;
    double V{0};  // value at the end of the current step

    double at(double t) const { return ac == 0 ? dc : dc + ac * std::sin(w * t + phase); }
};

struct Cap {
    std::string name;
    int a, b;
    double C, esr;
    double v{0}, i{0};
    double G_tr{0}, G_be{0};
};

struct Ind {
    std::string name;
    int a, b;
    double L, R;
    double i{0}, u{0}, i_prev{0};
    double G_tr{0}, G_be{0};
};

struct Wind {
    std::string name;
    int a[3], b[3];
    Vector3d n;
    double Lm;
    Matrix3d L;
    Vector3d R;
    Vector3d i{Vector3d::Zero()}, u{Vector3d::Zero()}, i_prev{Vector3d::Zero()};
    int branch{0};  // first of three winding-current unknowns
    Matrix3d Z_tr, Z_be, A_tr, A_be;
};

struct Dev {
    std::string name;
    int a, b;
    double ron, roff, vf;
    bool diode;
    std::string gate;
};

struct Mach {
    std::string name;
    int node[3];
    loads::IMParams p;
    loads::IMState s;
    double t_load{0};
    bool locked{false};
    std::array<double, 3> i{0, 0, 0};
    std::array<double, 3> v{0, 0, 0};
};

// Probe targets by element name.
struct Ref {
    enum class T { res, vsrc, cap, ind, wind, dev, mach, load3 } t;
    int idx;
    std::vector<std::pair<T, int>> phases;  // expanded r/rl loads
    int node[3]{-1, -1, -1};
};

double get(const VectorXd& x, int n) { return n < 0 ? 0.0 : x[n]; }

}  // namespace

struct Simulator::Impl {
    double h;   // current (sub)step
    double h0;  // nominal step
    std::vector<std::string> node_names;  // unknown index -> node name
    int n_nodes{0};
    int n_unknowns{0};

    std::vector<Res> res;
    std::vector<VSrc> vs;
    std::vector<Cap> caps;
    std::vector<Ind> inds;
    std::vector<Wind> winds;
    std::vector<Dev> devs;  // switches and diodes in circuit order
    std::vector<int> switch_idx, diode_idx;
    std::vector<int> diode_order;  // diode_idx positions sorted by name
    std::vector<Mach> machs;
    std::map<std::string, Ref> refs;
    std::vector<Ref> load3s;

    SimState initial;
    SwitchConfiguration cfg;
    bool have_cfg{false};
    bool need_be{true};
    bool switched{false};
    bool st{false};
    double t{0};
    long k{0};
    VectorXd x;    // last solution
    VectorXd rhs;  // scratch

    std::unordered_map<std::uint64_t, Eigen::PartialPivLU<MatrixXd>> cache;
    Eigen::PartialPivLU<MatrixXd> scratch;  // off-grid sub-steps are not cached

    bool audit_on{false};
    AuditStats audit;
    double last_src{0}, last_diss{0}, last_load{0};

    int node_index(const std::string& n) const {
        if (n == "0") return -1;
        const auto it = std::lower_bound(node_names.begin(), node_names.begin() + n_nodes, n);
        if (it == node_names.begin() + n_nodes || *it != n)
            throw ConfigError("unknown node '" + n + "'");
        return static_cast<int>(it - node_names.begin());
    }

    void compile(const netlist::Circuit& c) {
        std::set<std::string> names;
        for (const auto& e : c.elements())
            for (const auto& n : e.nodes)
                if (n != "0") names.insert(n);
        // Internal nodes of expanded three-phase loads.
        for (const auto& e : c.elements()) {
            if (e.kind != Kind::LOAD3) continue;
            const auto model = e.tag_or("model", "im");
            if (model == "im") continue;
            names.insert(e.name + ".n");
            if (model == "rl")
                for (int k = 0; k < 3; ++k) names.insert(e.name + ".m" + std::to_string(k + 1));
        }
        node_names.assign(names.begin(), names.end());
        n_nodes = static_cast<int>(node_names.size());
        int branch = n_nodes;

        for (const auto& e : c.elements()) {
            auto nd = [&](std::size_t i) { return node_index(e.nodes[i]); };
            switch (e.kind) {
                case Kind::R:
                    refs[e.name] = {Ref::T::res, static_cast<int>(res.size()), {}};
                    res.push_back({e.name, nd(0), nd(1), 1.0 / e.value("r")});
                    break;
                case Kind::V:
                    refs[e.name] = {Ref::T::vsrc, static_cast<int>(vs.size()), {}};
                    vs.push_back({e.name, nd(0), nd(1), branch++, e.value("dc"),
                                  e.value_or("ac", 0.0), 6.283185307179586 * e.value_or("freq", 0.0),
                                  e.value_or("phase", 0.0)});
                    vs.back().V = vs.back().at(0.0);
                    break;
                case Kind::C: {
                    refs[e.name] = {Ref::T::cap, static_cast<int>(caps.size()), {}};
                    Cap cp{e.name, nd(0), nd(1), e.value("c"), e.value_or("esr", 0.0)};
                    cp.v = e.value_or("v0", 0.0);
                    caps.push_back(cp);
                    break;
                }
                case Kind::L: {
                    refs[e.name] = {Ref::T::ind, static_cast<int>(inds.size()), {}};
                    Ind l{e.name, nd(0), nd(1), e.value("l"), e.value_or("r", 0.0)};
                    l.i = e.value_or("i0", 0.0);
                    inds.push_back(l);
                    break;
                }
                case Kind::W3: {
                    refs[e.name] = {Ref::T::wind, static_cast<int>(winds.size()), {}};
                    Wind w;
                    w.name = e.name;
                    const auto t = e.turns();
                    w.n = Vector3d(1.0, t[1] / t[0], t[2] / t[0]);
                    w.Lm = e.value("lm");
                    Vector3d ll;
                    for (int k = 0; k < 3; ++k) {
                        w.a[k] = nd(2 * k);
                        w.b[k] = nd(2 * k + 1);
                        const auto s = std::to_string(k + 1);
                        ll[k] = std::max(e.value_or("ll" + s, 0.0), leakage_floor);
                        w.R[k] = e.value_or("r" + s, 0.0);
                        w.i[k] = e.value_or("i" + s, 0.0);
                    }
                    w.L = Matrix3d(ll.asDiagonal()) + w.Lm * w.n * w.n.transpose();
                    w.branch = branch;
                    branch += 3;
                    winds.push_back(w);
                    break;
                }
                case Kind::S:
                case Kind::D: {
                    const bool diode = e.kind == Kind::D;
                    refs[e.name] = {Ref::T::dev, static_cast<int>(devs.size()), {}};
                    (diode ? diode_idx : switch_idx).push_back(static_cast<int>(devs.size()));
                    devs.push_back({e.name, nd(0), nd(1), e.value_or("ron", 1e-3),
                                    e.value_or("roff", 1e6), diode ? e.value_or("vf", 0.0) : 0.0,
                                    diode, e.tag_or("gate", "")});
                    break;
                }
                case Kind::LOAD3: {
                    const auto model = e.tag_or("model", "im");
                    if (model == "im") {
                        refs[e.name] = {Ref::T::mach, static_cast<int>(machs.size()), {}};
                        Mach m;
                        m.name = e.name;
                        for (int k = 0; k < 3; ++k) m.node[k] = nd(k);
                        auto& p = m.p;
                        p.Rs = e.value_or("rs", p.Rs);
                        p.Rr = e.value_or("rr", p.Rr);
                        p.Lls = e.value_or("lls", p.Lls);
                        p.Llr = e.value_or("llr", p.Llr);
                        p.Lm = e.value_or("lm", p.Lm);
                        p.J = e.value_or("j", p.J);
                        p.pole_pairs = static_cast<int>(std::lround(e.value_or("pp", p.pole_pairs)));
                        p.validate();
                        m.t_load = e.value_or("tload", 0.0);
                        m.locked = e.has("rpm");
                        m.s = loads::IMState::at_rpm(
                            m.locked ? e.value("rpm") : e.value_or("rpm0", 0.0), p);
                        machs.push_back(m);
                    } else {
                        Ref r{Ref::T::load3, static_cast<int>(load3s.size()), {}};
                        for (int k = 0; k < 3; ++k) r.node[k] = nd(k);
                        const int neutral = node_index(e.name + ".n");
                        const double R = e.value("r");
                        for (int k = 0; k < 3; ++k) {
                            const auto ph = std::to_string(k + 1);
                            if (model == "r") {
                                r.phases.push_back({Ref::T::res, static_cast<int>(res.size())});
                                res.push_back({e.name + ":" + ph, nd(k), neutral, 1.0 / R});
                            } else {
                                const int mid = node_index(e.name + ".m" + ph);
                                res.push_back({e.name + ":r" + ph, nd(k), mid, 1.0 / R});
                                r.phases.push_back({Ref::T::ind, static_cast<int>(inds.size())});
                                Ind l{e.name + ":" + ph, mid, neutral, e.value("l"), 0.0};
                                inds.push_back(l);
                            }
                        }
                        refs[e.name] = r;
                        load3s.push_back(r);
                    }
                    break;
                }
            }
        }
        n_unknowns = branch;
        node_names.resize(n_unknowns);
        for (const auto& v : vs) node_names[v.branch] = "i(" + v.name + ")";
        for (const auto& w : winds)
            for (int k = 0; k < 3; ++k)
                node_names[w.branch + k] = "i(" + w.name + ":" + std::to_string(k + 1) + ")";
        if (devs.size() > 62) throw ConfigError("at most 62 switches and diodes are supported");

        diode_order.resize(diode_idx.size());
        for (std::size_t i = 0; i < diode_order.size(); ++i) diode_order[i] = static_cast<int>(i);
        std::sort(diode_order.begin(), diode_order.end(), [&](int l, int r) {
            return devs[diode_idx[l]].name < devs[diode_idx[r]].name;
        });

        companions(h);
        cfg.switch_on.assign(switch_idx.size(), false);
        cfg.diode_on.assign(diode_idx.size(), false);
        x = VectorXd::Zero(n_unknowns);
        rhs = VectorXd::Zero(n_unknowns);
    }

    void companions(double step) {
        h = step;
        for (auto& cp : caps) {
            cp.G_tr = 1.0 / (cp.esr + h / (2 * cp.C));
            cp.G_be = 1.0 / (cp.esr + h / cp.C);
        }
        for (auto& l : inds) {
            l.G_tr = 1.0 / (2 * l.L / h + l.R);
            l.G_be = 1.0 / (l.L / h + l.R);
        }
        for (auto& w : winds) {
            const Matrix3d R = w.R.asDiagonal();
            w.Z_tr = 2 * w.L / h + R;
            w.Z_be = w.L / h + R;
            w.A_tr = 2 * w.L / h - R;
            w.A_be = w.L / h;
        }
    }

    std::uint64_t key(const SwitchConfiguration& c, Method m) const {
        std::uint64_t k = m == Method::backward_euler ? 1 : 0;
        int bit = 1;
        for (bool b : c.switch_on) k |= std::uint64_t(b) << bit++;
        for (bool b : c.diode_on) k |= std::uint64_t(b) << bit++;
        return k;
    }

    bool device_on(const SwitchConfiguration& c, int dev) const {
        for (std::size_t i = 0; i < switch_idx.size(); ++i)
            if (switch_idx[i] == dev) return c.switch_on[i];
        for (std::size_t i = 0; i < diode_idx.size(); ++i)
            if (diode_idx[i] == dev) return c.diode_on[i];
        return false;
    }

    static void stamp_g(MatrixXd& G, int a, int b, double g) {
        if (a >= 0) G(a, a) += g;
        if (b >= 0) G(b, b) += g;
        if (a >= 0 && b >= 0) {
            G(a, b) -= g;
            G(b, a) -= g;
        }
    }

    MatrixXd matrix(const SwitchConfiguration& c, Method m) const {
        MatrixXd G = MatrixXd::Zero(n_unknowns, n_unknowns);
        const bool tr = m == Method::trapezoidal;
        for (const auto& r : res) stamp_g(G, r.a, r.b, r.G);
        for (const auto& v : vs) {
            if (v.a >= 0) G(v.a, v.branch) += 1, G(v.branch, v.a) += 1;
            if (v.b >= 0) G(v.b, v.branch) -= 1, G(v.branch, v.b) -= 1;
        }
        for (const auto& cp : caps) stamp_g(G, cp.a, cp.b, tr ? cp.G_tr : cp.G_be);
        for (const auto& l : inds) stamp_g(G, l.a, l.b, tr ? l.G_tr : l.G_be);
        for (const auto& w : winds) {
            // Winding currents are unknowns: u_k - sum_j Z(k,j) i_j = -history_k.
            // Inverting the nearly rank-one inductance matrix instead would
            // lose most significant digits when leakage is small.
            const Matrix3d& Z = tr ? w.Z_tr : w.Z_be;
            for (int k = 0; k < 3; ++k) {
                const int jk = w.branch + k;
                if (w.a[k] >= 0) G(w.a[k], jk) += 1, G(jk, w.a[k]) += 1;
                if (w.b[k] >= 0) G(w.b[k], jk) -= 1, G(jk, w.b[k]) -= 1;
                for (int j = 0; j < 3; ++j) G(jk, w.branch + j) -= Z(k, j);
            }
        }
        for (std::size_t d = 0; d < devs.size(); ++d) {
            const auto& dv = devs[d];
            stamp_g(G, dv.a, dv.b, device_on(c, static_cast<int>(d)) ? 1.0 / dv.ron : 1.0 / dv.roff);
        }
        return G;
    }

    const Eigen::PartialPivLU<MatrixXd>& factor(const SwitchConfiguration& c, Method m) {
        const bool on_grid = h == h0;
        const auto kk = key(c, m);
        if (on_grid) {
            auto it = cache.find(kk);
            if (it != cache.end()) return it->second;
        }
        Eigen::PartialPivLU<MatrixXd> lu(matrix(c, m));
        const MatrixXd& U = lu.matrixLU();
        const double scale = U.diagonal().cwiseAbs().maxCoeff();
        for (int i = 0; i < n_unknowns; ++i)
            if (!(std::abs(U(i, i)) > 1e-13 * scale))
                throw SimulationError("singular system at unknown '" + node_names[i] + "'", t);
        if (!on_grid) {
            scratch = std::move(lu);
            return scratch;
        }
        return cache.emplace(kk, std::move(lu)).first->second;
    }

    // History and source terms; diode offsets are added per configuration.
    void base_rhs(Method m) {
        rhs.setZero();
        const bool tr = m == Method::trapezoidal;
        auto inject = [&](int a, int b, double cur) {  // current source a -> b through element
            if (a >= 0) rhs[a] -= cur;
            if (b >= 0) rhs[b] += cur;
        };
        for (const auto& v : vs) rhs[v.branch] = v.V;
        for (const auto& cp : caps) {
            const double Ieq = tr ? cp.G_tr * (cp.v + h * cp.i / (2 * cp.C)) : cp.G_be * cp.v;
            inject(cp.a, cp.b, -Ieq);
        }
        for (const auto& l : inds) {
            const double hist = tr ? l.G_tr * ((2 * l.L / h - l.R) * l.i + l.u)
                                   : l.G_be * (l.L / h) * l.i;
            inject(l.a, l.b, hist);
        }
        for (const auto& w : winds) {
            const Vector3d hist = tr ? Vector3d(w.A_tr * w.i + w.u) : Vector3d(w.A_be * w.i);
            for (int k = 0; k < 3; ++k) rhs[w.branch + k] = -hist[k];
        }
        for (const auto& m : machs)
            for (int k = 0; k < 3; ++k) inject(m.node[k], -1, m.i[k]);
    }

    void solve(const SwitchConfiguration& c, Method m, const VectorXd& base) {
        rhs = base;
        for (std::size_t i = 0; i < diode_idx.size(); ++i) {
            const auto& dv = devs[diode_idx[i]];
            if (!c.diode_on[i] || dv.vf == 0) continue;
            const double I = dv.vf / dv.ron;
            if (dv.a >= 0) rhs[dv.a] += I;
            if (dv.b >= 0) rhs[dv.b] -= I;
        }
        x = factor(c, m).solve(rhs);
    }

    double dev_voltage(const Dev& d) const { return get(x, d.a) - get(x, d.b); }

    double dev_current(const Dev& d, bool on) const {
        const double u = dev_voltage(d);
        return on ? (u - d.vf) / d.ron : u / d.roff;
    }

    // Index (into diode_idx) of the most violated diode, or -1.
    int most_violated(const SwitchConfiguration& c) const {
        constexpr double tol = 1e-9;
        int worst = -1;
        double worst_v = 0;
        for (int pos : diode_order) {
            const auto& dv = devs[diode_idx[pos]];
            double viol;
            if (c.diode_on[pos]) {
                // Reverse current expressed as a voltage across sqrt(Ron*Roff).
                const double i = dev_current(dv, true);
                viol = i < -tol ? -i * std::sqrt(dv.ron * dv.roff) : 0.0;
            } else {
                const double u = dev_voltage(dv);
                viol = u > dv.vf + tol ? u - dv.vf : 0.0;
            }
            if (viol > worst_v) {
                worst_v = viol;
                worst = pos;
            }
        }
        return worst;
    }

    SwitchConfiguration fixpoint(SwitchConfiguration c, Method m) {
        base_rhs(m);
        const VectorXd base = rhs;
        const std::size_t limit = 2 * diode_idx.size() + 2;
        for (std::size_t it = 0; it <= limit; ++it) {
            solve(c, m, base);
            const int v = most_violated(c);
            if (v < 0) return c;
            c.diode_on[v] = !c.diode_on[v];
        }
        throw SimulationError("diode states did not settle within " + std::to_string(limit) +
                                  " flips",
                              t);
    }

    void accept(Method m) {
        const bool tr = m == Method::trapezoidal;
        for (auto& cp : caps) {
            const double u = get(x, cp.a) - get(x, cp.b);
            if (tr) {
                const double inew = cp.G_tr * (u - cp.v - h * cp.i / (2 * cp.C));
                cp.v += h / (2 * cp.C) * (cp.i + inew);
                cp.i = inew;
            } else {
                cp.i = cp.G_be * (u - cp.v);
                cp.v += h / cp.C * cp.i;
            }
        }
        for (auto& l : inds) {
            const double u = get(x, l.a) - get(x, l.b);
            const double hist = tr ? l.G_tr * ((2 * l.L / h - l.R) * l.i + l.u)
                                   : l.G_be * (l.L / h) * l.i;
            l.i = (tr ? l.G_tr : l.G_be) * u + hist;
            l.u = u;
        }
        for (auto& w : winds) {
            for (int k = 0; k < 3; ++k) {
                w.u[k] = get(x, w.a[k]) - get(x, w.b[k]);
                w.i[k] = x[w.branch + k];
            }
        }
        for (auto& mc : machs) {
            for (int k = 0; k < 3; ++k) mc.v[k] = get(x, mc.node[k]);
            const auto r = mc.locked ? loads::im_step_locked(mc.s, mc.v, h, mc.p)
                                     : loads::im_step(mc.s, mc.v, mc.t_load, h, mc.p);
            mc.s = r.state;
            mc.i = r.i_abc;
        }
    }

    double source_power() const {
        double p = 0;
        for (const auto& v : vs) p += -x[v.branch] * v.V;
        return p;
    }

    double dissipated_power() const {
        double p = 0;
        for (const auto& r : res) {
            const double u = get(x, r.a) - get(x, r.b);
            p += r.G * u * u;
        }
        for (const auto& cp : caps) p += cp.esr * cp.i * cp.i;
        for (const auto& l : inds) p += l.R * l.i * l.i;
        for (const auto& w : winds) p += w.R.dot(w.i.cwiseProduct(w.i));
        for (std::size_t d = 0; d < devs.size(); ++d) {
            const auto& dv = devs[d];
            const bool on = device_on(cfg, static_cast<int>(d));
            p += dev_voltage(dv) * dev_current(dv, on);
        }
        return p;
    }

    double load_power() const {
        double p = 0;
        for (const auto& m : machs)
            for (int k = 0; k < 3; ++k) p += get(x, m.node[k]) * m.i[k];
        return p;
    }

    double stored() const {
        double e = 0;
        for (const auto& cp : caps) e += 0.5 * cp.C * cp.v * cp.v;
        for (const auto& l : inds) e += 0.5 * l.L * l.i * l.i;
        for (const auto& w : winds) e += 0.5 * w.i.dot(w.L * w.i);
        return e;
    }

    void step(const modulation::StepGates& sg) {
        // Slivers below 1e-6 of a step go to the neighbouring segment; an
        // L/h companion that stiff only produces a numerical voltage spike.
        constexpr double sliver = 1e-6;
        modulation::StepGates run;
        double s0 = 0;
        for (const auto& seg : sg) {
            if (run.count > 0 && seg.end - s0 < sliver) {
                run.seg[run.count - 1].end = seg.end;
            } else if (run.count == 1 && run.seg[0].end < sliver) {
                run.seg[0] = seg;  // leading sliver takes the next gates
            } else {
                run.seg[run.count++] = seg;
            }
            s0 = seg.end;
        }
        for (auto& l : inds) l.i_prev = l.i;
        for (auto& w : winds) w.i_prev = w.i;
        s0 = 0;
        for (const auto& seg : run) {
            const double hs = (seg.end - s0) * h0;
            if (hs != h) companions(hs);
            substep(seg.gates, (static_cast<double>(k) + seg.end) * h0);
            s0 = seg.end;
        }
        if (h != h0) companions(h0);
        t = static_cast<double>(++k) * h0;
    }

    void substep(const modulation::GateSet& g, double t_new) {
        for (auto& v : vs) v.V = v.at(t_new);
        SwitchConfiguration c = cfg;
        for (std::size_t i = 0; i < switch_idx.size(); ++i)
            c.switch_on[i] = g.channel(devs[switch_idx[i]].gate);
        st = g.st;

        Method m = need_be ? Method::backward_euler : Method::trapezoidal;
        c = fixpoint(c, m);
        const bool changed = !have_cfg || !(c == cfg);
        if (changed && m == Method::trapezoidal) {
            m = Method::backward_euler;
            c = fixpoint(c, m);
        }
        const double e0 = audit_on ? stored() : 0.0;
        cfg = c;
        have_cfg = true;
        switched = changed;
        accept(m);
        need_be = false;
        t = t_new;

        if (audit_on) {
            const double ps = source_power(), pd = dissipated_power(), pl = load_power();
            const double e1 = stored();
            if (audit.steps == 0) audit.stored_start = e0;
            audit.source_energy += h * ps;
            audit.dissipated += h * pd;
            audit.load_energy += h * pl;
            audit.stored_end = e1;
            if (m == Method::trapezoidal && audit.steps > 0) {
                const double resid =
                    0.5 * (ps + last_src) - 0.5 * (pd + last_diss) - 0.5 * (pl + last_load) -
                    (e1 - e0) / h;
                // Normalised by the largest power flow of the step, so that
                // intervals with the source nearly idle do not divide by ~0.
                const double scale = std::max({std::abs(ps), std::abs(last_src), std::abs(pd),
                                               std::abs(last_diss), std::abs(e1 - e0) / h});
                if (scale > 0)
                    audit.max_relative = std::max(audit.max_relative, std::abs(resid) / scale);
            }
            last_src = ps;
            last_diss = pd;
            last_load = pl;
            ++audit.steps;
        }
    }

    int state_size() const {
        return static_cast<int>(caps.size() + inds.size() + 3 * winds.size() + 5 * machs.size());
    }
};

Simulator::Simulator(const netlist::Circuit& c, double dt) : impl_(std::make_unique<Impl>()) {
    if (!(dt > 0)) throw ConfigError("time step must be positive");
    impl_->h = impl_->h0 = dt;
    impl_->compile(c);
    impl_->initial = state();
    set_state(impl_->initial);
}

Simulator::~Simulator() = default;
Simulator::Simulator(Simulator&&) noexcept = default;
Simulator& Simulator::operator=(Simulator&&) noexcept = default;

double Simulator::dt() const noexcept { return impl_->h0; }
double Simulator::time() const noexcept { return impl_->t; }
long Simulator::step_index() const noexcept { return impl_->k; }

SimState Simulator::state() const {
    const auto& m = *impl_;
    SimState s;
    s.t = m.t;
    s.step = m.k;
    s.x.resize(m.state_size());
    int o = 0;
    for (const auto& c : m.caps) s.x[o++] = c.v;
    for (const auto& l : m.inds) s.x[o++] = l.i;
    for (const auto& w : m.winds)
        for (int k = 0; k < 3; ++k) s.x[o++] = w.i[k];
    for (const auto& mc : m.machs) {
        for (int k = 0; k < 4; ++k) s.x[o++] = mc.s.psi[k];
        s.x[o++] = mc.s.omega_r;
    }
    return s;
}

SimState Simulator::initial_state() const { return impl_->initial; }

void Simulator::set_state(const SimState& s) {
    auto& m = *impl_;
    if (s.x.size() != m.state_size()) throw ConfigError("state vector has the wrong size");
    int o = 0;
    for (auto& c : m.caps) {
        c.v = s.x[o++];
        c.i = 0;
    }
    for (auto& l : m.inds) {
        l.i = l.i_prev = s.x[o++];
        l.u = 0;
    }
    for (auto& w : m.winds) {
        for (int k = 0; k < 3; ++k) w.i[k] = s.x[o++];
        w.i_prev = w.i;
        w.u.setZero();
    }
    for (auto& mc : m.machs) {
        for (int k = 0; k < 4; ++k) mc.s.psi[k] = s.x[o++];
        mc.s.omega_r = s.x[o++];
        mc.i = loads::stator_currents_abc(mc.s, mc.p);
    }
    m.t = s.t;
    for (auto& v : m.vs) v.V = v.at(s.t);
    m.k = s.step;
    m.need_be = true;
    m.have_cfg = false;
}

std::vector<std::string> Simulator::state_names() const {
    const auto& m = *impl_;
    std::vector<std::string> out;
    for (const auto& c : m.caps) out.push_back("v(" + c.name + ")");
    for (const auto& l : m.inds) out.push_back("i(" + l.name + ")");
    for (const auto& w : m.winds)
        for (int k = 1; k <= 3; ++k) out.push_back("i(" + w.name + ":" + std::to_string(k) + ")");
    for (const auto& mc : m.machs) {
        for (const char* s : {"psa", "psb", "pra", "prb"}) out.push_back(mc.name + "." + s);
        out.push_back(mc.name + ".omega_r");
    }
    return out;
}

void Simulator::step(const modulation::GateSet& gates) {
    modulation::StepGates sg;
    sg.count = 1;
    sg.seg[0].gates = gates;
    impl_->step(sg);
}

void Simulator::step(const modulation::StepGates& gates) { impl_->step(gates); }

Probe Simulator::probe(const std::string& expr) const {
    const auto& m = *impl_;
    Probe p;
    p.text = expr;
    if (expr == "estore") {
        p.kind = Probe::Kind::stored_energy;
        return p;
    }
    const auto open = expr.find('(');
    if (open == std::string::npos || expr.back() != ')')
        throw ConfigError("malformed probe '" + expr + "'");
    const auto fn = expr.substr(0, open);
    const auto arg = expr.substr(open + 1, expr.size() - open - 2);

    if (fn == "v") {
        p.kind = Probe::Kind::node_voltage;
        const auto comma = arg.find(',');
        p.a = m.node_index(arg.substr(0, comma));
        p.b = comma == std::string::npos ? -1 : m.node_index(arg.substr(comma + 1));
        return p;
    }
    std::string name = arg;
    const auto colon = arg.find(':');
    if (colon != std::string::npos) {
        name = arg.substr(0, colon);
        p.sub = std::stoi(arg.substr(colon + 1));
    }
    const auto it = m.refs.find(name);
    if (it == m.refs.end()) throw ConfigError("probe '" + expr + "' names no element");
    const auto& ref = it->second;
    p.element = ref.idx;
    auto need = [&](bool ok) {
        if (!ok) throw ConfigError("probe '" + expr + "' does not apply to this element");
    };
    if (fn == "i") {
        p.kind = Probe::Kind::current;
        const bool multi = ref.t == Ref::T::wind || ref.t == Ref::T::mach || ref.t == Ref::T::load3;
        need(multi ? p.sub >= 1 && p.sub <= 3 : p.sub == 0);
        if (ref.t == Ref::T::load3) {
            const auto [pt, idx] = ref.phases[p.sub - 1];
            p.a = static_cast<int>(pt);
            p.element = idx;
            p.sub = 0;
            return p;
        }
    } else if (fn == "im" || fn == "vm") {
        need(ref.t == Ref::T::wind && p.sub == 0);
        p.kind = fn == "im" ? Probe::Kind::magnetizing_current : Probe::Kind::magnetizing_voltage;
    } else if (fn == "vl") {
        need(ref.t == Ref::T::ind && p.sub == 0);
        p.kind = Probe::Kind::inductive_voltage;
    } else if (fn == "p") {
        need(p.sub == 0);
        p.kind = Probe::Kind::power;
    } else if (fn == "torque" || fn == "rpm") {
        need(ref.t == Ref::T::mach);
        p.kind = fn == "torque" ? Probe::Kind::torque : Probe::Kind::rpm;
    } else {
        throw ConfigError("unknown probe function '" + fn + "'");
    }
    p.a = static_cast<int>(ref.t);
    return p;
}

double Simulator::read(const Probe& p) const {
    const auto& m = *impl_;
    if (p.kind == Probe::Kind::node_voltage) return get(m.x, p.a) - get(m.x, p.b);
    if (p.kind == Probe::Kind::stored_energy) return m.stored();
    const auto t = static_cast<Ref::T>(p.a);
    const int e = p.element;
    auto two_terminal = [&](int a, int b) { return get(m.x, a) - get(m.x, b); };

    switch (p.kind) {
        case Probe::Kind::current:
        case Probe::Kind::power: {
            double u = 0, i = 0;
            switch (t) {
                case Ref::T::res:
                    u = two_terminal(m.res[e].a, m.res[e].b);
                    i = m.res[e].G * u;
                    break;
                case Ref::T::vsrc:
                    u = m.vs[e].V;
                    i = -m.x[m.vs[e].branch];
                    break;
                case Ref::T::cap:
                    u = two_terminal(m.caps[e].a, m.caps[e].b);
                    i = m.caps[e].i;
                    break;
                case Ref::T::ind:
                    u = m.inds[e].u;
                    i = m.inds[e].i;
                    break;
                case Ref::T::dev: {
                    const auto& dv = m.devs[e];
                    u = m.dev_voltage(dv);
                    i = m.dev_current(dv, m.device_on(m.cfg, e));
                    break;
                }
                case Ref::T::wind:
                    if (p.kind == Probe::Kind::current) return m.winds[e].i[p.sub - 1];
                    return m.winds[e].u.dot(m.winds[e].i);
                case Ref::T::mach: {
                    const auto& mc = m.machs[e];
                    if (p.kind == Probe::Kind::current) return mc.i[p.sub - 1];
                    double pw = 0;
                    for (int k = 0; k < 3; ++k) pw += get(m.x, mc.node[k]) * mc.i[k];
                    return pw;
                }
                case Ref::T::load3: {
                    if (p.kind == Probe::Kind::current) return 0.0;
                    const auto& r = m.load3s[e];
                    double pw = 0;
                    for (int k = 0; k < 3; ++k) {
                        const auto [pt, idx] = r.phases[k];
                        const double ik = pt == Ref::T::res
                                              ? m.res[idx].G * two_terminal(m.res[idx].a, m.res[idx].b)
                                              : m.inds[idx].i;
                        pw += get(m.x, r.node[k]) * ik;
                    }
                    return pw;
                }
            }
            return p.kind == Probe::Kind::current ? i : u * i;
        }
        case Probe::Kind::magnetizing_current:
            return m.winds[e].n.dot(m.winds[e].i);
        case Probe::Kind::magnetizing_voltage: {
            const auto& w = m.winds[e];
            return w.Lm * w.n.dot(w.i - w.i_prev) / m.h0;
        }
        case Probe::Kind::inductive_voltage: {
            const auto& l = m.inds[e];
            return l.L * (l.i - l.i_prev) / m.h0;
        }
        case Probe::Kind::torque:
            return loads::torque(m.machs[e].s, m.machs[e].p);
        case Probe::Kind::rpm:
            return m.machs[e].s.rpm(m.machs[e].p);
        default:
            return 0.0;
    }
}

double Simulator::stored_energy() const { return impl_->stored(); }
double Simulator::source_power() const { return impl_->source_power(); }
const SwitchConfiguration& Simulator::configuration() const { return impl_->cfg; }
bool Simulator::switched() const noexcept { return impl_->switched; }
bool Simulator::st() const noexcept { return impl_->st; }

void Simulator::enable_audit(bool on) {
    impl_->audit_on = on;
    impl_->audit = AuditStats{};
}

const AuditStats& Simulator::audit() const { return impl_->audit; }

std::size_t Simulator::cached_factorizations() const { return impl_->cache.size(); }

std::pair<MatrixXd, VectorXd> Simulator::assemble(const SwitchConfiguration& sw) const {
    auto& m = *impl_;
    if (sw.switch_on.size() != m.switch_idx.size() || sw.diode_on.size() != m.diode_idx.size())
        throw ConfigError("configuration does not match the circuit");
    m.base_rhs(Method::trapezoidal);
    VectorXd b = m.rhs;
    for (std::size_t i = 0; i < m.diode_idx.size(); ++i) {
        const auto& dv = m.devs[m.diode_idx[i]];
        if (!sw.diode_on[i] || dv.vf == 0) continue;
        if (dv.a >= 0) b[dv.a] += dv.vf / dv.ron;
        if (dv.b >= 0) b[dv.b] -= dv.vf / dv.ron;
    }
    return {m.matrix(sw, Method::trapezoidal), b};
}

std::vector<std::string> Simulator::unknown_names() const { return impl_->node_names; }

SimResult simulate(const netlist::Circuit& c, const modulation::Modulator& mod,
                   const SimOptions& opts, const Observer& observer, const SimState* start) {
    if (opts.stride < 1) throw ConfigError("stride must be at least 1");
    Simulator sim(c, mod.dt());
    if (start) sim.set_state(*start);
    sim.enable_audit(opts.audit);

    std::vector<Probe> probes;
    for (const auto& p : opts.probes) probes.push_back(sim.probe(p));
    SimResult out;
    out.trace = Trace(mod.dt() * static_cast<double>(opts.stride), opts.probes);

    const long steps = std::lround((opts.t_end - sim.time()) / mod.dt());
    const long first_recorded = std::lround(opts.record_from / mod.dt());
    std::vector<double> row(probes.size());
    const long k0 = sim.step_index();
    for (long n = 0; n < steps; ++n) {
        sim.step(mod.segments(k0 + n));
        const long k = sim.step_index();
        if (observer) observer(sim);
        if (k > first_recorded && (k - first_recorded - 1) % opts.stride == 0) {
            for (std::size_t i = 0; i < probes.size(); ++i) row[i] = sim.read(probes[i]);
            out.trace.append(sim.time(), row.data(), sim.st());
        }
    }
    out.final_state = sim.state();
    out.audit = sim.audit();
    return out;
}

}  // namespace zsource::engine
