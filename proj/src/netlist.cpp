#include "zsource/netlist.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <queue>
#include <sstream>

namespace zsource::netlist {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

struct ParamSpec {
    std::vector<std::string> required_values;
    std::vector<std::string> optional_values;
    std::vector<std::string> required_tags;
    std::vector<std::string> optional_tags;
};

const ParamSpec& spec_for(Kind k) {
    static const std::map<Kind, ParamSpec> specs = {
        {Kind::V, {{"dc"}, {"ac", "freq", "phase"}, {}, {}}},
        {Kind::R, {{"r"}, {}, {}, {}}},
        {Kind::L, {{"l"}, {"i0", "r"}, {}, {}}},
        {Kind::C, {{"c"}, {"v0", "esr"}, {}, {}}},
        {Kind::D, {{}, {"vf", "ron", "roff"}, {}, {}}},
        {Kind::S, {{}, {"ron", "roff"}, {"gate"}, {}}},
        {Kind::W3,
         {{"lm"}, {"ll1", "ll2", "ll3", "r1", "r2", "r3", "i1", "i2", "i3"}, {"turns"}, {}}},
        {Kind::LOAD3,
         {{},
          {"r", "l", "rs", "rr", "lls", "llr", "lm", "j", "pp", "tload", "rpm0", "rpm"},
          {"model"},
          {}}},
    };
    return specs.at(k);
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

// Splits "a:b:c" into three positive numbers.
std::optional<std::array<double, 3>> parse_turns(std::string_view s) {
    std::array<double, 3> out{};
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
        const auto next = s.find(':', pos);
        const auto part = s.substr(pos, next == std::string_view::npos ? s.npos : next - pos);
        const auto v = parse_si(part);
        if (!v || !(*v > 0) || !std::isfinite(*v)) return std::nullopt;
        out[i] = *v;
        if (i < 2) {
            if (next == std::string_view::npos) return std::nullopt;
            pos = next + 1;
        } else if (next != std::string_view::npos) {
            return std::nullopt;
        }
    }
    return out;
}

std::string format_turns(const std::array<double, 3>& t) {
    return format_si(t[0]) + ":" + format_si(t[1]) + ":" + format_si(t[2]);
}

}  // namespace

std::string to_string(Kind k) {
    switch (k) {
        case Kind::V: return "v";
        case Kind::R: return "r";
        case Kind::L: return "l";
        case Kind::C: return "c";
        case Kind::D: return "d";
        case Kind::S: return "s";
        case Kind::W3: return "w3";
        case Kind::LOAD3: return "load3";
    }
    return "?";
}

std::optional<Kind> kind_from_string(std::string_view s) {
    const auto l = lower(s);
    if (l == "v") return Kind::V;
    if (l == "r") return Kind::R;
    if (l == "l") return Kind::L;
    if (l == "c") return Kind::C;
    if (l == "d") return Kind::D;
    if (l == "s") return Kind::S;
    if (l == "w3") return Kind::W3;
    if (l == "load3") return Kind::LOAD3;
    return std::nullopt;
}

std::optional<Kind> kind_from_name(std::string_view name) {
    const auto l = lower(name);
    if (l.rfind("load3", 0) == 0) return Kind::LOAD3;
    if (l.rfind("w3", 0) == 0) return Kind::W3;
    if (l.empty()) return std::nullopt;
    return kind_from_string(l.substr(0, 1));
}

std::size_t arity(Kind k) {
    switch (k) {
        case Kind::W3: return 6;
        case Kind::LOAD3: return 3;
        default: return 2;
    }
}

double Element::value(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end())
        throw std::out_of_range("element " + name + " has no parameter '" + key + "'");
    return it->second;
}

double Element::value_or(const std::string& key, double fallback) const {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

std::string Element::tag_or(const std::string& key, const std::string& fallback) const {
    const auto it = tags.find(key);
    return it == tags.end() ? fallback : it->second;
}

std::array<double, 3> Element::turns() const {
    const auto t = parse_turns(tag_or("turns", ""));
    if (!t) throw std::logic_error("element " + name + " has no valid turns");
    return *t;
}

// ---------------------------------------------------------------------------

std::string Diagnostic::format(const std::string& file) const {
    std::ostringstream os;
    os << file << ':' << line << ": " << code << ": " << message;
    if (column > 0) os << " (column " << column << ")";
    return os.str();
}

namespace {
std::string join_diags(const std::vector<Diagnostic>& d) {
    std::string s;
    for (const auto& x : d) {
        if (!s.empty()) s += "; ";
        s += x.format("<netlist>");
    }
    return s;
}
}  // namespace

ParseError::ParseError(std::vector<Diagnostic> diags)
    : std::runtime_error(join_diags(diags)), diags_(std::move(diags)) {}

std::string ParseError::format(const std::string& file) const {
    std::string s;
    for (const auto& d : diags_) s += d.format(file) + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// SI numbers

std::optional<double> parse_si(std::string_view token) {
    if (token.empty()) return std::nullopt;
    std::string t = lower(token);
    int exponent = 0;
    auto ends_with = [&](std::string_view suf) {
        return t.size() > suf.size() && t.compare(t.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with("meg")) {
        exponent = 6;
        t.resize(t.size() - 3);
    } else {
        static const std::map<char, int> suffixes = {{'f', -15}, {'p', -12}, {'n', -9}, {'u', -6},
                                                     {'m', -3},  {'k', 3},   {'g', 9},  {'t', 12}};
        const char last = t.back();
        if (auto it = suffixes.find(last); it != suffixes.end() && t.size() > 1) {
            exponent = it->second;
            t.pop_back();
        }
    }
    // Plain decimal mantissa with optional exponent; nothing else.
    std::size_t i = 0;
    if (i < t.size() && (t[i] == '+' || t[i] == '-')) ++i;
    std::size_t digits = 0;
    while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i, ++digits;
    if (i < t.size() && t[i] == '.') {
        ++i;
        while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i, ++digits;
    }
    if (digits == 0) return std::nullopt;
    if (i < t.size() && t[i] == 'e') {
        ++i;
        if (i < t.size() && (t[i] == '+' || t[i] == '-')) ++i;
        std::size_t ed = 0;
        while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i, ++ed;
        if (ed == 0) return std::nullopt;
    }
    if (i != t.size()) return std::nullopt;
    // Fold the suffix into the decimal string so strtod rounds once.
    double value = 0;
    if (exponent != 0) {
        // Split mantissa exponent and add the suffix exponent textually.
        const auto epos = t.find('e');
        const std::string mant = t.substr(0, epos);
        const int e0 = epos == std::string::npos ? 0 : std::atoi(t.c_str() + epos + 1);
        const std::string s = mant + "e" + std::to_string(e0 + exponent);
        value = std::strtod(s.c_str(), nullptr);
    } else {
        value = std::strtod(t.c_str(), nullptr);
    }
    if (!std::isfinite(value)) return std::nullopt;
    return value;
}

std::string format_si(double v) {
    if (v == 0) return "0";
    if (!std::isfinite(v)) return std::to_string(v);
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
    std::string sci(buf, res.ptr);  // e.g. "-3.3e-04"
    bool neg = false;
    if (sci[0] == '-') {
        neg = true;
        sci.erase(0, 1);
    }
    const auto epos = sci.find('e');
    const int exp10 = std::atoi(sci.c_str() + epos + 1);
    std::string digits;
    for (std::size_t i = 0; i < epos; ++i)
        if (sci[i] != '.') digits += sci[i];

    struct Suffix {
        int exp;
        const char* text;
    };
    static constexpr Suffix table[] = {{12, "t"}, {9, "g"},  {6, "meg"}, {3, "k"},  {0, ""},
                                       {-3, "m"}, {-6, "u"}, {-9, "n"},  {-12, "p"}, {-15, "f"}};
    const Suffix* chosen = nullptr;
    for (const auto& s : table)
        if (exp10 >= s.exp) {
            chosen = &s;
            break;
        }
    if (chosen == nullptr || exp10 >= 15) return (neg ? "-" : "") + sci;

    // Place the decimal point so the mantissa is value / 10^exp.
    const std::size_t int_digits = static_cast<std::size_t>(exp10 - chosen->exp) + 1;
    std::string mant;
    if (digits.size() <= int_digits) {
        mant = digits + std::string(int_digits - digits.size(), '0');
    } else {
        mant = digits.substr(0, int_digits) + "." + digits.substr(int_digits);
    }
    return (neg ? "-" : "") + mant + chosen->text;
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Diagnostic> validate(const std::vector<Element>& elements) {
    std::vector<Diagnostic> diags;
    auto add = [&](int line, std::string code, std::string msg) {
        diags.push_back({line, 0, std::move(code), std::move(msg)});
    };

    std::map<std::string, int> seen;
    for (const auto& e : elements) {
        const std::string key = lower(e.name);
        if (auto it = seen.find(key); it != seen.end())
            add(e.line, "duplicate-name",
                "element '" + e.name + "' already defined on line " + std::to_string(it->second));
        else
            seen.emplace(key, e.line);

        if (e.nodes.size() != arity(e.kind))
            add(e.line, "arity",
                to_string(e.kind) + " element '" + e.name + "' needs " +
                    std::to_string(arity(e.kind)) + " nodes, got " +
                    std::to_string(e.nodes.size()));

        const auto& spec = spec_for(e.kind);
        for (const auto& k : spec.required_values)
            if (!e.values.count(k))
                add(e.line, "missing-param", "element '" + e.name + "' requires " + k + "=");
        for (const auto& k : spec.required_tags)
            if (!e.tags.count(k))
                add(e.line, "missing-param", "element '" + e.name + "' requires " + k + "=");
        for (const auto& [k, v] : e.values) {
            if (!contains(spec.required_values, k) && !contains(spec.optional_values, k))
                add(e.line, "unknown-param",
                    "parameter '" + k + "' is not valid for " + to_string(e.kind));
            else if (!std::isfinite(v))
                add(e.line, "bad-value", "parameter '" + k + "' must be finite");
        }
        for (const auto& [k, v] : e.tags)
            if (!contains(spec.required_tags, k) && !contains(spec.optional_tags, k))
                add(e.line, "unknown-param",
                    "parameter '" + k + "' is not valid for " + to_string(e.kind));

        auto positive = [&](const char* key) {
            if (auto it = e.values.find(key); it != e.values.end() && !(it->second > 0))
                add(e.line, "bad-value",
                    "parameter '" + std::string(key) + "' of '" + e.name + "' must be > 0");
        };
        auto non_negative = [&](const char* key) {
            if (auto it = e.values.find(key); it != e.values.end() && !(it->second >= 0))
                add(e.line, "bad-value",
                    "parameter '" + std::string(key) + "' of '" + e.name + "' must be >= 0");
        };
        switch (e.kind) {
            case Kind::R: positive("r"); break;
            case Kind::L: positive("l"); non_negative("r"); break;
            case Kind::C: positive("c"); non_negative("esr"); break;
            case Kind::D:
            case Kind::S:
                positive("ron");
                positive("roff");
                if (e.value_or("ron", 1e-3) >= e.value_or("roff", 1e6))
                    add(e.line, "bad-value", "ron must be smaller than roff for '" + e.name + "'");
                if (e.kind == Kind::S && e.tags.count("gate")) {
                    static const std::set<std::string> gates = {"st", "nst", "ah", "al",
                                                                "bh", "bl", "ch", "cl"};
                    if (!gates.count(e.tags.at("gate")))
                        add(e.line, "bad-value",
                            "gate of '" + e.name + "' must be one of st nst ah al bh bl ch cl");
                }
                break;
            case Kind::V:
                non_negative("freq");
                break;
            case Kind::W3:
                positive("lm");
                for (const char* k : {"ll1", "ll2", "ll3", "r1", "r2", "r3"}) non_negative(k);
                if (e.tags.count("turns") && !parse_turns(e.tags.at("turns")))
                    add(e.line, "bad-value",
                        "turns of '" + e.name + "' must be three positive numbers a:b:c");
                break;
            case Kind::LOAD3: {
                const auto model = e.tag_or("model", "");
                if (e.tags.count("model") && model != "im" && model != "r" && model != "rl")
                    add(e.line, "bad-value", "load3 model must be im, r or rl");
                if ((model == "r" || model == "rl") && !e.values.count("r"))
                    add(e.line, "missing-param", "load3 model " + model + " requires r=");
                if (model == "rl" && !e.values.count("l"))
                    add(e.line, "missing-param", "load3 model rl requires l=");
                for (const char* k : {"r", "l", "rs", "rr", "lls", "llr", "lm", "j", "pp"})
                    positive(k);
                if (auto it = e.values.find("pp");
                    it != e.values.end() && it->second != std::floor(it->second))
                    add(e.line, "bad-value", "pp must be an integer pole-pair count");
                break;
            }
            default: break;
        }
    }

    if (elements.empty()) return diags;

    // Ground and connectivity.
    std::map<std::string, std::vector<std::string>> adj;
    std::map<std::string, int> first_line;
    bool has_ground = false;
    for (const auto& e : elements) {
        for (const auto& n : e.nodes) {
            adj[n];
            first_line.emplace(n, e.line);
            if (n == "0") has_ground = true;
        }
        auto link = [&](const std::string& a, const std::string& b) {
            adj[a].push_back(b);
            adj[b].push_back(a);
        };
        if (e.kind == Kind::W3 && e.nodes.size() == 6) {
            for (int w = 0; w < 3; ++w) link(e.nodes[2 * w], e.nodes[2 * w + 1]);
        } else {
            for (std::size_t i = 1; i < e.nodes.size(); ++i) link(e.nodes[0], e.nodes[i]);
        }
    }
    if (!has_ground) {
        add(elements.front().line, "missing-ground", "no element connects to ground node '0'");
        return diags;
    }
    std::set<std::string> reached{"0"};
    std::queue<std::string> todo;
    todo.push("0");
    while (!todo.empty()) {
        const auto n = todo.front();
        todo.pop();
        for (const auto& m : adj[n])
            if (reached.insert(m).second) todo.push(m);
    }
    for (const auto& [n, _] : adj)
        if (!reached.count(n))
            add(first_line[n], "floating-node", "node '" + n + "' has no path to ground");
    return diags;
}

Circuit::Circuit(std::vector<Element> elements) : elements_(std::move(elements)) {
    auto diags = validate(elements_);
    if (!diags.empty()) throw ParseError(std::move(diags));
    for (std::size_t i = 0; i < elements_.size(); ++i) {
        index_.emplace(lower(elements_[i].name), i);
        for (const auto& n : elements_[i].nodes) nodes_.insert(n);
    }
}

const Element* Circuit::find(std::string_view name) const {
    const auto it = index_.find(lower(name));
    return it == index_.end() ? nullptr : &elements_[it->second];
}

const Element& Circuit::at(std::string_view name) const {
    const auto* e = find(name);
    if (e == nullptr) throw std::out_of_range("no element named '" + std::string(name) + "'");
    return *e;
}

std::size_t Circuit::count(Kind k) const {
    return static_cast<std::size_t>(std::count_if(
        elements_.begin(), elements_.end(), [k](const Element& e) { return e.kind == k; }));
}

Circuit Circuit::with(const Element& replacement) const {
    auto elems = elements_;
    bool replaced = false;
    for (auto& e : elems)
        if (lower(e.name) == lower(replacement.name)) {
            const int line = e.line;
            e = replacement;
            e.line = line;
            replaced = true;
        }
    if (!replaced) elems.push_back(replacement);
    return Circuit(std::move(elems));
}

// ---------------------------------------------------------------------------
// Parse / serialize

Circuit parse(std::string_view text) {
    std::vector<Element> elements;
    std::vector<Diagnostic> diags;

    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        ++line_no;
        pos = eol + 1;

        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);

        struct Token {
            std::string text;
            int column;
        };
        std::vector<Token> tokens;
        for (std::size_t i = 0; i < line.size();) {
            if (std::isspace(static_cast<unsigned char>(line[i]))) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
            tokens.push_back({std::string(line.substr(i, j - i)), static_cast<int>(i) + 1});
            i = j;
        }
        if (tokens.empty()) {
            if (eol == text.size()) break;
            continue;
        }

        const auto kind = kind_from_name(tokens[0].text);
        if (!kind) {
            diags.push_back({line_no, tokens[0].column, "unknown-kind",
                             "cannot infer element kind from name '" + tokens[0].text + "'"});
            continue;
        }
        Element e;
        e.kind = *kind;
        e.name = lower(tokens[0].text);
        e.line = line_no;
        bool ok = true;
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            const auto& tok = tokens[i];
            const auto eq = tok.text.find('=');
            if (eq == std::string::npos) {
                if (!e.values.empty() || !e.tags.empty()) {
                    diags.push_back({line_no, tok.column, "bad-token",
                                     "node '" + tok.text + "' after parameters"});
                    ok = false;
                    continue;
                }
                e.nodes.push_back(lower(tok.text));
                continue;
            }
            const std::string key = lower(tok.text.substr(0, eq));
            const std::string raw = tok.text.substr(eq + 1);
            if (key.empty() || raw.empty()) {
                diags.push_back({line_no, tok.column, "bad-token",
                                 "malformed parameter '" + tok.text + "'"});
                ok = false;
                continue;
            }
            if (e.values.count(key) || e.tags.count(key)) {
                diags.push_back(
                    {line_no, tok.column, "bad-token", "parameter '" + key + "' given twice"});
                ok = false;
                continue;
            }
            if (key == "gate" || key == "model") {
                e.tags[key] = lower(raw);
            } else if (key == "turns") {
                const auto t = parse_turns(raw);
                if (!t) {
                    diags.push_back({line_no, tok.column, "bad-number",
                                     "turns '" + raw + "' is not a:b:c with positive numbers"});
                    ok = false;
                    continue;
                }
                e.tags[key] = format_turns(*t);
            } else {
                const auto v = parse_si(raw);
                if (!v) {
                    diags.push_back({line_no, tok.column + static_cast<int>(eq) + 1, "bad-number",
                                     "cannot read '" + raw + "' as a number with SI suffix"});
                    ok = false;
                    continue;
                }
                e.values[key] = *v;
            }
        }
        if (ok) elements.push_back(std::move(e));
        if (eol == text.size()) break;
    }

    auto more = validate(elements);
    diags.insert(diags.end(), more.begin(), more.end());
    if (!diags.empty()) {
        std::stable_sort(diags.begin(), diags.end(),
                         [](const Diagnostic& a, const Diagnostic& b) { return a.line < b.line; });
        throw ParseError(std::move(diags));
    }
    return Circuit(std::move(elements));
}

std::string serialize(const Circuit& c) {
    std::ostringstream os;
    os << "# zsource netlist\n";
    for (const auto& e : c.elements()) {
        os << lower(e.name);
        for (const auto& n : e.nodes) os << ' ' << n;
        std::map<std::string, std::string> params;
        for (const auto& [k, v] : e.values) params[k] = format_si(v);
        for (const auto& [k, v] : e.tags) params[k] = v;
        for (const auto& [k, v] : params) os << ' ' << k << '=' << v;
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Built-in netlist

ComponentValues ComponentValues::dcdc_sample() {
    ComponentValues v;
    v.c1 = 220e-6;
    v.c2 = 680e-6;
    v.lr = 330e-6;
    v.lm = 370e-6;
    v.leakage = 0.15e-6;
    v.c_out = 100e-6;
    v.r_load = 245;
    return v;
}

ComponentValues ComponentValues::drive_sample() {
    ComponentValues v;
    v.c1 = 100e-6;
    v.c2 = 100e-6;
    v.lr = 1e-3;
    v.lm = 370e-6;
    v.leakage = 0.15e-6;
    v.load3.model = "im";
    return v;
}

namespace {

Element make(Kind k, std::string name, std::vector<std::string> nodes,
             std::map<std::string, double> values = {},
             std::map<std::string, std::string> tags = {}) {
    Element e;
    e.kind = k;
    e.name = std::move(name);
    e.nodes = std::move(nodes);
    e.values = std::move(values);
    e.tags = std::move(tags);
    return e;
}

void set_if_nonzero(Element& e, const std::string& key, double v) {
    if (v != 0) e.values[key] = v;
}

}  // namespace

Circuit builtin(const analytics::Params& op, const ComponentValues& values, Mode mode) {
    analytics::require_feasible_duty(op.K(), op.P(), op.d);
    if (!(op.V_dc >= 0)) throw DomainError("source voltage must be non-negative");
    const auto& par = values.parasitics;
    using namespace nodes;

    std::vector<Element> el;
    el.push_back(make(Kind::V, "vin", {source, "0"}, {{"dc", op.V_dc}}));

    // Windings: w1 in->x, w2 y->c, w3 x->e.
    Element w = make(Kind::W3, "w3y", {source, tap, d1_out, c2_top, tap, c1_low},
                     {{"lm", values.lm},
                      {"ll1", values.leakage},
                      {"ll2", values.leakage},
                      {"ll3", values.leakage}},
                     {{"turns", format_turns({op.n1, op.n2, op.n3})}});
    for (const char* k : {"r1", "r2", "r3"}) set_if_nonzero(w, k, par.ind_esr);
    el.push_back(w);

    if (values.active_d1) {
        el.push_back(make(Kind::S, "sd1", {tap, d1_out},
                          {{"ron", par.switch_ron}, {"roff", par.switch_roff}}, {{"gate", "nst"}}));
    } else {
        Element d = make(Kind::D, "d1", {tap, d1_out},
                         {{"ron", par.diode_ron}, {"roff", par.diode_roff}});
        set_if_nonzero(d, "vf", par.diode_vf);
        el.push_back(d);
    }

    Element c1 = make(Kind::C, "c1", {link, c1_low}, {{"c", values.c1}});
    Element c2 = make(Kind::C, "c2", {c2_top, "0"}, {{"c", values.c2}});
    Element lr = make(Kind::L, "lr", {c2_top, link}, {{"l", values.lr}});
    set_if_nonzero(c1, "esr", par.cap_esr);
    set_if_nonzero(c2, "esr", par.cap_esr);
    set_if_nonzero(lr, "r", par.ind_esr);
    if (values.initial) {
        const auto& ic = *values.initial;
        set_if_nonzero(c1, "v0", ic.v_c1);
        set_if_nonzero(c2, "v0", ic.v_c2);
        set_if_nonzero(lr, "i0", ic.i_lr);
        set_if_nonzero(w, "i1", ic.i_w[0]);
        set_if_nonzero(w, "i2", ic.i_w[1]);
        set_if_nonzero(w, "i3", ic.i_w[2]);
        el[1] = w;
    }
    el.push_back(c1);
    el.push_back(c2);
    el.push_back(lr);

    const std::map<std::string, double> sw = {{"ron", par.switch_ron}, {"roff", par.switch_roff}};
    if (mode == Mode::dcdc) {
        el.push_back(make(Kind::S, "s1", {link, "0"}, sw, {{"gate", "st"}}));
        Element dout = make(Kind::D, "dout", {link, output},
                            {{"ron", par.diode_ron}, {"roff", par.diode_roff}});
        set_if_nonzero(dout, "vf", par.diode_vf);
        el.push_back(dout);
        Element cout = make(Kind::C, "cout", {output, "0"}, {{"c", values.c_out}});
        set_if_nonzero(cout, "esr", par.cap_esr);
        if (values.initial) set_if_nonzero(cout, "v0", values.initial->v_out);
        el.push_back(cout);
        el.push_back(make(Kind::R, "rload", {output, "0"}, {{"r", values.r_load}}));
    } else {
        const char* phases[] = {"pa", "pb", "pc"};
        const char* legs[] = {"a", "b", "c"};
        for (int i = 0; i < 3; ++i) {
            el.push_back(make(Kind::S, std::string("s") + legs[i] + "h", {link, phases[i]}, sw,
                              {{"gate", std::string(legs[i]) + "h"}}));
            el.push_back(make(Kind::S, std::string("s") + legs[i] + "l", {phases[i], "0"}, sw,
                              {{"gate", std::string(legs[i]) + "l"}}));
        }
        const auto& ld = values.load3;
        Element m = make(Kind::LOAD3, "load3m", {"pa", "pb", "pc"}, {}, {{"model", ld.model}});
        if (ld.model == "r" || ld.model == "rl") m.values["r"] = ld.r;
        if (ld.model == "rl") m.values["l"] = ld.l;
        if (ld.model == "im") {
            set_if_nonzero(m, "tload", ld.t_load);
            set_if_nonzero(m, "rpm0", ld.rpm0);
            if (ld.rpm_fixed) m.values["rpm"] = *ld.rpm_fixed;
        }
        el.push_back(m);
    }
    return Circuit(std::move(el));
}

}  // namespace zsource::netlist
