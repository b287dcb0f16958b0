#pragma once

// Line-oriented netlist format.
//
//   # comment
//   <name> <node>... [key=value]...
//
// The element kind is the name's prefix: v r l c d s w3 load3. Tokens are whitespace separated and
// case-insensitive; numeric values accept the SI suffixes f p n u m k meg g t.
// Node "0" is ground. A v source may add ac=, freq= and phase= (rad) to its dc=
// value: v(t) = dc + ac * sin(2 pi freq t + phase).

#include <array>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "zsource/analytics.hpp"

namespace zsource::netlist {

enum class Kind { V, R, L, C, D, S, W3, LOAD3 };

std::string to_string(Kind k);
std::optional<Kind> kind_from_string(std::string_view s);
/// Kind from the leading letters of an element name (r1 -> R, w3a -> W3).
std::optional<Kind> kind_from_name(std::string_view name);
std::size_t arity(Kind k);

struct Element {
    Kind kind{Kind::R};
    std::string name;
    std::vector<std::string> nodes;
    std::map<std::string, double> values;
    std::map<std::string, std::string> tags;  ///< non-numeric parameters (gate, turns, model)
    int line{0};                              ///< source line, not part of equality

    double value(const std::string& key) const;
    double value_or(const std::string& key, double fallback) const;
    bool has(const std::string& key) const { return values.count(key) || tags.count(key); }
    std::string tag_or(const std::string& key, const std::string& fallback) const;

    /// Turns n1:n2:n3 of a w3 element.
    std::array<double, 3> turns() const;

    bool operator==(const Element& o) const {
        return kind == o.kind && name == o.name && nodes == o.nodes && values == o.values &&
               tags == o.tags;
    }
};

struct Diagnostic {
    int line{0};
    int column{0};
    std::string code;
    std::string message;

    std::string format(const std::string& file) const;
};

class ParseError : public std::runtime_error {
public:
    explicit ParseError(std::vector<Diagnostic> diags);
    const std::vector<Diagnostic>& diagnostics() const noexcept { return diags_; }
    std::string format(const std::string& file) const;

private:
    std::vector<Diagnostic> diags_;
};

/// Validated, immutable element list.
class Circuit {
public:
    Circuit() = default;
    /// Validates and throws ParseError on any violated invariant.
    explicit Circuit(std::vector<Element> elements);

    const std::vector<Element>& elements() const noexcept { return elements_; }
    const std::set<std::string>& nodes() const noexcept { return nodes_; }
    const Element* find(std::string_view name) const;
    const Element& at(std::string_view name) const;
    std::size_t count(Kind k) const;
    bool empty() const noexcept { return elements_.empty(); }

    /// Copy with one element replaced (matched by name) and revalidated.
    Circuit with(const Element& replacement) const;

    bool operator==(const Circuit& o) const { return elements_ == o.elements_; }

private:
    std::vector<Element> elements_;
    std::set<std::string> nodes_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Validation without construction; empty result means valid.
std::vector<Diagnostic> validate(const std::vector<Element>& elements);

Circuit parse(std::string_view text);
std::string serialize(const Circuit& c);

/// SI-suffixed number parsing/formatting. format_si(x) parses back to x exactly.
std::optional<double> parse_si(std::string_view token);
std::string format_si(double v);

// ---------------------------------------------------------------------------
// Built-in proposed-converter netlist

enum class Mode { dcdc, inverter };

struct Parasitics {
    double cap_esr{0};
    double ind_esr{0};
    double switch_ron{1e-3};
    double switch_roff{1e6};
    double diode_vf{0};
    double diode_ron{1e-3};
    double diode_roff{1e6};

    static Parasitics ideal() { return {}; }
    /// Representative lossy component set used for efficiency estimates.
    static Parasitics nominal() { return {0.020, 0.050, 0.010, 1e6, 0.45, 1e-3, 1e6}; }
};

struct MachineLoad {
    std::string model{"im"};  ///< im | r | rl
    double r{10};             ///< r/rl models, per phase
    double l{1e-3};           ///< rl model, per phase
    double t_load{0};         ///< im: load torque, N*m
    double rpm0{0};           ///< im: initial shaft speed
    std::optional<double> rpm_fixed;  ///< im: externally driven shaft speed
};

/// Initial storage state written as v0/i0 fields.
struct InitialState {
    double v_c1{0};
    double v_c2{0};
    double v_out{0};
    double i_lr{0};
    std::array<double, 3> i_w{0, 0, 0};
};

struct ComponentValues {
    double c1{220e-6};
    double c2{680e-6};
    double lr{330e-6};
    double lm{370e-6};
    double leakage{0.15e-6};
    double c_out{100e-6};
    double r_load{245};
    MachineLoad load3;
    Parasitics parasitics;
    bool active_d1{false};  ///< replace the network diode by a switch gated in NST
    std::optional<InitialState> initial;

    static ComponentValues dcdc_sample();  ///< experimental DC-DC sample
    static ComponentValues drive_sample();  ///< inverter + induction machine
};

/// Node names used by the built-in netlist.
namespace nodes {
inline constexpr const char* source = "in";
inline constexpr const char* tap = "x";       ///< W1-/W3+/D1 anode
inline constexpr const char* d1_out = "y";    ///< D1 cathode / W2+
inline constexpr const char* c2_top = "c";
inline constexpr const char* c1_low = "e";
inline constexpr const char* link = "p";
inline constexpr const char* output = "out";
}  // namespace nodes

Circuit builtin(const analytics::Params& op, const ComponentValues& values, Mode mode);

}  // namespace zsource::netlist
