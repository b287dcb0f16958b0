#include "zsource/trace.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include "zsource/errors.hpp"

namespace zsource {

Trace::Trace(double dt, std::vector<std::string> names) : dt_(dt), names_(std::move(names)) {
    if (!(dt > 0)) throw ConfigError("trace sample period must be positive");
    std::set<std::string> seen;
    for (const auto& n : names_)
        if (!seen.insert(n).second || n == "t" || n == "st")
            throw ConfigError("duplicate or reserved trace signal '" + n + "'");
    columns_.resize(names_.size());
}

void Trace::append(double t, const double* row, bool st) {
    time_.push_back(t);
    for (std::size_t i = 0; i < columns_.size(); ++i) columns_[i].push_back(row[i]);
    st_.push_back(st ? 1 : 0);
}

void Trace::reserve(std::size_t n) {
    time_.reserve(n);
    st_.reserve(n);
    for (auto& c : columns_) c.reserve(n);
}

bool Trace::has(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::vector<double>& Trace::column(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ConfigError("trace has no signal '" + name + "'");
    return columns_[static_cast<std::size_t>(it - names_.begin())];
}

Trace Trace::tail(std::size_t n) const {
    Trace out(dt_, names_);
    const std::size_t from = n >= size() ? 0 : size() - n;
    out.time_.assign(time_.begin() + from, time_.end());
    out.st_.assign(st_.begin() + from, st_.end());
    for (std::size_t i = 0; i < columns_.size(); ++i)
        out.columns_[i].assign(columns_[i].begin() + from, columns_[i].end());
    return out;
}

void Trace::write_csv(std::ostream& os) const {
    os << 't';
    for (const auto& n : names_) os << ',' << n;
    os << ",st\n";
    char buf[32];
    for (std::size_t k = 0; k < size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", time_[k]);
        os << buf;
        for (const auto& c : columns_) {
            std::snprintf(buf, sizeof buf, "%.17g", c[k]);
            os << ',' << buf;
        }
        os << ',' << int(st_[k]) << '\n';
    }
}

void Trace::write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + path + "'");
    write_csv(f);
}

}  // namespace zsource
