#pragma once

// Uniformly sampled signal record shared by the engine and the reference model.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace zsource {

class Trace {
public:
    Trace() = default;
    Trace(double dt, std::vector<std::string> names);

    void append(double t, const double* row, bool st);
    void reserve(std::size_t n);

    double dt() const noexcept { return dt_; }
    std::size_t size() const noexcept { return time_.size(); }
    bool empty() const noexcept { return time_.empty(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    bool has(const std::string& name) const;

    const std::vector<double>& time() const noexcept { return time_; }
    const std::vector<double>& column(const std::string& name) const;
    const std::vector<double>& column(std::size_t i) const { return columns_.at(i); }
    /// Shoot-through annotation, one flag per sample.
    const std::vector<std::uint8_t>& st() const noexcept { return st_; }

    /// Trailing window of n samples, or everything if n exceeds size().
    Trace tail(std::size_t n) const;

    /// Header `t,<names>...,st`, 17 significant digits, LF line endings.
    void write_csv(std::ostream& os) const;
    void write_csv(const std::string& path) const;

private:
    double dt_{0};
    std::vector<std::string> names_;
    std::vector<double> time_;
    std::vector<std::vector<double>> columns_;
    std::vector<std::uint8_t> st_;
};

}  // namespace zsource
