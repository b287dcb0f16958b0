#pragma once

#include <stdexcept>
#include <string>

namespace zsource {

/// Parameters outside the region where a formula or model is defined
/// (infeasible duty, unreachable gain, turns-ratio pole).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Inconsistent run configuration: dt not dividing the switching period,
/// unknown probe, infeasible modulation spec.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure while integrating: singular system, diode fixpoint not reached.
class SimulationError : public std::runtime_error {
public:
    SimulationError(const std::string& what, double time)
        : std::runtime_error(what + " (t=" + std::to_string(time) + " s)"), time_(time) {}

    double time() const noexcept { return time_; }

private:
    double time_;
};

}  // namespace zsource
