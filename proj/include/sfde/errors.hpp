#pragma once

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfde {

/// Rejected input: a precondition or invariant of a public operation failed.
class InvalidArgument : public std::invalid_argument {
public:
    explicit InvalidArgument(const std::string& what) : std::invalid_argument(what) {}
};

/// A trajectory produced a non-finite coefficient. Carries the model time of the failing step.
class NumericalAbort : public std::runtime_error {
public:
    NumericalAbort(const std::string& what, double time)
        : std::runtime_error(what + " (t = " + std::to_string(time) + ")"), time_(time) {}
    /// Raised outside a trajectory; time() is NaN until a stepper attaches one.
    explicit NumericalAbort(const std::string& what)
        : std::runtime_error(what), time_(std::numeric_limits<double>::quiet_NaN()) {}

    double time() const noexcept { return time_; }

private:
    double time_;
};

namespace detail {

inline std::string join_violations(const std::vector<std::string>& items)
{
    std::string out;
    for (const auto& item : items) {
        if (!out.empty()) out += "; ";
        out += item;
    }
    return out;
}

inline void require(bool condition, const std::string& message)
{
    if (!condition) throw InvalidArgument(message);
}

} // namespace detail
} // namespace sfde
