#pragma once

#include <json.hpp>

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace sfde {

using Json = nlohmann::ordered_json;

/// Outcome of one numerical verification. Serializes to
/// {check, samples, worst_ratio, constants, pass} plus optional details.
struct CheckReport {
    std::string check;
    std::size_t samples = 0;
    double worst_ratio = 0.0;
    std::vector<std::pair<std::string, double>> constants;
    bool pass = false;
    Json details = Json::object();

    double constant(const std::string& name) const
    {
        for (const auto& [k, v] : constants)
            if (k == name) return v;
        return 0.0;
    }

    Json to_json() const
    {
        Json c = Json::object();
        for (const auto& [k, v] : constants) c[k] = v;
        Json j;
        j["check"] = check;
        j["samples"] = samples;
        j["worst_ratio"] = worst_ratio;
        j["constants"] = std::move(c);
        j["pass"] = pass;
        if (!details.empty()) j["details"] = details;
        return j;
    }
};

} // namespace sfde
