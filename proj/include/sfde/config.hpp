#pragma once

// JSON experiment configuration. parse_config collects every violation before
// failing and rejects unknown keys.

#include <sfde/delay_dynamics.hpp>
#include <sfde/errors.hpp>
#include <sfde/report.hpp>
#include <sfde/spectral_domain.hpp>
#include <sfde/stochastic_driver.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sfde {

inline constexpr int kExitPass = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitCheckFailed = 4;
inline constexpr int kExitMissingFile = 5;
inline constexpr int kExitMalformed = 6;

inline const std::vector<std::string>& experiment_kinds()
{
    static const std::vector<std::string> kinds{"simulate",  "picard",      "stationary",  "attractivity",
                                                "invariant", "homogeneity", "kernel-check", "smallness"};
    return kinds;
}

/// Kinds that step the model in time and therefore need a bounded domain.
inline bool stepping_kind(const std::string& kind) { return kind != "kernel-check" && kind != "smallness"; }

class ConfigError : public std::runtime_error {
public:
    ConfigError(int exit_code, std::vector<std::string> violations)
        : std::runtime_error(detail::join_violations(violations)), code_(exit_code), violations_(std::move(violations)) {}

    int exit_code() const noexcept { return code_; }
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    int code_;
    std::vector<std::string> violations_;
};

struct InitialConfig {
    std::string kind = "zero"; // zero | mode | coefficients
    std::size_t mode = 1;
    double amplitude = 1.0;
    std::vector<double> values;

    Json to_json() const
    {
        Json j;
        j["kind"] = kind;
        if (kind == "mode") {
            j["mode"] = mode;
            j["amplitude"] = amplitude;
        }
        if (kind == "coefficients") j["values"] = values;
        return j;
    }

    /// Constant history phi(theta) = phi(0).
    FullState build(const BasisPtr& basis, double delay, double dt) const
    {
        std::vector<double> v(basis->field_size(), 0.0);
        if (kind == "mode") v.at(mode - 1) = amplitude;
        if (kind == "coefficients")
            for (std::size_t k = 0; k < values.size(); ++k) v.at(k) = values[k];
        return FullState::from_history(DelaySegment::constant(Field(basis, std::move(v)), delay, dt));
    }
};

struct ModelConfig {
    DomainSpec domain;
    std::size_t modes = 16;
    std::optional<std::vector<double>> spectrum;
    double delay = 1.0;
    double dt = 0.01;
    std::string noise_kind = "none"; // none | geometric | polynomial | explicit
    std::size_t noise_modes = 0;
    double noise_ratio = 0.5;
    double noise_scale = 1.0;
    double noise_power = 2.0;
    std::vector<double> noise_coefficients;
    NonlinearitySpec nonlinearity;
    InitialConfig initial;

    BasisPtr basis;  // built during validation
    QWienerSpec noise;

    ModelSpec spec() const { return ModelSpec{basis, noise, nonlinearity, delay, dt}; }
    FullState initial_state() const { return initial.build(basis, delay, dt); }
};

struct ExperimentParams {
    double horizon = 1.0;
    std::size_t ensemble = 1;
    std::optional<double> burn_in;
    std::size_t record_every = 1;
    int moment_power = 2;
    bool moment_check = false;
    double ratio_threshold = 1.2;
    // picard
    double tol = 1e-10;
    double max_window = 0.25;
    std::size_t max_iterations = 200;
    std::size_t stall_limit = 3;
    // stationary
    double lookback = 8.0;
    double forward = 1.0;
    double doubling_tolerance = 1e-3;
    // attractivity
    InitialConfig initial2;
    // invariant / homogeneity
    std::size_t observable_modes = 2;
    double z_threshold = 3.0;
    std::vector<double> times; // invariant: {T, 2T}
    std::vector<double> offsets{0.0, 1.0, 2.0};
    double lag = 1.0;
    std::vector<double> levels{0.5, 1.0, 2.0, 4.0};
    // kernel-check
    std::size_t time_samples = 12;
    std::size_t space_samples = 24;
    std::size_t trials = 16;
    double hs_t0 = 1.0;
    double semigroup_tolerance = 1e-12;
    // smallness
    std::optional<double> s_delay, s_lambda1, s_trace, s_lipschitz;
};

struct ExperimentConfig {
    std::string kind;
    std::uint64_t seed = 0;
    std::string output = "out";
    std::size_t threads = 1;
    std::optional<ModelConfig> model;
    ExperimentParams params;

    double burn_in() const { return params.burn_in ? *params.burn_in : 5.0 / model->basis->lambda1() + model->delay; }
};

namespace detail {

/// Typed access to one JSON object; remembers consumed keys and accumulates violations.
class ConfigReader {
public:
    ConfigReader(const Json& obj, std::string path, std::vector<std::string>& errors)
        : obj_(obj), path_(std::move(path)), errors_(errors)
    {
        if (!obj_.is_object()) errors_.push_back(path_ + " must be an object");
    }

    bool has(const std::string& key)
    {
        seen_.insert(key);
        return obj_.is_object() && obj_.contains(key) && !obj_.at(key).is_null();
    }

    template <class T>
    void get(const std::string& key, T& out)
    {
        if (!has(key)) return;
        try {
            out = obj_.at(key).template get<T>();
        } catch (const std::exception&) {
            errors_.push_back(name(key) + " has the wrong type");
        }
    }

    template <class T>
    void get(const std::string& key, std::optional<T>& out)
    {
        if (!has(key)) return;
        T v{};
        get(key, v);
        out = v;
    }

    const Json& child(const std::string& key)
    {
        seen_.insert(key);
        return obj_.at(key);
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish()
    {
        if (!obj_.is_object()) return;
        for (const auto& [k, v] : obj_.items())
            if (!seen_.count(k)) errors_.push_back("unknown key " + name(k));
    }

private:
    const Json& obj_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

inline ScalarMap read_map(const Json& j, const std::string& path, std::vector<std::string>& errors)
{
    ConfigReader r(j, path, errors);
    std::string map = "constant";
    double gain = 0.0, offset = 0.0;
    r.get("map", map);
    r.get("gain", gain);
    r.get("offset", offset);
    r.finish();
    if (map == "constant") return ScalarMap::constant(offset);
    if (map == "linear") return ScalarMap::linear(gain, offset);
    if (map == "tanh") return ScalarMap::tanh(gain, offset);
    if (map == "sin") return ScalarMap::sin(gain, offset);
    errors.push_back(path + ".map must be one of constant, linear, tanh, sin (got " + map + ")");
    return ScalarMap::constant(0.0);
}

inline Json map_json(const ScalarMap& m)
{
    static const char* names[] = {"linear", "tanh", "sin", "constant"};
    return {{"map", names[static_cast<int>(m.kind)]}, {"gain", m.gain}, {"offset", m.offset}};
}

inline InitialConfig read_initial(const Json& j, const std::string& path, std::vector<std::string>& errors)
{
    ConfigReader r(j, path, errors);
    InitialConfig c;
    r.get("kind", c.kind);
    r.get("mode", c.mode);
    r.get("amplitude", c.amplitude);
    r.get("values", c.values);
    r.finish();
    if (c.kind != "zero" && c.kind != "mode" && c.kind != "coefficients")
        errors.push_back(path + ".kind must be zero, mode or coefficients (got " + c.kind + ")");
    return c;
}

inline void check_initial(const InitialConfig& c, const std::string& path, std::size_t modes, std::vector<std::string>& errors)
{
    if (c.kind == "mode" && (c.mode < 1 || c.mode > modes))
        errors.push_back(path + ".mode must lie in 1.." + std::to_string(modes) + " (got " + std::to_string(c.mode) + ")");
    if (c.kind == "coefficients" && c.values.size() > modes)
        errors.push_back(path + ".values has " + std::to_string(c.values.size()) + " entries for N = " + std::to_string(modes));
}

inline ModelConfig read_model(const Json& j, std::vector<std::string>& errors)
{
    ConfigReader r(j, "model", errors);
    ModelConfig m;
    if (r.has("domain")) {
        ConfigReader d(r.child("domain"), "model.domain", errors);
        std::string kind = "bounded";
        d.get("kind", kind);
        if (kind == "bounded") {
            m.domain.kind = DomainKind::BoundedDirichlet;
        } else if (kind == "whole_line") {
            m.domain.kind = DomainKind::WholeLineWeighted;
        } else {
            errors.push_back("model.domain.kind must be bounded or whole_line (got " + kind + ")");
        }
        d.get("length", m.domain.length);
        d.get("radius", m.domain.truncation_radius);
        d.get("grid_points", m.domain.grid_points);
        d.get("r", m.domain.weight_exponent);
        d.get("r_bar", m.domain.compare_weight_exponent);
        d.finish();
    }
    r.get("modes", m.modes);
    r.get("spectrum", m.spectrum);
    r.get("delay", m.delay);
    r.get("dt", m.dt);
    if (r.has("noise")) {
        ConfigReader n(r.child("noise"), "model.noise", errors);
        n.get("kind", m.noise_kind);
        n.get("modes", m.noise_modes);
        n.get("ratio", m.noise_ratio);
        n.get("scale", m.noise_scale);
        n.get("power", m.noise_power);
        n.get("coefficients", m.noise_coefficients);
        n.finish();
    }
    if (r.has("nonlinearity")) {
        ConfigReader n(r.child("nonlinearity"), "model.nonlinearity", errors);
        std::string kind = "zero", coupling = "grid";
        n.get("kind", kind);
        ScalarMap f = ScalarMap::constant(0.0), sigma = ScalarMap::constant(0.0);
        if (n.has("f")) f = read_map(n.child("f"), "model.nonlinearity.f", errors);
        if (n.has("sigma")) sigma = read_map(n.child("sigma"), "model.nonlinearity.sigma", errors);
        std::optional<double> clip;
        n.get("sigma_clip", clip);
        n.get("coupling", coupling);
        n.finish();
        if (kind == "zero") {
            m.nonlinearity = NonlinearitySpec::zero();
        } else if (kind == "integral") {
            m.nonlinearity = NonlinearitySpec::integral(f, sigma, clip);
        } else if (kind == "point_delay") {
            m.nonlinearity = NonlinearitySpec::point_delay(f, sigma);
            m.nonlinearity.sigma_clip = clip;
        } else {
            errors.push_back("model.nonlinearity.kind must be zero, integral or point_delay (got " + kind + ")");
        }
        if (coupling == "diagonal") m.nonlinearity.coupling = NoiseCoupling::Diagonal;
        else if (coupling != "grid") errors.push_back("model.nonlinearity.coupling must be grid or diagonal (got " + coupling + ")");
    }
    if (r.has("initial")) m.initial = read_initial(r.child("initial"), "model.initial", errors);
    r.finish();
    return m;
}

/// Builds basis and noise and collects every model-level violation.
inline void validate_model(ModelConfig& m, bool stepping, std::vector<std::string>& errors)
{
    const auto domain_errors = m.domain.violations();
    errors.insert(errors.end(), domain_errors.begin(), domain_errors.end());
    if (!domain_errors.empty()) return;
    try {
        m.basis = build_basis(m.domain, m.modes, m.spectrum);
    } catch (const InvalidArgument& e) {
        errors.push_back(std::string("model: ") + e.what());
        return;
    }
    if (!stepping) return;
    if (!m.domain.bounded_domain()) {
        errors.push_back("time stepping requires a bounded domain; whole_line is only available to kernel-check");
        return;
    }
    try {
        (void)delay_intervals(m.delay, m.dt);
    } catch (const InvalidArgument& e) {
        errors.push_back(std::string("model: ") + e.what());
    }
    try {
        if (m.noise_kind == "geometric") m.noise = QWienerSpec::geometric(m.basis, m.noise_modes, m.noise_ratio, m.noise_scale);
        else if (m.noise_kind == "polynomial") m.noise = QWienerSpec::polynomial(m.basis, m.noise_modes, m.noise_power, m.noise_scale);
        else if (m.noise_kind == "explicit") m.noise = QWienerSpec(m.basis, m.noise_coefficients);
        else if (m.noise_kind != "none")
            errors.push_back("model.noise.kind must be none, geometric, polynomial or explicit (got " + m.noise_kind + ")");
    } catch (const InvalidArgument& e) {
        errors.push_back(std::string("model.noise: ") + e.what());
    }
    if (m.nonlinearity.sigma_clip && !(*m.nonlinearity.sigma_clip > 0)) errors.push_back("model.nonlinearity.sigma_clip must be positive");
    check_initial(m.initial, "model.initial", m.basis->mode_count(), errors);
}

} // namespace detail

/// Parses and validates a configuration document for experiment `kind`.
inline ExperimentConfig parse_config_json(const Json& root, const std::string& kind)
{
    std::vector<std::string> errors;
    ExperimentConfig c;
    c.kind = kind;
    const auto& kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) errors.push_back("unknown experiment kind " + kind);

    detail::ConfigReader top(root, "", errors);
    top.get("seed", c.seed);
    top.get("output", c.output);
    top.get("threads", c.threads);
    if (top.has("model")) c.model = detail::read_model(top.child("model"), errors);

    auto& p = c.params;
    if (top.has("experiment")) {
        detail::ConfigReader e(top.child("experiment"), "experiment", errors);
        if (e.has("kind")) {
            std::string k;
            e.get("kind", k);
            if (k != kind) errors.push_back("experiment.kind " + k + " does not match the requested kind " + kind);
        }
        e.get("T", p.horizon);
        e.get("ensemble", p.ensemble);
        e.get("burn_in", p.burn_in);
        e.get("record_every", p.record_every);
        e.get("moment_power", p.moment_power);
        e.get("moment_check", p.moment_check);
        e.get("ratio_threshold", p.ratio_threshold);
        e.get("tol", p.tol);
        e.get("max_window", p.max_window);
        e.get("max_iterations", p.max_iterations);
        e.get("stall_limit", p.stall_limit);
        e.get("lookback", p.lookback);
        e.get("forward", p.forward);
        e.get("doubling_tolerance", p.doubling_tolerance);
        if (e.has("initial2")) p.initial2 = detail::read_initial(e.child("initial2"), "experiment.initial2", errors);
        e.get("observable_modes", p.observable_modes);
        e.get("z_threshold", p.z_threshold);
        e.get("times", p.times);
        e.get("offsets", p.offsets);
        e.get("lag", p.lag);
        e.get("levels", p.levels);
        e.get("time_samples", p.time_samples);
        e.get("space_samples", p.space_samples);
        e.get("trials", p.trials);
        e.get("hs_t0", p.hs_t0);
        e.get("semigroup_tolerance", p.semigroup_tolerance);
        e.get("h", p.s_delay);
        e.get("lambda1", p.s_lambda1);
        e.get("a", p.s_trace);
        e.get("L", p.s_lipschitz);
        e.finish();
    }
    top.finish();

    if (c.threads < 1) errors.push_back("threads must be >= 1");
    const bool explicit_smallness = p.s_delay && p.s_lambda1 && p.s_trace && p.s_lipschitz;
    if (!c.model && !(kind == "smallness" && explicit_smallness))
        errors.push_back("model block is required for kind " + kind);
    if (c.model) detail::validate_model(*c.model, stepping_kind(kind), errors);

    if (!(p.horizon > 0)) errors.push_back("experiment.T must be positive");
    if (p.ensemble < 1) errors.push_back("experiment.ensemble must be >= 1");
    if (p.record_every < 1) errors.push_back("experiment.record_every must be >= 1");
    if (p.moment_power != 2 && p.moment_power != 4) errors.push_back("experiment.moment_power must be 2 or 4");
    if (!(p.tol > 0)) errors.push_back("experiment.tol must be positive");
    if (!(p.z_threshold > 0)) errors.push_back("experiment.z_threshold must be positive");
    if (c.model && c.model->basis && stepping_kind(kind) && errors.empty()) {
        const double dt = c.model->dt;
        auto multiple = [&](double t, const std::string& what) {
            try {
                (void)step_count(t, dt);
            } catch (const InvalidArgument&) {
                errors.push_back(what + " = " + std::to_string(t) + " is not a multiple of dt = " + std::to_string(dt));
            }
        };
        multiple(p.horizon, "experiment.T");
        if (kind == "picard" && p.max_window < dt) errors.push_back("experiment.max_window must be >= dt");
        if (kind == "stationary") {
            multiple(p.lookback, "experiment.lookback");
            multiple(p.forward, "experiment.forward");
        }
        if (kind == "attractivity") {
            detail::check_initial(p.initial2, "experiment.initial2", c.model->basis->mode_count(), errors);
            if (!(p.horizon > c.model->delay)) errors.push_back("experiment.T must exceed the delay h for the attractivity fit");
        }
        if (kind == "invariant" || kind == "homogeneity") {
            if (p.ensemble < 2) errors.push_back("experiment.ensemble must be >= 2 for " + kind);
            if (p.observable_modes > c.model->basis->mode_count())
                errors.push_back("experiment.observable_modes exceeds N = " + std::to_string(c.model->basis->mode_count()));
        }
        if (kind == "invariant") {
            if (p.times.empty()) p.times = {2.0 * c.burn_in(), 4.0 * c.burn_in()};
            if (p.times.size() != 2) errors.push_back("experiment.times must hold two horizons");
            for (double t : p.times) {
                multiple(t, "experiment.times entry");
                if (!(t > c.burn_in())) errors.push_back("experiment.times entry " + std::to_string(t) + " must exceed burn_in " + std::to_string(c.burn_in()));
            }
        }
        if (kind == "homogeneity") {
            if (p.offsets.size() < 2) errors.push_back("experiment.offsets needs at least two entries");
            for (double s : p.offsets) multiple(s, "experiment.offsets entry");
            multiple(p.lag, "experiment.lag");
        }
        if (kind == "simulate" && p.moment_check && (!c.model->nonlinearity.f_bounded() || !c.model->nonlinearity.sigma_bounded()))
            errors.push_back("moment_check requires bounded f and a bounded or clipped sigma");
    }
    if (kind == "kernel-check" && c.model && c.model->basis && p.hs_t0 < 2.0 * c.model->delay)
        errors.push_back("experiment.hs_t0 = " + std::to_string(p.hs_t0) + " must be >= 2h = " + std::to_string(2.0 * c.model->delay));

    if (!errors.empty()) throw ConfigError(kExitConfig, std::move(errors));
    return c;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path, const std::string& kind)
{
    std::ifstream in(path);
    if (!in) throw ConfigError(kExitMissingFile, {"cannot open config file " + path.string()});
    Json root;
    try {
        root = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(kExitMalformed, {"malformed JSON in " + path.string() + ": " + e.what()});
    }
    return parse_config_json(root, kind);
}

/// Resolved configuration with defaults filled in; `threads` is excluded because
/// results do not depend on it.
inline Json config_echo(const ExperimentConfig& c)
{
    Json j;
    j["kind"] = c.kind;
    j["seed"] = c.seed;
    if (c.model) {
        const auto& m = *c.model;
        Json d;
        if (m.domain.bounded_domain()) {
            d = {{"kind", "bounded"}, {"length", m.domain.length}, {"grid_points", m.domain.grid_points}};
        } else {
            d = {{"kind", "whole_line"},
                 {"radius", m.domain.truncation_radius},
                 {"grid_points", m.domain.grid_points},
                 {"r", m.domain.weight_exponent},
                 {"r_bar", m.domain.compare_weight_exponent}};
        }
        Json mj;
        mj["domain"] = d;
        mj["modes"] = m.modes;
        if (m.basis && m.basis->spectral()) mj["spectrum"] = std::vector<double>(m.basis->eigenvalues().begin(), m.basis->eigenvalues().end());
        mj["delay"] = m.delay;
        mj["dt"] = m.dt;
        mj["noise"] = {{"kind", m.noise_kind},
                       {"coefficients", std::vector<double>(m.noise.coefficients().begin(), m.noise.coefficients().end())},
                       {"trace", m.noise.basis_ptr() ? m.noise.trace() : 0.0}};
        static const char* kinds[] = {"zero", "integral", "point_delay", "custom"};
        const auto& n = m.nonlinearity;
        mj["nonlinearity"] = {{"kind", kinds[static_cast<int>(n.kind)]},
                              {"f", detail::map_json(n.f)},
                              {"sigma", detail::map_json(n.sigma)},
                              {"sigma_clip", n.sigma_clip ? Json(*n.sigma_clip) : Json(nullptr)},
                              {"coupling", n.coupling == NoiseCoupling::Diagonal ? "diagonal" : "grid"}};
        mj["initial"] = m.initial.to_json();
        j["model"] = std::move(mj);
    }
    const auto& p = c.params;
    Json e;
    e["T"] = p.horizon;
    e["ensemble"] = p.ensemble;
    if (c.model && c.model->basis && c.model->basis->spectral()) e["burn_in"] = c.burn_in();
    e["record_every"] = p.record_every;
    e["moment_power"] = p.moment_power;
    e["moment_check"] = p.moment_check;
    e["ratio_threshold"] = p.ratio_threshold;
    e["tol"] = p.tol;
    e["max_window"] = p.max_window;
    e["max_iterations"] = p.max_iterations;
    e["stall_limit"] = p.stall_limit;
    e["lookback"] = p.lookback;
    e["forward"] = p.forward;
    e["doubling_tolerance"] = p.doubling_tolerance;
    e["initial2"] = p.initial2.to_json();
    e["observable_modes"] = p.observable_modes;
    e["z_threshold"] = p.z_threshold;
    e["times"] = p.times;
    e["offsets"] = p.offsets;
    e["lag"] = p.lag;
    e["levels"] = p.levels;
    e["time_samples"] = p.time_samples;
    e["space_samples"] = p.space_samples;
    e["trials"] = p.trials;
    e["hs_t0"] = p.hs_t0;
    e["semigroup_tolerance"] = p.semigroup_tolerance;
    auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    e["h"] = opt(p.s_delay);
    e["lambda1"] = opt(p.s_lambda1);
    e["a"] = opt(p.s_trace);
    e["L"] = opt(p.s_lipschitz);
    j["experiment"] = std::move(e);
    return j;
}

} // namespace sfde
