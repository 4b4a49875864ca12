#pragma once

// Constructive solution schemes:
//  * pathwise Picard iteration of the mild-solution map on successive windows
//    with frozen noise,
//  * successive approximations of the stationary solution started in the far
//    past (zero data at -T_back, two-sided noise),
//  * the explicit smallness conditions and the attractivity experiment.

#include <sfde/delay_dynamics.hpp>
#include <sfde/errors.hpp>
#include <sfde/parallel.hpp>
#include <sfde/report.hpp>
#include <sfde/rng.hpp>
#include <sfde/spectral_domain.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace sfde {

/// Pre-sampled standard normals for global steps [first, first + steps); frozen once built.
/// Step n >= 0 reads the forward family, n < 0 the backward family (reversed time).
class NoisePath {
public:
    NoisePath() = default;

    static NoisePath forward(const RngStream& rng, std::size_t steps, std::size_t dim, std::int64_t first_step = 0)
    {
        detail::require(first_step >= 0, "a one-sided path starts at a nonnegative step");
        NoisePath p(first_step, steps, dim);
        for (std::size_t i = 0; i < steps; ++i) {
            const auto n = static_cast<std::uint64_t>(first_step) + i;
            for (std::size_t k = 0; k < dim; ++k) p.xi_[i * dim + k] = rng.normal_at(n * dim + k);
        }
        return p;
    }

    static NoisePath two_sided(const TwoSidedFamilies& fam, std::uint64_t member, std::int64_t first_step, std::size_t steps,
                               std::size_t dim)
    {
        NoisePath p(first_step, steps, dim);
        const RngStream fwd = fam.forward.stream(member);
        const RngStream bwd = fam.backward.stream(member);
        for (std::size_t i = 0; i < steps; ++i) {
            const std::int64_t n = first_step + static_cast<std::int64_t>(i);
            for (std::size_t k = 0; k < dim; ++k) {
                p.xi_[i * dim + k] = n >= 0 ? fwd.normal_at(static_cast<std::uint64_t>(n) * dim + k)
                                            : bwd.normal_at(static_cast<std::uint64_t>(-n - 1) * dim + k);
            }
        }
        return p;
    }

    std::int64_t first_step() const noexcept { return first_; }
    std::int64_t end_step() const noexcept { return first_ + static_cast<std::int64_t>(steps_); }
    std::size_t dim() const noexcept { return dim_; }
    bool covers(std::int64_t from, std::int64_t to) const noexcept { return dim_ == 0 || (from >= first_ && to <= end_step()); }

    std::span<const double> at(std::int64_t step) const
    {
        if (dim_ == 0) return {};
        detail::require(step >= first_ && step < end_step(), "noise path does not cover step " + std::to_string(step));
        return std::span<const double>(xi_).subspan(static_cast<std::size_t>(step - first_) * dim_, dim_);
    }

private:
    NoisePath(std::int64_t first, std::size_t steps, std::size_t dim) : first_(first), steps_(steps), dim_(dim), xi_(steps * dim) {}

    std::int64_t first_ = 0;
    std::size_t steps_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> xi_;
};

/// Contiguous run of M+1 fields used as a delay argument.
class SpanSegmentView {
public:
    SpanSegmentView(std::span<const Field> nodes, double delay, double dt) : nodes_(nodes), delay_(delay), dt_(dt) {}
    std::size_t node_count() const noexcept { return nodes_.size(); }
    const Field& node(std::size_t j) const { return nodes_[j]; }
    double trapezoid_weight(std::size_t j) const noexcept { return (j == 0 || j + 1 == nodes_.size()) ? 0.5 * dt_ : dt_; }
    double delay() const noexcept { return delay_; }
    double dt() const noexcept { return dt_; }

private:
    std::span<const Field> nodes_;
    double delay_;
    double dt_;
};

/// A candidate path on the window [t_a, t_a + K dt] together with the history u_{t_a}.
/// nodes[0] is u(t_a) and equals history.newest().
struct PathApproximation {
    std::int64_t first_step = 0;
    double dt = 0.0;
    DelaySegment history;
    std::vector<Field> nodes;
    std::size_t iteration = 0;
    double distance = std::numeric_limits<double>::infinity();

    std::size_t steps() const noexcept { return nodes.empty() ? 0 : nodes.size() - 1; }
    double time(std::size_t m) const noexcept { return dt * static_cast<double>(first_step + static_cast<std::int64_t>(m)); }

    /// Constant extension of the head across the window.
    static PathApproximation constant(const DelaySegment& history, std::int64_t first_step, std::size_t steps)
    {
        return {first_step, history.dt(), history, std::vector<Field>(steps + 1, history.newest()), 0,
                std::numeric_limits<double>::infinity()};
    }
};

inline double sup_distance(const std::vector<Field>& a, const std::vector<Field>& b)
{
    detail::require(a.size() == b.size(), "paths have different lengths");
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, norm_b0(a[i] - b[i]));
    return d;
}

/// One application of the mild-solution map:
///   (Psi Phi)(t) = S(t - t_a) Phi(t_a) + int S(t - s) f(Phi_s) ds + int S(t - s) sigma(Phi_s) dW(s)
/// discretized on the step grid; delay arguments are read from the candidate.
inline PathApproximation picard_map(const Stepper& stepper, const PathApproximation& candidate, const NoisePath& noise)
{
    const ModelSpec& model = stepper.model();
    const std::size_t m = model.intervals();
    detail::require(std::abs(candidate.dt - model.dt) <= 1e-15 * model.dt, "candidate grid step differs from the model step");
    detail::require(candidate.history.intervals() == m, "candidate history grid does not match the delay");
    detail::require(!candidate.nodes.empty() && candidate.nodes.front() == candidate.history.newest(),
                    "candidate must start at the head of its history");
    const std::size_t k_steps = candidate.steps();
    detail::require(!stepper.stochastic() || noise.covers(candidate.first_step, candidate.first_step + static_cast<std::int64_t>(k_steps)),
                    "frozen noise does not cover the window");

    std::vector<Field> extended;
    extended.reserve(m + k_steps + 1);
    for (std::size_t j = 0; j <= m; ++j) extended.push_back(candidate.history.node(j));
    for (std::size_t i = 1; i <= k_steps; ++i) extended.push_back(candidate.nodes[i]);

    PathApproximation out{candidate.first_step, candidate.dt, candidate.history, {}, candidate.iteration + 1,
                          std::numeric_limits<double>::infinity()};
    out.nodes.reserve(k_steps + 1);
    out.nodes.push_back(candidate.nodes.front());
    const std::vector<double> no_noise(stepper.noise_dim(), 0.0);
    for (std::size_t i = 0; i < k_steps; ++i) {
        const SpanSegmentView seg(std::span<const Field>(extended).subspan(i, m + 1), model.delay, model.dt);
        const auto xi = stepper.stochastic() ? noise.at(candidate.first_step + static_cast<std::int64_t>(i))
                                             : std::span<const double>(no_noise);
        auto v = stepper.next(out.nodes.back().values(), seg, xi);
        for (double c : v)
            if (!std::isfinite(c)) throw NumericalAbort("non-finite coefficient in Picard map", out.time(i + 1));
        out.nodes.emplace_back(model.basis, std::move(v));
    }
    out.distance = sup_distance(out.nodes, candidate.nodes);
    return out;
}

inline PathApproximation picard_map(const ModelSpec& model, const PathApproximation& candidate, const NoisePath& noise)
{
    return picard_map(Stepper(model), candidate, noise);
}

struct PicardWindow {
    double t_start = 0.0;
    std::size_t steps = 0;
    std::size_t iterations = 0; // applications that changed the path
    std::size_t halvings = 0;
    std::vector<double> distances;
    std::vector<double> ratios;
    bool converged = false;
};

struct PicardOptions {
    std::size_t max_iterations = 200;
    std::size_t stall_limit = 3; // consecutive ratios >= 1 before halving
};

struct PicardResult {
    bool converged = false;
    std::string message;
    std::vector<Field> path; // u(n dt), n = 0..steps
    std::vector<PicardWindow> windows;

    double max_ratio() const
    {
        double r = 0.0;
        for (const auto& w : windows)
            for (double x : w.ratios) r = std::max(r, x);
        return r;
    }

    std::string history_csv() const
    {
        std::ostringstream os;
        os << std::setprecision(17) << "window,t_start,steps,iteration,distance,ratio\n";
        for (std::size_t w = 0; w < windows.size(); ++w) {
            const auto& win = windows[w];
            for (std::size_t i = 0; i < win.distances.size(); ++i) {
                os << w << ',' << win.t_start << ',' << win.steps << ',' << (i + 1) << ',' << win.distances[i] << ',';
                if (i > 0) os << win.ratios[i - 1];
                os << '\n';
            }
        }
        return os.str();
    }
};

/// Picard iteration on consecutive windows of at most `max_window` time units
/// until the sup-grid distance of successive iterates drops below `tol`. A window
/// whose distance ratio stays >= 1 for `stall_limit` iterations is halved.
inline PicardResult picard_solve(const ModelSpec& model, const FullState& initial, const NoisePath& noise, double horizon,
                                 double tol, double max_window, const PicardOptions& opt = {})
{
    detail::require(tol > 0, "tolerance must be positive");
    detail::require(max_window >= model.dt, "window must hold at least one step");
    const Stepper stepper(model);
    const std::size_t total = step_count(horizon, model.dt);
    std::size_t window_steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(max_window / model.dt + 1e-9)));

    PicardResult res;
    DelaySegment history = initial.segment;
    if (!(history.newest() == initial.head)) history.set_newest(initial.head);
    detail::require(history.intervals() == model.intervals(), "initial history grid does not match the model");
    res.path.push_back(initial.head);

    std::size_t pos = 0;
    while (pos < total) {
        std::size_t k = std::min(window_steps, total - pos);
        PicardWindow win;
        win.t_start = model.dt * static_cast<double>(pos);
        for (;;) {
            win.steps = k;
            win.distances.clear();
            win.ratios.clear();
            PathApproximation cand = PathApproximation::constant(history, static_cast<std::int64_t>(pos), k);
            std::size_t stalled = 0;
            bool ok = false;
            for (std::size_t it = 0; it < opt.max_iterations; ++it) {
                PathApproximation next = picard_map(stepper, cand, noise);
                const double d = next.distance;
                if (!win.distances.empty()) {
                    const double prev = win.distances.back();
                    const double ratio = prev > 0 ? d / prev : 0.0;
                    win.ratios.push_back(ratio);
                    stalled = ratio >= 1.0 ? stalled + 1 : 0;
                }
                win.distances.push_back(d);
                cand = std::move(next);
                if (d < tol) {
                    ok = true;
                    break;
                }
                if (stalled >= opt.stall_limit) break;
            }
            if (ok) {
                win.converged = true;
                win.iterations = win.distances.size() - 1;
                for (std::size_t i = 1; i < cand.nodes.size(); ++i) {
                    history.push(cand.nodes[i]);
                    res.path.push_back(cand.nodes[i]);
                }
                break;
            }
            if (k == 1) {
                res.windows.push_back(win);
                res.message = "no contraction even on a single-step window at t = " + std::to_string(win.t_start);
                return res;
            }
            k = std::max<std::size_t>(1, k / 2);
            window_steps = k;
            ++win.halvings;
        }
        res.windows.push_back(std::move(win));
        pos += k;
    }
    res.converged = true;
    res.message = "converged";
    return res;
}

/// Stepper path driven by a frozen noise path (the reference for picard_solve).
inline std::vector<Field> stepper_path(const ModelSpec& model, const FullState& initial, const NoisePath& noise, double horizon)
{
    const Stepper stepper(model);
    const std::size_t total = step_count(horizon, model.dt);
    FullState s = initial;
    if (!s.consistent()) s = FullState::from_initial(s.head, s.segment);
    std::vector<Field> path{s.head};
    const std::vector<double> no_noise(stepper.noise_dim(), 0.0);
    for (std::size_t i = 0; i < total; ++i) {
        const auto xi = stepper.stochastic() ? noise.at(static_cast<std::int64_t>(i)) : std::span<const double>(no_noise);
        stepper.advance(s, xi, model.dt * static_cast<double>(i));
        path.push_back(s.head);
    }
    return path;
}

struct SmallnessReport {
    double delay = 0.0, lambda1 = 0.0, trace = 0.0, lipschitz = 0.0;
    double iteration_value = 0.0;     // h L^2 (4/lambda1^2 + 2a/lambda1)
    bool iteration_holds = false;     // < 1
    double iteration_max_lipschitz = 0.0;
    double gamma0 = 0.0;              // (3 + 3h e^{lambda1 h}) (1/lambda1 + a)
    double attractivity_value = 0.0;  // gamma0 L^2
    bool attractivity_holds = false;  // < lambda1
    double attractivity_max_lipschitz = 0.0;
    double predicted_rate = 0.0;      // lambda1 - gamma0 L^2
    double proof_prefactor = 0.0;     // 3 e^{lambda1 h} h + 3

    Json to_json() const
    {
        Json j;
        j["inputs"] = {{"h", delay}, {"lambda1", lambda1}, {"a", trace}, {"L", lipschitz}};
        j["iteration"] = {{"value", iteration_value}, {"holds", iteration_holds}, {"L_threshold", iteration_max_lipschitz}};
        j["attractivity"] = {{"gamma0", gamma0},
                             {"value", attractivity_value},
                             {"holds", attractivity_holds},
                             {"L_threshold", attractivity_max_lipschitz},
                             {"gamma_pred", predicted_rate},
                             {"K_proof", proof_prefactor}};
        return j;
    }
};

/// Both smallness conditions by direct substitution. They are different
/// inequalities and are reported separately.
inline SmallnessReport smallness_check(double delay, double lambda1, double trace, double lipschitz)
{
    detail::require(delay > 0 && lambda1 > 0, "h and lambda1 must be positive");
    detail::require(trace >= 0 && lipschitz >= 0, "a and L must be nonnegative");
    SmallnessReport r;
    r.delay = delay;
    r.lambda1 = lambda1;
    r.trace = trace;
    r.lipschitz = lipschitz;
    const double iter_factor = delay * (4.0 / (lambda1 * lambda1) + 2.0 * trace / lambda1);
    r.iteration_value = iter_factor * lipschitz * lipschitz;
    r.iteration_holds = r.iteration_value < 1.0;
    r.iteration_max_lipschitz = 1.0 / std::sqrt(iter_factor);
    r.gamma0 = (3.0 + 3.0 * delay * std::exp(lambda1 * delay)) * (1.0 / lambda1 + trace);
    r.attractivity_value = r.gamma0 * lipschitz * lipschitz;
    r.attractivity_holds = r.attractivity_value < lambda1;
    r.attractivity_max_lipschitz = std::sqrt(lambda1 / r.gamma0);
    r.predicted_rate = lambda1 - r.attractivity_value;
    r.proof_prefactor = 3.0 * std::exp(lambda1 * delay) * delay + 3.0;
    return r;
}

inline SmallnessReport smallness_check(const ModelSpec& model)
{
    return smallness_check(model.delay, model.basis->lambda1(), model.noise_trace(), model.lipschitz());
}

struct StationaryOptions {
    std::size_t ensemble = 8;
    std::size_t max_iterations = 60;
    std::size_t threads = 1;
    std::size_t stall_limit = 3;
    bool check_doubling = true;
    double doubling_tolerance = 1e-3; // relative
};

struct StationaryResult {
    enum class Status { Converged, Refused, NotContracting };
    Status status = Status::Refused;
    std::string message;
    SmallnessReport smallness;
    std::vector<double> distances; // sup_t E||u^(n+1)(t) - u^(n)(t)||^2, n = 0, 1, ...
    std::vector<double> ratios;
    std::vector<double> times;     // grid on [0, T_forward]
    std::vector<Field> path;       // member 0 on [0, T_forward]
    std::vector<double> mean_sq_norm;
    double doubling_difference = 0.0;
    bool doubling_checked = false;
    bool doubling_ok = false;

    double max_ratio() const
    {
        double r = 0.0;
        for (double x : ratios) r = std::max(r, x);
        return r;
    }

    std::string history_csv() const
    {
        std::ostringstream os;
        os << std::setprecision(17) << "iteration,distance,ratio\n";
        for (std::size_t i = 0; i < distances.size(); ++i) {
            os << (i + 1) << ',' << distances[i] << ',';
            if (i > 0) os << ratios[i - 1];
            os << '\n';
        }
        return os.str();
    }
};

namespace detail {

struct SuccessiveRun {
    std::vector<std::vector<Field>> paths; // per member, nodes from -T_back - h
    std::vector<double> distances;
    std::vector<double> ratios;
    bool converged = false;
    std::size_t history = 0; // index of t = -T_back
};

inline SuccessiveRun successive_iterates(const Stepper& stepper, const TwoSidedFamilies& fam, std::size_t back_steps,
                                         std::size_t fwd_steps, double tol, const StationaryOptions& opt)
{
    const ModelSpec& model = stepper.model();
    const std::size_t m = model.intervals();
    const std::size_t total = back_steps + fwd_steps;
    const std::size_t nodes = m + total + 1;
    const std::size_t dim = stepper.noise_dim();
    const auto first = -static_cast<std::int64_t>(back_steps);

    std::vector<NoisePath> noise(opt.ensemble);
    parallel_for(opt.ensemble, opt.threads, [&](std::size_t i) {
        noise[i] = NoisePath::two_sided(fam, i, first, total, dim);
    });

    const Field zero = Field::zero(model.basis);
    SuccessiveRun run;
    run.history = m;
    run.paths.assign(opt.ensemble, std::vector<Field>(nodes, zero)); // u^(0) = 0
    const std::vector<double> no_noise(dim, 0.0);
    std::size_t stalled = 0;
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        std::vector<std::vector<Field>> next(opt.ensemble);
        std::vector<std::vector<double>> sq(opt.ensemble);
        parallel_for(opt.ensemble, opt.threads, [&](std::size_t e) {
            const auto& prev = run.paths[e];
            std::vector<Field> path(m + 1, zero);
            path.reserve(nodes);
            for (std::size_t s = 0; s < total; ++s) {
                const SpanSegmentView seg(std::span<const Field>(prev).subspan(s, m + 1), model.delay, model.dt);
                const auto xi = stepper.stochastic() ? noise[e].at(first + static_cast<std::int64_t>(s))
                                                     : std::span<const double>(no_noise);
                auto v = stepper.next(path.back().values(), seg, xi);
                for (double c : v)
                    if (!std::isfinite(c))
                        throw NumericalAbort("non-finite coefficient in successive approximation",
                                             model.dt * static_cast<double>(first + static_cast<std::int64_t>(s) + 1));
                path.emplace_back(model.basis, std::move(v));
            }
            std::vector<double> d(nodes);
            for (std::size_t i = 0; i < nodes; ++i) d[i] = norm_b0_sq(path[i] - prev[i]);
            sq[e] = std::move(d);
            next[e] = std::move(path);
        });
        double dist = 0.0;
        for (std::size_t i = 0; i < nodes; ++i) {
            double acc = 0.0;
            for (std::size_t e = 0; e < opt.ensemble; ++e) acc += sq[e][i];
            dist = std::max(dist, acc / static_cast<double>(opt.ensemble));
        }
        run.paths = std::move(next);
        if (!run.distances.empty()) {
            const double prev = run.distances.back();
            const double ratio = prev > 0 ? dist / prev : 0.0;
            run.ratios.push_back(ratio);
            stalled = ratio >= 1.0 ? stalled + 1 : 0;
        }
        run.distances.push_back(dist);
        if (std::sqrt(dist) < tol) {
            run.converged = true;
            break;
        }
        if (stalled >= opt.stall_limit) break;
    }
    return run;
}

} // namespace detail

/// Successive approximations u^(0) = 0,
///   du^(n+1) = (A u^(n+1) + f(u^(n)_t)) dt + sigma(u^(n)_t) dW,
/// each solved from zero data at -T_back on a frozen two-sided noise path.
/// Refused unless h L^2 (4/lambda1^2 + 2a/lambda1) < 1.
inline StationaryResult stationary_successive_approx(const ModelSpec& model, double back, double forward, double tol,
                                                     std::uint64_t seed, const StationaryOptions& opt = {})
{
    detail::require(tol > 0, "tolerance must be positive");
    detail::require(opt.ensemble >= 1, "ensemble must be >= 1");
    StationaryResult res;
    res.smallness = smallness_check(model);
    if (!res.smallness.iteration_holds) {
        res.status = StationaryResult::Status::Refused;
        res.message = "iteration smallness condition violated: h L^2 (4/lambda1^2 + 2a/lambda1) = " +
                      std::to_string(res.smallness.iteration_value) + " >= 1";
        return res;
    }
    const Stepper stepper(model);
    const auto fam = extend_two_sided(seed);
    const std::size_t back_steps = step_count(back, model.dt);
    const std::size_t fwd_steps = step_count(forward, model.dt);
    auto run = detail::successive_iterates(stepper, fam, back_steps, fwd_steps, tol, opt);
    res.distances = run.distances;
    res.ratios = run.ratios;
    if (!run.converged) {
        res.status = StationaryResult::Status::NotContracting;
        res.message = "successive approximations did not contract";
        return res;
    }

    const std::size_t origin = run.history + back_steps; // index of t = 0
    for (std::size_t i = 0; i <= fwd_steps; ++i) {
        res.times.push_back(model.dt * static_cast<double>(i));
        res.path.push_back(run.paths[0][origin + i]);
        double acc = 0.0;
        for (const auto& p : run.paths) acc += norm_b0_sq(p[origin + i]);
        res.mean_sq_norm.push_back(acc / static_cast<double>(run.paths.size()));
    }
    res.status = StationaryResult::Status::Converged;
    res.message = "converged";

    if (opt.check_doubling) {
        auto longer = detail::successive_iterates(stepper, fam, 2 * back_steps, fwd_steps, tol, opt);
        res.doubling_checked = true;
        if (!longer.converged) {
            res.doubling_ok = false;
            res.message = "doubled look-back run did not contract";
            return res;
        }
        const std::size_t origin2 = longer.history + 2 * back_steps;
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i <= fwd_steps; ++i) {
            double d = 0.0, s = 0.0;
            for (std::size_t e = 0; e < run.paths.size(); ++e) {
                d += norm_b0_sq(run.paths[e][origin + i] - longer.paths[e][origin2 + i]);
                s += norm_b0_sq(run.paths[e][origin + i]);
            }
            diff = std::max(diff, d);
            scale = std::max(scale, s);
        }
        res.doubling_difference = scale > 0 ? std::sqrt(diff / scale) : std::sqrt(diff);
        res.doubling_ok = res.doubling_difference <= opt.doubling_tolerance;
    }
    return res;
}

struct AttractivityReport {
    std::vector<double> times;
    std::vector<double> mean_diff_sq;  // E||y1(t) - y2(t)||_B^2
    std::vector<double> se_diff_sq;
    double initial_diff_sq = 0.0;
    double fit_start = 0.0;
    double gamma_hat = 0.0;
    double gamma_se = 0.0;
    double k_hat = 0.0;
    bool zero_difference = false;
    bool exploratory = false;
    SmallnessReport smallness;
    std::size_t ensemble = 0;
    bool pass = false;

    Json to_json() const
    {
        Json j;
        j["ensemble"] = ensemble;
        j["fit_window"] = {fit_start, times.empty() ? 0.0 : times.back()};
        j["gamma_hat"] = gamma_hat;
        j["gamma_se"] = gamma_se;
        j["gamma_pred"] = smallness.predicted_rate;
        j["K_hat"] = k_hat;
        j["K_proof"] = smallness.proof_prefactor;
        j["initial_E_diff_B_sq"] = initial_diff_sq;
        j["zero_difference"] = zero_difference;
        j["exploratory"] = exploratory;
        j["smallness"] = smallness.to_json();
        j["pass"] = pass;
        return j;
    }

    std::string series_csv() const
    {
        std::ostringstream os;
        os << std::setprecision(17) << "t,E_diff_B_sq,se\n";
        for (std::size_t i = 0; i < times.size(); ++i) os << times[i] << ',' << mean_diff_sq[i] << ',' << se_diff_sq[i] << '\n';
        return os.str();
    }
};

struct LinearFit {
    double slope = 0.0, intercept = 0.0, slope_se = 0.0;
};

inline LinearFit least_squares(std::span<const double> x, std::span<const double> y)
{
    detail::require(x.size() == y.size() && x.size() >= 2, "fit needs at least two points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (x.size() > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = y[i] - (f.intercept + f.slope * x[i]);
            rss += r * r;
        }
        f.slope_se = std::sqrt(rss / (n - 2.0) / sxx);
    }
    return f;
}

/// Runs pairs of solutions from two initial states on the same noise path per
/// member and fits log E||y1 - y2||_B^2 = log(K E0) - gamma t over t > h.
inline AttractivityReport attractivity_experiment(const ModelSpec& model, const FullState& first, const FullState& second,
                                                  double horizon, std::size_t ensemble, const StreamFamily& family,
                                                  const RunOptions& opt = {})
{
    detail::require(ensemble >= 1, "ensemble must be >= 1");
    detail::require(horizon > model.delay, "horizon must exceed the delay to leave a fit window");
    const Stepper stepper(model);
    const std::size_t steps = step_count(horizon, model.dt);
    const auto idx = record_indices(steps, opt.record_every);

    struct Acc {
        std::vector<double> sum, sumsq;
    };
    auto make = [&] { return Acc{std::vector<double>(idx.size(), 0.0), std::vector<double>(idx.size(), 0.0)}; };
    const Acc acc = ensemble_reduce<Acc>(
        ensemble, opt.threads, make,
        [&](std::size_t e, Acc& a) {
            const auto d = paired_distance_series(stepper, first, second, steps, idx, family.stream(e), opt.start_step);
            for (std::size_t c = 0; c < d.size(); ++c) {
                a.sum[c] += d[c];
                a.sumsq[c] += d[c] * d[c];
            }
        },
        [](Acc& a, const Acc& b) {
            for (std::size_t i = 0; i < a.sum.size(); ++i) {
                a.sum[i] += b.sum[i];
                a.sumsq[i] += b.sumsq[i];
            }
        });

    AttractivityReport rep;
    rep.ensemble = ensemble;
    rep.smallness = smallness_check(model);
    rep.exploratory = !rep.smallness.attractivity_holds;
    const double n = static_cast<double>(ensemble);
    for (std::size_t c = 0; c < idx.size(); ++c) {
        rep.times.push_back(model.dt * static_cast<double>(idx[c]));
        const double mean = acc.sum[c] / n;
        rep.mean_diff_sq.push_back(mean);
        const double var = ensemble > 1 ? std::max(0.0, (acc.sumsq[c] - acc.sum[c] * mean) / (n - 1.0)) : 0.0;
        rep.se_diff_sq.push_back(std::sqrt(var / n));
    }
    rep.initial_diff_sq = rep.mean_diff_sq.front();
    rep.fit_start = model.delay;

    std::vector<double> fx, fy;
    bool all_zero = true;
    for (std::size_t c = 0; c < rep.times.size(); ++c) {
        if (rep.mean_diff_sq[c] != 0.0) all_zero = false;
        if (rep.times[c] > model.delay + 0.5 * model.dt && rep.mean_diff_sq[c] > 0.0) {
            fx.push_back(rep.times[c]);
            fy.push_back(std::log(rep.mean_diff_sq[c]));
        }
    }
    if (all_zero) {
        rep.zero_difference = true;
        rep.gamma_hat = std::numeric_limits<double>::infinity();
        rep.pass = true;
        return rep;
    }
    detail::require(fx.size() >= 2, "fit window holds fewer than two positive records");
    const LinearFit fit = least_squares(fx, fy);
    rep.gamma_hat = -fit.slope;
    rep.gamma_se = fit.slope_se;
    rep.k_hat = rep.initial_diff_sq > 0 ? std::exp(fit.intercept) / rep.initial_diff_sq : 0.0;
    rep.pass = rep.exploratory || rep.gamma_hat + 2.0 * rep.gamma_se >= rep.smallness.predicted_rate;
    return rep;
}

} // namespace sfde
