#pragma once

// Delay nonlinearities f(u_t), sigma(u_t), the exponential-Euler mild-solution
// stepper, trajectory runners and moment tracking.
//
// One step of length dt updates mode k as
//   u_k <- e^{-lambda_k dt} u_k + (1 - e^{-lambda_k dt}) / lambda_k * f_k(u_t) + [sigma(u_t) Z]_k
// where Z is the exact stochastic convolution increment of the truncated
// Q-Wiener process and sigma acts as a left-endpoint multiplier.

#include <sfde/errors.hpp>
#include <sfde/parallel.hpp>
#include <sfde/report.hpp>
#include <sfde/rng.hpp>
#include <sfde/semigroup_kernel.hpp>
#include <sfde/spectral_domain.hpp>
#include <sfde/stochastic_driver.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace sfde {

enum class ScalarMapKind { Identity, Tanh, Sin, Constant };

/// Scalar primitive v -> offset + gain * base(v); `Constant` ignores v.
struct ScalarMap {
    ScalarMapKind kind = ScalarMapKind::Constant;
    double gain = 0.0;
    double offset = 0.0;

    static ScalarMap constant(double value) { return {ScalarMapKind::Constant, 0.0, value}; }
    static ScalarMap linear(double gain, double offset = 0.0) { return {ScalarMapKind::Identity, gain, offset}; }
    static ScalarMap tanh(double gain, double offset = 0.0) { return {ScalarMapKind::Tanh, gain, offset}; }
    static ScalarMap sin(double gain, double offset = 0.0) { return {ScalarMapKind::Sin, gain, offset}; }

    double operator()(double v) const noexcept
    {
        switch (kind) {
        case ScalarMapKind::Identity: return offset + gain * v;
        case ScalarMapKind::Tanh: return offset + gain * std::tanh(v);
        case ScalarMapKind::Sin: return offset + gain * std::sin(v);
        case ScalarMapKind::Constant: break;
        }
        return offset;
    }

    double lipschitz() const noexcept { return kind == ScalarMapKind::Constant ? 0.0 : std::abs(gain); }
    bool constant_valued() const noexcept { return kind == ScalarMapKind::Constant || gain == 0.0; }
    bool bounded() const noexcept { return kind != ScalarMapKind::Identity || gain == 0.0; }
    double sup_abs() const noexcept
    {
        if (!bounded()) return std::numeric_limits<double>::infinity();
        return std::abs(offset) + (kind == ScalarMapKind::Constant ? 0.0 : std::abs(gain));
    }
    bool is_zero() const noexcept { return constant_valued() && offset == 0.0; }
};

enum class NonlinearityKind { Zero, IntegralLipschitz, PointDelay, Custom };

/// How sigma(u_t) acts on the noise increment.
enum class NoiseCoupling {
    GridMultiplier, // pointwise product on the grid, projected back to modes
    Diagonal        // mode k scaled by sigma-bar of the k-th delay coefficient
};

struct NonlinearitySpec {
    NonlinearityKind kind = NonlinearityKind::Zero;
    ScalarMap f = ScalarMap::constant(0.0);
    ScalarMap sigma = ScalarMap::constant(0.0);
    std::optional<double> sigma_clip;
    NoiseCoupling coupling = NoiseCoupling::GridMultiplier;
    std::function<Field(const DelaySegment&)> custom_f;
    std::function<Field(const DelaySegment&)> custom_sigma;
    std::optional<double> declared_lipschitz;

    static NonlinearitySpec zero() { return {}; }

    /// f[phi] = f-bar(int_{-h}^0 phi(theta) dtheta) and likewise for sigma.
    static NonlinearitySpec integral(ScalarMap f, ScalarMap sigma, std::optional<double> clip = std::nullopt)
    {
        NonlinearitySpec n;
        n.kind = NonlinearityKind::IntegralLipschitz;
        n.f = f;
        n.sigma = sigma;
        n.sigma_clip = clip;
        return n;
    }

    /// f[phi] = f-bar(phi(-h)).
    static NonlinearitySpec point_delay(ScalarMap f, ScalarMap sigma = ScalarMap::constant(0.0))
    {
        NonlinearitySpec n;
        n.kind = NonlinearityKind::PointDelay;
        n.f = f;
        n.sigma = sigma;
        return n;
    }

    static NonlinearitySpec custom(std::function<Field(const DelaySegment&)> f, std::function<Field(const DelaySegment&)> sigma,
                                   double lipschitz)
    {
        NonlinearitySpec n;
        n.kind = NonlinearityKind::Custom;
        n.custom_f = std::move(f);
        n.custom_sigma = std::move(sigma);
        n.declared_lipschitz = lipschitz;
        return n;
    }

    double clip(double v) const noexcept { return sigma_clip ? std::clamp(v, -*sigma_clip, *sigma_clip) : v; }

    /// L in ||f(phi1)-f(phi2)|| + ||sigma(phi1)-sigma(phi2)|| <= L ||phi1-phi2||_B1.
    /// The integral form gives (L_f + L_sigma) sqrt(h) by Cauchy-Schwarz.
    double lipschitz(double delay) const
    {
        if (declared_lipschitz) return *declared_lipschitz;
        switch (kind) {
        case NonlinearityKind::Zero: return 0.0;
        case NonlinearityKind::IntegralLipschitz: return (f.lipschitz() + sigma.lipschitz()) * std::sqrt(delay);
        case NonlinearityKind::PointDelay: return f.lipschitz() + sigma.lipschitz();
        case NonlinearityKind::Custom: break;
        }
        throw InvalidArgument("custom nonlinearity needs a declared Lipschitz constant");
    }

    bool has_noise_term() const noexcept
    {
        if (kind == NonlinearityKind::Zero) return false;
        if (kind == NonlinearityKind::Custom) return static_cast<bool>(custom_sigma);
        return !sigma.is_zero();
    }

    /// sigma does not depend on the state.
    bool additive() const noexcept { return kind != NonlinearityKind::Custom && sigma.constant_valued(); }

    bool f_bounded() const noexcept { return kind == NonlinearityKind::Zero || (kind != NonlinearityKind::Custom && f.bounded()); }
    bool sigma_bounded() const noexcept
    {
        return kind == NonlinearityKind::Zero || sigma_clip.has_value() || (kind != NonlinearityKind::Custom && sigma.bounded());
    }
};

/// A read-only delay argument: node(0) is theta = -h, node(M) is theta = 0.
template <class S>
concept SegmentLike = requires(const S& s, std::size_t j) {
    { s.node_count() } -> std::convertible_to<std::size_t>;
    { s.node(j) } -> std::convertible_to<const Field&>;
    { s.trapezoid_weight(j) } -> std::convertible_to<double>;
    { s.delay() } -> std::convertible_to<double>;
    { s.dt() } -> std::convertible_to<double>;
};

namespace detail {

template <SegmentLike S>
DelaySegment materialize(const S& seg)
{
    if constexpr (std::same_as<S, DelaySegment>) {
        return seg;
    } else {
        std::vector<Field> nodes;
        nodes.reserve(seg.node_count());
        for (std::size_t j = 0; j < seg.node_count(); ++j) nodes.push_back(seg.node(j));
        return DelaySegment(std::move(nodes), seg.delay(), seg.dt());
    }
}

/// Coefficients fed to the scalar maps: trapezoid theta-integral or the theta = -h node.
template <SegmentLike S>
std::vector<double> delay_argument(const NonlinearitySpec& n, const S& seg)
{
    if (n.kind == NonlinearityKind::PointDelay) {
        const auto v = seg.node(0).values();
        return {v.begin(), v.end()};
    }
    std::vector<double> acc(seg.node(0).size(), 0.0);
    for (std::size_t j = 0; j < seg.node_count(); ++j) {
        const double w = seg.trapezoid_weight(j);
        const auto v = seg.node(j).values();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += w * v[k];
    }
    return acc;
}

inline void require_finite(const std::vector<double>& v, const char* what)
{
    for (double x : v)
        if (!std::isfinite(x)) throw NumericalAbort(std::string("non-finite value of ") + what);
}

} // namespace detail

/// f(u_t) in B0 (modes).
template <SegmentLike S>
Field eval_f(const NonlinearitySpec& n, const S& seg)
{
    const BasisPtr& basis = seg.node(0).basis_ptr();
    switch (n.kind) {
    case NonlinearityKind::Zero: return Field::zero(basis);
    case NonlinearityKind::Custom: return n.custom_f ? n.custom_f(detail::materialize(seg)) : Field::zero(basis);
    default: break;
    }
    auto grid = basis->to_grid(detail::delay_argument(n, seg));
    for (auto& g : grid) g = n.f(g);
    detail::require_finite(grid, "f");
    return Field(basis, basis->to_modes(grid));
}

/// sigma(u_t) as multiplier values on the grid (GridMultiplier coupling), clipped at sigma_0.
template <SegmentLike S>
std::vector<double> eval_sigma_grid(const NonlinearitySpec& n, const S& seg)
{
    const BasisPtr& basis = seg.node(0).basis_ptr();
    switch (n.kind) {
    case NonlinearityKind::Zero: return std::vector<double>(basis->grid_size(), 0.0);
    case NonlinearityKind::Custom:
        if (!n.custom_sigma) return std::vector<double>(basis->grid_size(), 0.0);
        return n.custom_sigma(detail::materialize(seg)).grid_values();
    default: break;
    }
    if (n.sigma.constant_valued()) return std::vector<double>(basis->grid_size(), n.clip(n.sigma(0.0)));
    auto grid = basis->to_grid(detail::delay_argument(n, seg));
    for (auto& g : grid) g = n.clip(n.sigma(g));
    detail::require_finite(grid, "sigma");
    return grid;
}

/// sigma(u_t) in B0: the projected multiplier, or the per-mode factors for diagonal coupling.
template <SegmentLike S>
Field eval_sigma(const NonlinearitySpec& n, const S& seg)
{
    const BasisPtr& basis = seg.node(0).basis_ptr();
    if (n.kind == NonlinearityKind::Custom)
        return n.custom_sigma ? n.custom_sigma(detail::materialize(seg)) : Field::zero(basis);
    if (n.kind != NonlinearityKind::Zero && n.coupling == NoiseCoupling::Diagonal) {
        auto v = detail::delay_argument(n, seg);
        for (auto& c : v) c = n.clip(n.sigma(c));
        detail::require_finite(v, "sigma");
        return Field(basis, std::move(v));
    }
    return Field(basis, basis->to_modes(eval_sigma_grid(n, seg)));
}

struct ModelSpec {
    BasisPtr basis;
    QWienerSpec noise;
    NonlinearitySpec nonlinearity;
    double delay = 1.0;
    double dt = 0.01;

    std::vector<std::string> violations() const
    {
        std::vector<std::string> out;
        if (!basis) {
            out.push_back("model has no basis");
            return out;
        }
        if (!basis->spectral()) out.push_back("time stepping requires a bounded domain (whole-line fields are not stepped)");
        if (noise.basis_ptr() && noise.basis_ptr() != basis) out.push_back("noise is defined on a different basis");
        try {
            (void)delay_intervals(delay, dt);
        } catch (const InvalidArgument& e) {
            out.push_back(e.what());
        }
        if (nonlinearity.sigma_clip && !(*nonlinearity.sigma_clip > 0)) out.push_back("sigma clip level must be positive");
        if (nonlinearity.kind == NonlinearityKind::Custom && !nonlinearity.declared_lipschitz)
            out.push_back("custom nonlinearity needs a declared Lipschitz constant");
        return out;
    }

    void validate() const
    {
        auto v = violations();
        if (!v.empty()) throw InvalidArgument("invalid model: " + detail::join_violations(v));
    }

    std::size_t intervals() const { return delay_intervals(delay, dt); }
    double lipschitz() const { return nonlinearity.lipschitz(delay); }
    double noise_trace() const { return noise.basis_ptr() ? noise.trace() : 0.0; }
    std::size_t noise_modes() const { return noise.basis_ptr() ? noise.modes() : 0; }
};

/// Exponential-Euler stepper with precomputed modal factors.
class Stepper {
public:
    explicit Stepper(ModelSpec model) : model_(std::move(model))
    {
        model_.validate();
        const auto lambda = model_.basis->eigenvalues();
        const std::size_t n = lambda.size();
        decay_.resize(n);
        drift_.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            decay_[k] = std::exp(-lambda[k] * model_.dt);
            drift_[k] = -std::expm1(-lambda[k] * model_.dt) / lambda[k];
        }
        const std::size_t j = model_.noise_modes();
        stddev_.resize(j);
        for (std::size_t k = 0; k < j; ++k) stddev_[k] = convolution_stddev(model_.noise.coefficient(k), lambda[k], model_.dt);
        const auto& nl = model_.nonlinearity;
        if (nl.kind == NonlinearityKind::IntegralLipschitz || nl.kind == NonlinearityKind::PointDelay) {
            if (nl.f.constant_valued()) {
                std::vector<double> g(model_.basis->grid_size(), nl.f(0.0));
                constant_f_ = model_.basis->to_modes(g);
            }
            if (nl.sigma.constant_valued()) constant_sigma_ = nl.clip(nl.sigma(0.0));
        }
    }

    const ModelSpec& model() const noexcept { return model_; }
    std::size_t noise_dim() const noexcept { return stddev_.size(); }
    bool stochastic() const noexcept { return model_.nonlinearity.has_noise_term() && !stddev_.empty() && !model_.noise.silent(); }

    /// Coefficients at t + dt from the head at t, the delay argument u_t and
    /// standard normals xi (one per noise mode).
    template <SegmentLike S>
    std::vector<double> next(std::span<const double> head, const S& delay_arg, std::span<const double> xi) const
    {
        const auto& nl = model_.nonlinearity;
        const BasisPtr& basis = model_.basis;
        const std::size_t n = decay_.size();
        std::vector<double> out(n);
        for (std::size_t k = 0; k < n; ++k) out[k] = decay_[k] * head[k];

        if (nl.kind != NonlinearityKind::Zero) {
            if (constant_f_) {
                for (std::size_t k = 0; k < n; ++k) out[k] += drift_[k] * (*constant_f_)[k];
            } else {
                const Field f = eval_f(nl, delay_arg);
                for (std::size_t k = 0; k < n; ++k) out[k] += drift_[k] * f[k];
            }
        }

        if (stochastic()) {
            const std::size_t j = stddev_.size();
            std::vector<double> z(n, 0.0);
            for (std::size_t k = 0; k < j; ++k) z[k] = stddev_[k] * xi[k];
            if (constant_sigma_) {
                for (std::size_t k = 0; k < j; ++k) out[k] += *constant_sigma_ * z[k];
            } else if (nl.kind != NonlinearityKind::Custom && nl.coupling == NoiseCoupling::Diagonal) {
                const Field s = eval_sigma(nl, delay_arg);
                for (std::size_t k = 0; k < j; ++k) out[k] += s[k] * z[k];
            } else {
                auto zg = basis->to_grid(z);
                const auto sg = eval_sigma_grid(nl, delay_arg);
                for (std::size_t i = 0; i < zg.size(); ++i) zg[i] *= sg[i];
                const auto c = basis->to_modes(zg);
                for (std::size_t k = 0; k < n; ++k) out[k] += c[k];
            }
        }
        return out;
    }

    /// Advances y(t) -> y(t + dt) in place; `time` is only used for diagnostics.
    void advance(FullState& state, std::span<const double> xi, double time) const
    {
        std::vector<double> next_values;
        try {
            next_values = next(state.head.values(), state.segment, xi);
        } catch (const NumericalAbort& e) {
            if (!std::isnan(e.time())) throw;
            throw NumericalAbort(std::string(e.what()) + " in mild-solution step", time + model_.dt);
        }
        for (double v : next_values)
            if (!std::isfinite(v)) throw NumericalAbort("non-finite coefficient in mild-solution step", time + model_.dt);
        Field head(model_.basis, std::move(next_values));
        state.segment.push(head);
        state.head = std::move(head);
    }

    /// Standard normals for global step n of a stream: variates n*J .. n*J + J - 1.
    void draw(const RngStream& rng, std::uint64_t step, std::vector<double>& xi) const
    {
        xi.resize(stddev_.size());
        const std::uint64_t base = step * stddev_.size();
        for (std::size_t k = 0; k < xi.size(); ++k) xi[k] = rng.normal_at(base + k);
    }

private:
    ModelSpec model_;
    std::vector<double> decay_;
    std::vector<double> drift_;
    std::vector<double> stddev_;
    std::optional<std::vector<double>> constant_f_;
    std::optional<double> constant_sigma_;
};

/// One mild-solution step. Consumes J normals from `rng` (its counter advances by J).
inline FullState step(const FullState& state, const ModelSpec& model, RngStream& rng)
{
    const Stepper stepper(model);
    detail::require(state.consistent(), "state head must equal the newest history node");
    detail::require(state.segment.intervals() == model.intervals(), "state history grid does not match the model");
    std::vector<double> xi(stepper.noise_dim());
    for (auto& x : xi) x = rng.next_normal();
    FullState out = state;
    stepper.advance(out, xi, 0.0);
    return out;
}

/// Number of steps covering [0, T]; T must be a multiple of dt.
inline std::size_t step_count(double horizon, double dt)
{
    detail::require(horizon >= 0 && std::isfinite(horizon), "horizon T must be nonnegative");
    const double ratio = horizon / dt;
    const double n = std::round(ratio);
    detail::require(std::abs(ratio - n) <= 1e-9 * std::max(1.0, n),
                    "horizon T = " + std::to_string(horizon) + " is not a multiple of dt = " + std::to_string(dt));
    return static_cast<std::size_t>(n);
}

/// Runs `steps` steps from `initial`, calling observe(step_index, state) at step 0
/// and after every step. Noise for local step i is the stream's global step start_step + i.
template <class Observe>
FullState simulate(const Stepper& stepper, FullState state, std::size_t steps, const RngStream& rng,
                   std::uint64_t start_step, Observe&& observe)
{
    detail::require(state.segment.intervals() == stepper.model().intervals(), "initial history grid does not match the model");
    if (!state.consistent()) state = FullState::from_initial(state.head, state.segment);
    std::vector<double> xi(stepper.noise_dim(), 0.0);
    observe(std::size_t{0}, static_cast<const FullState&>(state));
    const double dt = stepper.model().dt;
    for (std::size_t i = 0; i < steps; ++i) {
        if (stepper.stochastic()) stepper.draw(rng, start_step + i, xi);
        stepper.advance(state, xi, dt * static_cast<double>(i));
        observe(i + 1, static_cast<const FullState&>(state));
    }
    return state;
}

/// Sum accumulators of norms and modal moments on a fixed time grid.
/// Merging adds sums, so any partition of an ensemble yields the same estimates.
class TrajectoryStats {
public:
    TrajectoryStats() = default;
    TrajectoryStats(std::vector<double> times, std::size_t modes, int power = 2)
        : times_(std::move(times)), modes_(modes), power_(power)
    {
        detail::require(power == 2 || power == 4, "tracked moment power p must be 2 or 4");
        const std::size_t n = times_.size();
        count_.assign(n, 0);
        for (auto* v : {&b0_, &b0_sq_, &b1_, &b1_sq_, &b_, &b_sq_, &b0_pow_}) v->assign(n, 0.0);
        mode_mean_.assign(n * modes_, 0.0);
        mode_sq_.assign(n * modes_, 0.0);
    }

    void record(std::size_t i, const FullState& s)
    {
        const double b0 = norm_b0_sq(s.head);
        const double b1 = norm_b1_sq(s.segment);
        const double b = b0 + b1;
        ++count_[i];
        b0_[i] += b0;
        b0_sq_[i] += b0 * b0;
        b1_[i] += b1;
        b1_sq_[i] += b1 * b1;
        b_[i] += b;
        b_sq_[i] += b * b;
        b0_pow_[i] += power_ == 2 ? b0 : b0 * b0;
        const auto v = s.head.values();
        for (std::size_t k = 0; k < modes_; ++k) {
            mode_mean_[i * modes_ + k] += v[k];
            mode_sq_[i * modes_ + k] += v[k] * v[k];
        }
    }

    void merge(const TrajectoryStats& o)
    {
        if (times_.empty() && count_.empty()) {
            *this = o;
            return;
        }
        detail::require(o.times_ == times_ && o.modes_ == modes_ && o.power_ == power_, "merging stats on different grids");
        for (std::size_t i = 0; i < times_.size(); ++i) {
            count_[i] += o.count_[i];
            b0_[i] += o.b0_[i];
            b0_sq_[i] += o.b0_sq_[i];
            b1_[i] += o.b1_[i];
            b1_sq_[i] += o.b1_sq_[i];
            b_[i] += o.b_[i];
            b_sq_[i] += o.b_sq_[i];
            b0_pow_[i] += o.b0_pow_[i];
        }
        for (std::size_t i = 0; i < mode_mean_.size(); ++i) {
            mode_mean_[i] += o.mode_mean_[i];
            mode_sq_[i] += o.mode_sq_[i];
        }
    }

    const std::vector<double>& times() const noexcept { return times_; }
    std::size_t size() const noexcept { return times_.size(); }
    std::size_t modes() const noexcept { return modes_; }
    int power() const noexcept { return power_; }
    std::size_t ensemble_size() const noexcept { return count_.empty() ? 0 : count_.front(); }

    double mean_b0_sq(std::size_t i) const { return b0_[i] / n(i); }
    double mean_b1_sq(std::size_t i) const { return b1_[i] / n(i); }
    double mean_b_sq(std::size_t i) const { return b_[i] / n(i); }
    double mean_b0_pow(std::size_t i) const { return b0_pow_[i] / n(i); }
    double se_b_sq(std::size_t i) const { return standard_error(b_[i], b_sq_[i], count_[i]); }
    double se_b0_sq(std::size_t i) const { return standard_error(b0_[i], b0_sq_[i], count_[i]); }
    double mode_mean(std::size_t i, std::size_t k) const { return mode_mean_[i * modes_ + k] / n(i); }
    double mode_second(std::size_t i, std::size_t k) const { return mode_sq_[i * modes_ + k] / n(i); }

    /// Columns: t, E_norm_B0_sq, E_norm_B1_sq, E_norm_B_sq, [E_norm_B0_pow4,] then m<k>_mean, m<k>_sq per mode.
    std::string to_csv() const
    {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "t,E_norm_B0_sq,E_norm_B1_sq,E_norm_B_sq";
        if (power_ == 4) os << ",E_norm_B0_pow4";
        for (std::size_t k = 0; k < modes_; ++k) os << ",m" << (k + 1) << "_mean,m" << (k + 1) << "_sq";
        os << '\n';
        for (std::size_t i = 0; i < times_.size(); ++i) {
            os << times_[i] << ',' << mean_b0_sq(i) << ',' << mean_b1_sq(i) << ',' << mean_b_sq(i);
            if (power_ == 4) os << ',' << mean_b0_pow(i);
            for (std::size_t k = 0; k < modes_; ++k) os << ',' << mode_mean(i, k) << ',' << mode_second(i, k);
            os << '\n';
        }
        return os.str();
    }

    Json summary() const
    {
        Json j;
        j["ensemble_size"] = ensemble_size();
        j["records"] = times_.size();
        if (times_.empty()) return j;
        std::size_t arg = 0;
        for (std::size_t i = 1; i < times_.size(); ++i)
            if (mean_b_sq(i) > mean_b_sq(arg)) arg = i;
        const std::size_t last = times_.size() - 1;
        j["t_final"] = times_[last];
        j["E_norm_B_sq_final"] = mean_b_sq(last);
        j["E_norm_B0_sq_final"] = mean_b0_sq(last);
        j["sup_E_norm_B_sq"] = mean_b_sq(arg);
        j["sup_time"] = times_[arg];
        return j;
    }

private:
    double n(std::size_t i) const
    {
        detail::require(count_[i] > 0, "no trajectories recorded");
        return static_cast<double>(count_[i]);
    }
    static double standard_error(double sum, double sumsq, std::size_t count)
    {
        if (count < 2) return 0.0;
        const double c = static_cast<double>(count);
        const double var = std::max(0.0, (sumsq - sum * sum / c) / (c - 1.0));
        return std::sqrt(var / c);
    }

    std::vector<double> times_;
    std::size_t modes_ = 0;
    int power_ = 2;
    std::vector<std::size_t> count_;
    std::vector<double> b0_, b0_sq_, b1_, b1_sq_, b_, b_sq_, b0_pow_;
    std::vector<double> mode_mean_, mode_sq_;
};

struct RunOptions {
    std::size_t record_every = 1;
    int moment_power = 2;
    std::uint64_t start_step = 0;
    std::size_t threads = 1;
};

/// Record indices 0, r, 2r, ... and always the final step.
inline std::vector<std::size_t> record_indices(std::size_t steps, std::size_t every)
{
    detail::require(every >= 1, "record_every must be >= 1");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i <= steps; i += every) idx.push_back(i);
    if (idx.back() != steps) idx.push_back(steps);
    return idx;
}

namespace detail {

inline TrajectoryStats make_stats(const ModelSpec& model, std::size_t steps, const RunOptions& opt)
{
    std::vector<double> times;
    for (std::size_t i : record_indices(steps, opt.record_every)) times.push_back(model.dt * static_cast<double>(i));
    return TrajectoryStats(std::move(times), model.basis->mode_count(), opt.moment_power);
}

inline void run_member(const Stepper& stepper, const FullState& initial, std::size_t steps, const RngStream& rng,
                       const RunOptions& opt, TrajectoryStats& stats)
{
    const auto idx = record_indices(steps, opt.record_every);
    std::size_t cursor = 0;
    simulate(stepper, initial, steps, rng, opt.start_step, [&](std::size_t i, const FullState& s) {
        if (cursor < idx.size() && idx[cursor] == i) stats.record(cursor++, s);
    });
}

} // namespace detail

/// A single trajectory on [0, T] with norms recorded every `record_every` steps.
inline TrajectoryStats run_trajectory(const ModelSpec& model, const FullState& initial, double horizon, const RngStream& rng,
                                      const RunOptions& opt = {})
{
    const Stepper stepper(model);
    const std::size_t steps = step_count(horizon, model.dt);
    auto stats = detail::make_stats(model, steps, opt);
    detail::run_member(stepper, initial, steps, rng, opt, stats);
    return stats;
}

/// Ensemble averages over members 0..n-1 of a stream family; independent of opt.threads.
inline TrajectoryStats run_ensemble(const ModelSpec& model, const FullState& initial, double horizon,
                                    const StreamFamily& family, std::size_t members, const RunOptions& opt = {},
                                    std::size_t first_member = 0)
{
    detail::require(members >= 1, "ensemble needs at least one member");
    const Stepper stepper(model);
    const std::size_t steps = step_count(horizon, model.dt);
    return ensemble_reduce<TrajectoryStats>(
        members, opt.threads, [&] { return detail::make_stats(model, steps, opt); },
        [&](std::size_t i, TrajectoryStats& acc) {
            detail::run_member(stepper, initial, steps, family.stream(first_member + i), opt, acc);
        },
        [](TrajectoryStats& a, const TrajectoryStats& b) { a.merge(b); });
}

/// Two solutions driven by the same noise path; returns ||y1 - y2||_B^2 at the record indices.
inline std::vector<double> paired_distance_series(const Stepper& stepper, FullState y1, FullState y2, std::size_t steps,
                                                  const std::vector<std::size_t>& idx, const RngStream& rng,
                                                  std::uint64_t start_step = 0)
{
    if (!y1.consistent()) y1 = FullState::from_initial(y1.head, y1.segment);
    if (!y2.consistent()) y2 = FullState::from_initial(y2.head, y2.segment);
    const double dt = stepper.model().dt;
    std::vector<double> out;
    out.reserve(idx.size());
    std::vector<double> xi(stepper.noise_dim(), 0.0);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i <= steps; ++i) {
        if (cursor < idx.size() && idx[cursor] == i) {
            out.push_back(distance_b_sq(y1, y2));
            ++cursor;
        }
        if (i == steps) break;
        if (stepper.stochastic()) stepper.draw(rng, start_step + i, xi);
        stepper.advance(y1, xi, dt * static_cast<double>(i));
        stepper.advance(y2, xi, dt * static_cast<double>(i));
    }
    return out;
}

struct LipschitzProbeReport {
    double estimate = 0.0;       // combined (f + sigma) ratio
    double estimate_f = 0.0;
    double estimate_sigma = 0.0;
    double declared = 0.0;
    std::size_t trials = 0;
    bool pass = false;

    CheckReport to_check() const
    {
        CheckReport r;
        r.check = "lipschitz_probe";
        r.samples = trials;
        r.worst_ratio = declared > 0 ? estimate / declared : (estimate > 0 ? std::numeric_limits<double>::infinity() : 0.0);
        r.constants = {{"L_declared", declared}, {"L_hat", estimate}, {"L_hat_f", estimate_f}, {"L_hat_sigma", estimate_sigma}};
        r.pass = pass;
        return r;
    }
};

using SegmentPairSampler = std::function<std::pair<DelaySegment, DelaySegment>(std::size_t)>;

/// Random history pairs with independent Gaussian mode coefficients at each node,
/// alternating between far-apart and nearby pairs.
inline SegmentPairSampler random_segment_pairs(BasisPtr basis, double delay, double dt, std::uint64_t seed, double scale = 1.0)
{
    return [=](std::size_t trial) {
        RngStream rng(seed, (std::uint64_t{kAuxiliaryTag} << 40) ^ (0x11F0000u + trial));
        const std::size_t n = basis->mode_count();
        const double amp = scale * (0.1 + 3.0 * rng.next_uniform());
        const double eps = (trial % 2 == 0) ? 1.0 : 1e-3;
        auto draw = [&](double s) {
            std::vector<double> v(n);
            for (auto& c : v) c = s * rng.next_normal();
            return Field(basis, std::move(v));
        };
        std::vector<Field> a, b;
        const std::size_t m = delay_intervals(delay, dt);
        const Field offset = draw(amp);
        for (std::size_t j = 0; j <= m; ++j) {
            a.push_back(offset + draw(0.3 * amp));
            b.push_back(a.back() + draw(eps * amp));
        }
        return std::make_pair(DelaySegment(std::move(a), delay, dt), DelaySegment(std::move(b), delay, dt));
    };
}

/// Empirical Lipschitz constant max ||F(phi1) - F(phi2)||_B0 / ||phi1 - phi2||_B1 with
/// F = (f, sigma); fails when it exceeds the declared L by more than 1e-6 relative.
inline LipschitzProbeReport lipschitz_probe(const NonlinearitySpec& n, const SegmentPairSampler& sampler, std::size_t trials)
{
    detail::require(trials >= 1, "probe needs at least one trial");
    LipschitzProbeReport rep;
    rep.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
        const auto [a, b] = sampler(t);
        double dist_sq = 0.0;
        for (std::size_t j = 0; j < a.node_count(); ++j) dist_sq += a.trapezoid_weight(j) * norm_b0_sq(a.node(j) - b.node(j));
        const double dist = std::sqrt(dist_sq);
        if (dist == 0.0) continue;
        const double df = norm_b0(eval_f(n, a) - eval_f(n, b));
        const double ds = norm_b0(eval_sigma(n, a) - eval_sigma(n, b));
        rep.estimate = std::max(rep.estimate, (df + ds) / dist);
        rep.estimate_f = std::max(rep.estimate_f, df / dist);
        rep.estimate_sigma = std::max(rep.estimate_sigma, ds / dist);
        if (t == 0) rep.declared = n.lipschitz(a.delay());
    }
    rep.pass = rep.estimate <= rep.declared * (1.0 + 1e-6) + 1e-15;
    return rep;
}

struct MomentBoundReport {
    double sup_mean_b_sq = 0.0;
    double sup_time = 0.0;
    double sup_std_error = 0.0;
    double initial_mean_b_sq = 0.0;
    double early_max = 0.0;
    double tail_max = 0.0;
    double tail_early_ratio = 0.0;
    double ratio_threshold = 1.2;
    std::size_t ensemble = 0;
    bool pass = false;

    CheckReport to_check() const
    {
        CheckReport r;
        r.check = "moment_bound";
        r.samples = ensemble;
        r.worst_ratio = tail_early_ratio;
        r.constants = {{"sup_E_norm_B_sq", sup_mean_b_sq}, {"sup_time", sup_time}, {"sup_std_error", sup_std_error},
                       {"initial_E_norm_B_sq", initial_mean_b_sq}, {"early_max", early_max}, {"tail_max", tail_max},
                       {"ratio_threshold", ratio_threshold}};
        r.pass = pass;
        return r;
    }
};

/// Boundedness check sup_t E||y(t)||_B^2 < infinity for bounded f and sigma:
/// compares the maximum over the second half of [0, T] with the first half.
inline MomentBoundReport moment_bound_experiment(const ModelSpec& model, const FullState& initial, std::size_t ensemble,
                                                 double horizon, const StreamFamily& family, const RunOptions& opt = {},
                                                 double ratio_threshold = 1.2, TrajectoryStats* stats_out = nullptr)
{
    const auto& nl = model.nonlinearity;
    std::vector<std::string> why;
    if (!nl.f_bounded()) why.push_back("f is not bounded by a fixed envelope");
    if (!nl.sigma_bounded()) why.push_back("sigma is not bounded (set a clip level sigma_0)");
    if (!why.empty()) throw InvalidArgument("moment bound hypotheses violated: " + detail::join_violations(why));

    const auto stats = run_ensemble(model, initial, horizon, family, ensemble, opt);
    MomentBoundReport rep;
    rep.ensemble = ensemble;
    rep.ratio_threshold = ratio_threshold;
    rep.initial_mean_b_sq = stats.mean_b_sq(0);
    const double half = 0.5 * horizon;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const double m = stats.mean_b_sq(i);
        if (m > rep.sup_mean_b_sq || i == 0) {
            rep.sup_mean_b_sq = m;
            rep.sup_time = stats.times()[i];
            rep.sup_std_error = stats.se_b_sq(i);
        }
        if (stats.times()[i] <= half) rep.early_max = std::max(rep.early_max, m);
        else rep.tail_max = std::max(rep.tail_max, m);
    }
    rep.tail_early_ratio = rep.early_max > 0 ? rep.tail_max / rep.early_max : (rep.tail_max > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    rep.pass = std::isfinite(rep.sup_mean_b_sq) && rep.tail_early_ratio <= ratio_threshold;
    if (stats_out) *stats_out = stats;
    return rep;
}

} // namespace sfde
