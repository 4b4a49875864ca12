#pragma once

// The heat semigroup S(t), its kernel G(t, x, y), and empirical checks of the
// kernel and operator estimates the existence theory relies on.

#include <sfde/report.hpp>
#include <sfde/rng.hpp>
#include <sfde/spectral_domain.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace sfde {

/// Free-space heat kernel (4 pi t)^{-1/2} exp(-d^2 / 4t).
inline double gaussian_kernel(double t, double d) noexcept
{
    return std::exp(-d * d / (4.0 * t)) / std::sqrt(4.0 * std::numbers::pi * t);
}

/// S(t) applied to a field: modal decay on bounded domains, trapezoid
/// convolution with the Gaussian kernel on the whole line. S(0) = I.
inline Field apply_semigroup(const EigenBasis& basis, const Field& field, double t)
{
    detail::require(t >= 0 && std::isfinite(t), "semigroup time must be nonnegative");
    detail::require(&field.basis() == &basis, "field does not belong to this basis");
    if (t == 0.0) return field;
    const auto v = field.values();
    std::vector<double> out(v.size(), 0.0);
    if (basis.spectral()) {
        const auto lambda = basis.eigenvalues();
        for (std::size_t k = 0; k < v.size(); ++k) out[k] = std::exp(-lambda[k] * t) * v[k];
    } else {
        const auto x = basis.grid();
        const auto q = basis.quadrature_weights();
        for (std::size_t i = 0; i < v.size(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < v.size(); ++j) acc += q[j] * gaussian_kernel(t, x[i] - x[j]) * v[j];
            out[i] = acc;
        }
    }
    return Field(field.basis_ptr(), std::move(out));
}

/// Green's function of d/dt - A: truncated eigen-expansion on bounded domains,
/// the Gaussian kernel on the whole line.
inline double greens_function(const EigenBasis& basis, double t, double x, double y)
{
    detail::require(t > 0 && std::isfinite(t), "Green's function requires t > 0");
    if (!basis.spectral()) return gaussian_kernel(t, x - y);
    const double l = basis.domain().length;
    detail::require(x >= 0 && x <= l && y >= 0 && y <= l, "points must lie in the domain");
    double acc = 0.0;
    for (std::size_t k = 0; k < basis.mode_count(); ++k)
        acc += std::exp(-basis.eigenvalue(k) * t) * basis.eval_mode(k, x) * basis.eval_mode(k, y);
    return acc;
}

struct KernelEnvelope {
    double c1 = 1.0 / std::sqrt(4.0 * std::numbers::pi);
    double c2 = 0.25;
};

namespace detail {

inline std::vector<double> sample_points(const EigenBasis& basis, std::size_t n)
{
    std::vector<double> pts(n);
    if (basis.spectral()) {
        const double l = basis.domain().length;
        for (std::size_t i = 0; i < n; ++i) pts[i] = l * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    } else {
        const double r = basis.domain().truncation_radius;
        for (std::size_t i = 0; i < n; ++i)
            pts[i] = -r + 2.0 * r * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
    return pts;
}

// Shortest time at which the truncated eigen-expansion is free of ringing.
inline double resolved_time(const EigenBasis& basis, double horizon)
{
    if (!basis.spectral()) return horizon * 1e-2;
    return std::max(horizon * 1e-2, 25.0 / basis.eigenvalues().back());
}

} // namespace detail

/// Samples (t, x, y) on [t_min, T] x D x D and checks
/// 0 <= G <= C1 t^{-1/2} exp(-C2 |x-y|^2 / t). The whole-line kernel is also
/// checked against the lower Gaussian bound with the same constants. The fitted
/// C1 (the smallest valid C1 at the asserted C2) is reported alongside.
inline CheckReport verify_kernel_bound(const EigenBasis& basis, double horizon, std::size_t time_samples = 12,
                                       std::size_t space_samples = 24, KernelEnvelope envelope = {})
{
    detail::require(horizon > 0, "kernel bound horizon T must be positive");
    detail::require(time_samples >= 2 && space_samples >= 2, "need at least two samples per axis");
    const double t_min = detail::resolved_time(basis, horizon);
    const auto pts = detail::sample_points(basis, space_samples);
    constexpr double negativity_tolerance = -1e-8;

    double worst = 0.0, fitted_c1 = 0.0, min_value = std::numeric_limits<double>::infinity();
    double worst_lower = std::numeric_limits<double>::infinity();
    std::size_t count = 0;
    for (std::size_t it = 0; it < time_samples; ++it) {
        const double frac = static_cast<double>(it) / static_cast<double>(time_samples - 1);
        const double t = t_min * std::pow(horizon / t_min, frac);
        // Absolute rounding error of the mode sum; values below it carry no information.
        double round_off = 0.0;
        if (basis.spectral()) {
            for (double lam : basis.eigenvalues()) round_off += std::exp(-lam * t);
            round_off *= 64.0 * std::numeric_limits<double>::epsilon() * basis.sup_mode_norm() * basis.sup_mode_norm();
        }
        for (double x : pts) {
            for (double y : pts) {
                const double g = greens_function(basis, t, x, y);
                const double shape = std::exp(-envelope.c2 * (x - y) * (x - y) / t) / std::sqrt(t);
                const double resolved = std::max(0.0, g - round_off);
                min_value = std::min(min_value, g);
                worst = std::max(worst, resolved / (envelope.c1 * shape));
                fitted_c1 = std::max(fitted_c1, resolved / shape);
                if (!basis.spectral()) worst_lower = std::min(worst_lower, g / (envelope.c1 * shape));
                ++count;
            }
        }
    }
    CheckReport r;
    r.check = "kernel_bound";
    r.samples = count;
    r.worst_ratio = worst;
    r.constants = {{"C1", envelope.c1}, {"C2", envelope.c2}, {"C1_fitted", fitted_c1}, {"t_min", t_min}, {"T", horizon}};
    const bool nonneg = min_value >= negativity_tolerance;
    const bool upper = worst <= 1.0 + 1e-9;
    const bool lower = basis.spectral() || worst_lower >= 1.0 - 1e-9;
    r.pass = nonneg && upper && lower;
    r.details["min_value"] = min_value;
    r.details["nonnegative"] = nonneg;
    if (!basis.spectral()) r.details["worst_lower_ratio"] = worst_lower;
    return r;
}

/// Integral of G(t, x, y) rho(y) dy for one (t, x).
inline double smoothed_weight(const EigenBasis& basis, double t, double x)
{
    if (basis.spectral()) {
        // Exact mode integrals of the sine basis.
        const double l = basis.domain().length;
        double acc = 0.0;
        for (std::size_t k = 0; k < basis.mode_count(); ++k) {
            const double kk = static_cast<double>(k + 1);
            const double mode_integral = std::sqrt(2.0 / l) * l * (1.0 - std::cos(kk * std::numbers::pi)) / (kk * std::numbers::pi);
            acc += std::exp(-basis.eigenvalue(k) * t) * basis.eval_mode(k, x) * mode_integral;
        }
        return acc;
    }
    // y = x + 2 sqrt(t) z, kernel becomes exp(-z^2)/sqrt(pi); hard cutoff at |y| > X.
    const double r = basis.domain().weight_exponent;
    const double radius = basis.domain().truncation_radius;
    constexpr int nodes = 1601;
    constexpr double zmax = 8.0;
    const double dz = 2.0 * zmax / (nodes - 1);
    double acc = 0.0;
    for (int i = 0; i < nodes; ++i) {
        const double z = -zmax + dz * i;
        const double y = x + 2.0 * std::sqrt(t) * z;
        if (std::abs(y) > radius) continue;
        const double w = (i == 0 || i == nodes - 1) ? 0.5 : 1.0;
        acc += w * std::exp(-z * z) * weight(y, r);
    }
    return acc * dz / std::sqrt(std::numbers::pi);
}

/// Weighted smoothing: max over (t, x) of the ratio of the smoothed weight to
/// rho(x). Passes when the ratio stays below 2^r (1 + E|sqrt(2t) Z|^r), the
/// bound implied by rho(x)/rho(y) <= 2^r (1 + |x-y|^r); equals 1 for rho = 1.
inline CheckReport verify_weighted_smoothing(const EigenBasis& basis, const std::vector<double>& times,
                                             std::size_t space_samples = 64)
{
    detail::require(!times.empty(), "need at least one time sample");
    for (double t : times) detail::require(t > 0, "smoothing times must be positive");
    const double r = basis.domain().weight_exponent;
    const auto pts = detail::sample_points(basis, space_samples);
    double worst = 0.0, least = std::numeric_limits<double>::infinity(), bound = 1.0;
    Json per_time = Json::array();
    for (double t : times) {
        double worst_t = 0.0;
        for (double x : pts) {
            const double ratio = smoothed_weight(basis, t, x) / weight(x, r);
            worst_t = std::max(worst_t, ratio);
            least = std::min(least, ratio);
        }
        worst = std::max(worst, worst_t);
        if (r > 0) {
            const double abs_moment =
                std::pow(2.0 * t, r / 2.0) * std::pow(2.0, r / 2.0) * std::tgamma((r + 1.0) / 2.0) / std::sqrt(std::numbers::pi);
            bound = std::max(bound, std::pow(2.0, r) * (1.0 + abs_moment));
        }
        per_time.push_back({{"t", t}, {"worst_ratio", worst_t}});
    }
    CheckReport rep;
    rep.check = "weighted_smoothing";
    rep.samples = times.size() * pts.size();
    rep.worst_ratio = worst;
    rep.constants = {{"C_fitted", worst}, {"C_bound", bound}, {"r", r}};
    rep.pass = std::isfinite(worst) && worst <= bound * (1.0 + 1e-8);
    rep.details["min_ratio"] = least;
    rep.details["per_time"] = per_time;
    return rep;
}

/// Squared Hilbert-Schmidt norm of phi -> S(T0 + theta) phi from B0^{rho-bar}
/// into B1^rho. Closed form per mode when rho = rho-bar = 1, weighted quadrature
/// of the Gaussian kernel on the whole line.
inline double hilbert_schmidt_norm_delay_op(const EigenBasis& basis, double t0, double delay, std::size_t theta_nodes = 64)
{
    detail::require(delay > 0, "delay must be positive");
    detail::require(t0 >= 2.0 * delay * (1.0 - 1e-12), "requires T0 >= 2h");
    if (basis.spectral()) {
        double acc = 0.0;
        for (double lam : basis.eigenvalues())
            acc += (std::exp(-2.0 * lam * (t0 - delay)) - std::exp(-2.0 * lam * t0)) / (2.0 * lam);
        return acc;
    }
    detail::require(theta_nodes >= 2, "need at least two theta nodes");
    const auto x = basis.grid();
    const auto q = basis.quadrature_weights();
    const double r = basis.domain().weight_exponent;
    const double rbar = basis.domain().compare_weight_exponent;
    const double dtheta = delay / static_cast<double>(theta_nodes - 1);
    double acc = 0.0;
    for (std::size_t m = 0; m < theta_nodes; ++m) {
        const double tau = t0 - delay + dtheta * static_cast<double>(m);
        double inner = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double g = gaussian_kernel(tau, x[i] - x[j]);
                row += q[j] * g * g / weight(x[j], rbar);
            }
            inner += q[i] * weight(x[i], r) * row;
        }
        acc += ((m == 0 || m + 1 == theta_nodes) ? 0.5 : 1.0) * dtheta * inner;
    }
    return acc;
}

namespace detail {

inline Field random_field(const BasisPtr& basis, RngStream& rng)
{
    std::vector<double> v(basis->field_size());
    for (auto& c : v) c = rng.next_normal();
    if (basis->spectral()) {
        // Random mode envelope so the slowest mode is not always dominant.
        const double tilt = 2.0 * rng.next_uniform();
        for (std::size_t k = 0; k < v.size(); ++k) v[k] /= std::pow(static_cast<double>(k + 1), tilt);
    }
    return Field(basis, std::move(v));
}

} // namespace detail

/// ||S(t) u0|| <= e^{-lambda1 t} ||u0|| for random u0 and t in (0, T].
inline CheckReport verify_exponential_decay(const BasisPtr& basis, std::size_t trials, double horizon = 2.0,
                                            std::uint64_t seed = 7)
{
    detail::require(basis->spectral(), "exponential decay check requires a bounded domain");
    RngStream rng(seed, (std::uint64_t{kAuxiliaryTag} << 40) ^ 0xDECAu);
    double worst = 0.0;
    bool pass = true;
    for (std::size_t i = 0; i < trials; ++i) {
        const Field u0 = detail::random_field(basis, rng);
        const double t = horizon * (1.0 - rng.next_uniform());
        const double lhs = norm_b0(apply_semigroup(*basis, u0, t));
        const double rhs = std::exp(-basis->lambda1() * t) * norm_b0(u0);
        worst = std::max(worst, lhs / rhs);
        pass = pass && lhs <= rhs + 1e-12;
    }
    CheckReport r;
    r.check = "exponential_decay";
    r.samples = trials;
    r.worst_ratio = worst;
    r.constants = {{"lambda1", basis->lambda1()}, {"T", horizon}};
    r.pass = pass;
    return r;
}

/// Fits C_rho(T) in ||S(t) phi||^2 <= C_rho(T) ||phi||^2 over random phi and t in (0, T].
inline CheckReport fit_semigroup_bound(const BasisPtr& basis, double horizon, std::size_t trials, std::uint64_t seed = 11)
{
    RngStream rng(seed, (std::uint64_t{kAuxiliaryTag} << 40) ^ 0xB0Du);
    double worst = 0.0;
    for (std::size_t i = 0; i < trials; ++i) {
        const Field phi = detail::random_field(basis, rng);
        const double t = horizon * (1.0 - rng.next_uniform());
        worst = std::max(worst, norm_b0_sq(apply_semigroup(*basis, phi, t)) / norm_b0_sq(phi));
    }
    CheckReport r;
    r.check = "semigroup_weighted_bound";
    r.samples = trials;
    r.worst_ratio = worst;
    r.constants = {{"C_rho_fitted", worst}, {"T", horizon}};
    r.pass = std::isfinite(worst);
    return r;
}

/// Max relative deviation of S(t+s) from S(t) S(s) over random fields.
inline CheckReport verify_semigroup_law(const BasisPtr& basis, std::size_t trials, double tolerance, std::uint64_t seed = 13)
{
    RngStream rng(seed, (std::uint64_t{kAuxiliaryTag} << 40) ^ 0x5E3u);
    double worst = 0.0;
    for (std::size_t i = 0; i < trials; ++i) {
        Field phi = detail::random_field(basis, rng);
        if (!basis->spectral()) {
            // Localized data keep the whole-line mass inside [-X, X].
            const double c = 0.25 * basis->domain().truncation_radius * (2.0 * rng.next_uniform() - 1.0);
            phi = Field::from_function(basis, [c](double x) { return std::exp(-(x - c) * (x - c)); });
        }
        const double t = rng.next_uniform() + 0.05;
        const double s = rng.next_uniform() + 0.05;
        const Field lhs = apply_semigroup(*basis, phi, t + s);
        const Field rhs = apply_semigroup(*basis, apply_semigroup(*basis, phi, s), t);
        worst = std::max(worst, norm_b0(lhs - rhs) / std::max(norm_b0(lhs), 1e-300));
    }
    CheckReport r;
    r.check = "semigroup_law";
    r.samples = trials;
    r.worst_ratio = worst;
    r.constants = {{"tolerance", tolerance}};
    r.pass = worst <= tolerance;
    return r;
}

} // namespace sfde
