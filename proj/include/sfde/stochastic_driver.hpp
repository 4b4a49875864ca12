#pragma once

// Truncated Q-Wiener process W(t) = sum_i sqrt(a_i) beta_i(t) e_i on the state
// eigenbasis, its increments, and the Monte Carlo check of the stochastic
// integral estimate.

#include <sfde/report.hpp>
#include <sfde/rng.hpp>
#include <sfde/spectral_domain.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace sfde {

class QWienerSpec {
public:
    QWienerSpec() = default;
    QWienerSpec(BasisPtr basis, std::vector<double> coefficients) : basis_(std::move(basis)), a_(std::move(coefficients))
    {
        detail::require(basis_ != nullptr, "noise needs a basis");
        detail::require(basis_->spectral(), "Q-Wiener noise is defined on the bounded-domain eigenbasis");
        detail::require(a_.size() <= basis_->mode_count(), "noise mode count J = " + std::to_string(a_.size()) +
                                                               " exceeds state mode count N = " +
                                                               std::to_string(basis_->mode_count()));
        for (double a : a_) detail::require(std::isfinite(a) && a >= 0, "noise coefficients must be finite and >= 0");
    }

    /// a_i = scale * ratio^i, i = 1..J.
    static QWienerSpec geometric(BasisPtr basis, std::size_t modes, double ratio, double scale = 1.0)
    {
        detail::require(ratio > 0 && ratio < 1, "geometric ratio must lie in (0, 1)");
        std::vector<double> a(modes);
        for (std::size_t i = 0; i < modes; ++i) a[i] = scale * std::pow(ratio, static_cast<double>(i + 1));
        return QWienerSpec(std::move(basis), std::move(a));
    }

    /// a_i = scale * i^{-power}, i = 1..J.
    static QWienerSpec polynomial(BasisPtr basis, std::size_t modes, double power, double scale = 1.0)
    {
        detail::require(power > 0, "polynomial power must be positive");
        std::vector<double> a(modes);
        for (std::size_t i = 0; i < modes; ++i) a[i] = scale * std::pow(static_cast<double>(i + 1), -power);
        return QWienerSpec(std::move(basis), std::move(a));
    }

    const BasisPtr& basis_ptr() const noexcept { return basis_; }
    std::size_t modes() const noexcept { return a_.size(); }
    std::span<const double> coefficients() const noexcept { return a_; }
    double coefficient(std::size_t i) const { return a_.at(i); }
    double trace() const noexcept
    {
        double s = 0.0;
        for (double a : a_) s += a;
        return s;
    }
    bool silent() const noexcept { return std::all_of(a_.begin(), a_.end(), [](double a) { return a == 0.0; }); }

private:
    BasisPtr basis_;
    std::vector<double> a_;
};

/// Brownian increment over dt: mode i gets sqrt(a_i dt) xi_i, xi_i iid N(0, 1).
inline Field sample_increment(const QWienerSpec& spec, double dt, RngStream& rng)
{
    detail::require(dt > 0, "increment length must be positive");
    std::vector<double> v(spec.basis_ptr()->mode_count(), 0.0);
    for (std::size_t i = 0; i < spec.modes(); ++i) v[i] = std::sqrt(spec.coefficient(i) * dt) * rng.next_normal();
    return Field(spec.basis_ptr(), std::move(v));
}

/// Standard deviation of mode k of the stochastic convolution int_0^dt S(dt - s) dW(s).
inline double convolution_stddev(double a, double lambda, double dt) noexcept
{
    return std::sqrt(a * (-std::expm1(-2.0 * lambda * dt)) / (2.0 * lambda));
}

/// Deterministic integrand Psi(s) of a stochastic integral on [0, t].
struct Integrand {
    enum class Kind {
        Multiplier, // pointwise multiplication by phi(s, x); values = phi on the grid
        Diagonal    // mode k scaled by m_k(s); values = (m_k)
    };
    Kind kind = Kind::Multiplier;
    std::function<std::vector<double>(double)> values;

    static Integrand identity(const BasisPtr& basis)
    {
        const std::size_t g = basis->grid_size();
        return {Kind::Multiplier, [g](double) { return std::vector<double>(g, 1.0); }};
    }
    static Integrand zero(const BasisPtr& basis)
    {
        const std::size_t g = basis->grid_size();
        return {Kind::Multiplier, [g](double) { return std::vector<double>(g, 0.0); }};
    }
    /// Psi(s) = S(t - s).
    static Integrand semigroup(const BasisPtr& basis, double t)
    {
        return {Kind::Diagonal, [basis, t](double s) {
                    std::vector<double> m(basis->mode_count());
                    for (std::size_t k = 0; k < m.size(); ++k) m[k] = std::exp(-basis->eigenvalue(k) * (t - s));
                    return m;
                }};
    }
};

struct NoiseEstimateReport {
    double estimate = 0.0;  // Monte Carlo E||int Psi dW||^2
    double std_error = 0.0;
    double bound = 0.0;     // a sup||e_n||^2 int ||Psi||^2 ds (or the diagonal analogue)
    double exact = -1.0;    // exact value for diagonal integrands, -1 otherwise
    std::size_t samples = 0;
    bool pass = false;

    CheckReport to_check() const
    {
        CheckReport r;
        r.check = "noise_estimate";
        r.samples = samples;
        r.worst_ratio = bound > 0 ? estimate / bound : 0.0;
        r.constants = {{"estimate", estimate}, {"std_error", std_error}, {"bound", bound}};
        if (exact >= 0) r.constants.emplace_back("exact", exact);
        r.pass = pass;
        return r;
    }
};

/// Monte Carlo estimate of E||int_0^t Psi(s) dW(s)||^2 against the trace-class
/// bound. Diagonal integrands are sampled with the exact per-interval variance
/// and additionally compared with sum_k a_k int m_k^2 ds.
inline NoiseEstimateReport verify_noise_estimate(const QWienerSpec& spec, const Integrand& integrand, double t,
                                                 std::size_t samples, std::size_t steps, const StreamFamily& family)
{
    detail::require(t > 0, "integration horizon must be positive");
    detail::require(samples >= 2 && steps >= 1, "need >= 2 samples and >= 1 step");
    const auto& basis = *spec.basis_ptr();
    const std::size_t n_modes = basis.mode_count();
    const std::size_t j_modes = spec.modes();
    const double ds = t / static_cast<double>(steps);

    // Composite Simpson over each interval; reused for bound and exact value.
    constexpr int panels = 8;
    auto simpson = [&](std::size_t n, const std::function<double(const std::vector<double>&, std::size_t)>& g,
                       std::size_t idx) {
        const double w = ds / panels;
        double acc = 0.0;
        for (int p = 0; p < panels; ++p) {
            const double s0 = ds * static_cast<double>(n) + w * p;
            const auto v0 = integrand.values(s0), v1 = integrand.values(s0 + 0.5 * w), v2 = integrand.values(s0 + w);
            acc += w / 6.0 * (g(v0, idx) + 4.0 * g(v1, idx) + g(v2, idx));
        }
        return acc;
    };

    NoiseEstimateReport rep;
    rep.samples = samples;
    const double a = spec.trace();

    if (integrand.kind == Integrand::Kind::Diagonal) {
        // per-interval variances q[n][k] = a_k int m_k^2
        std::vector<double> q(steps * j_modes);
        auto sq = [](const std::vector<double>& v, std::size_t k) { return v[k] * v[k]; };
        double exact = 0.0, sup_int = 0.0;
        std::vector<double> per_mode(j_modes, 0.0);
        for (std::size_t n = 0; n < steps; ++n)
            for (std::size_t k = 0; k < j_modes; ++k) {
                const double integral = simpson(n, sq, k);
                q[n * j_modes + k] = spec.coefficient(k) * integral;
                per_mode[k] += integral;
            }
        for (std::size_t k = 0; k < j_modes; ++k) {
            exact += spec.coefficient(k) * per_mode[k];
            sup_int = std::max(sup_int, per_mode[k]);
        }
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t m = 0; m < samples; ++m) {
            RngStream rng = family.stream(m);
            double norm_sq = 0.0;
            for (std::size_t k = 0; k < j_modes; ++k) {
                double c = 0.0;
                for (std::size_t n = 0; n < steps; ++n) c += std::sqrt(q[n * j_modes + k]) * rng.normal_at(n * j_modes + k);
                norm_sq += c * c;
            }
            sum += norm_sq;
            sumsq += norm_sq * norm_sq;
        }
        const double mean = sum / static_cast<double>(samples);
        const double var = std::max(0.0, (sumsq - sum * mean) / static_cast<double>(samples - 1));
        rep.estimate = mean;
        rep.std_error = std::sqrt(var / static_cast<double>(samples));
        rep.exact = exact;
        rep.bound = a * sup_int;
        rep.pass = rep.estimate - 3.0 * rep.std_error <= rep.bound &&
                   std::abs(rep.estimate - exact) <= 3.0 * rep.std_error + 1e-12;
        return rep;
    }

    // Multiplier: left-point Ito sum of phi(s_n) * dW_n on the grid.
    const auto qw = basis.quadrature_weights();
    auto grid_norm_sq = [&](const std::vector<double>& v, std::size_t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) acc += qw[i] * v[i] * v[i];
        return acc;
    };
    double integral = 0.0;
    for (std::size_t n = 0; n < steps; ++n) integral += simpson(n, grid_norm_sq, 0);
    rep.bound = a * basis.sup_mode_norm() * basis.sup_mode_norm() * integral;

    std::vector<std::vector<double>> phi(steps);
    for (std::size_t n = 0; n < steps; ++n) phi[n] = integrand.values(ds * static_cast<double>(n));
    double sum = 0.0, sumsq = 0.0;
    std::vector<double> dw(n_modes, 0.0);
    for (std::size_t m = 0; m < samples; ++m) {
        RngStream rng = family.stream(m);
        std::vector<double> acc(n_modes, 0.0);
        for (std::size_t n = 0; n < steps; ++n) {
            for (std::size_t k = 0; k < j_modes; ++k)
                dw[k] = std::sqrt(spec.coefficient(k) * ds) * rng.normal_at(n * j_modes + k);
            auto g = basis.to_grid(dw);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= phi[n][i];
            const auto c = basis.to_modes(g);
            for (std::size_t k = 0; k < n_modes; ++k) acc[k] += c[k];
        }
        double norm_sq = 0.0;
        for (double c : acc) norm_sq += c * c;
        sum += norm_sq;
        sumsq += norm_sq * norm_sq;
    }
    const double mean = sum / static_cast<double>(samples);
    const double var = std::max(0.0, (sumsq - sum * mean) / static_cast<double>(samples - 1));
    rep.estimate = mean;
    rep.std_error = std::sqrt(var / static_cast<double>(samples));
    rep.pass = rep.estimate - 3.0 * rep.std_error <= rep.bound;
    return rep;
}

} // namespace sfde
