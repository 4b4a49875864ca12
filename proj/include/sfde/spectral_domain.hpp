#pragma once

// State spaces of the delay equation: the weighted space B0 = L2_rho(D), the
// history space B1 = L2(-h, 0; B0) and their product B = B0 x B1.
//
// Bounded domains (0, l) with Dirichlet conditions are stored spectrally in the
// sine eigenbasis; the whole line is stored as weighted grid values on [-X, X].

#include <sfde/errors.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sfde {

enum class DomainKind { BoundedDirichlet, WholeLineWeighted };

struct DomainSpec {
    DomainKind kind = DomainKind::BoundedDirichlet;
    double length = std::numbers::pi;     // bounded case
    double truncation_radius = 10.0;      // whole-line case
    std::size_t grid_points = 64;
    double weight_exponent = 0.0;         // r
    double compare_weight_exponent = 0.0; // r-bar

    static DomainSpec bounded(double length, std::size_t grid_points = 64)
    {
        DomainSpec d;
        d.kind = DomainKind::BoundedDirichlet;
        d.length = length;
        d.grid_points = grid_points;
        return d;
    }

    static DomainSpec whole_line(double radius, std::size_t grid_points, double r, double r_bar = 0.0)
    {
        DomainSpec d;
        d.kind = DomainKind::WholeLineWeighted;
        d.truncation_radius = radius;
        d.grid_points = grid_points;
        d.weight_exponent = r;
        d.compare_weight_exponent = r_bar;
        return d;
    }

    bool bounded_domain() const noexcept { return kind == DomainKind::BoundedDirichlet; }

    /// Every violated invariant, in a stable order.
    std::vector<std::string> violations() const
    {
        std::vector<std::string> out;
        if (grid_points < 8) out.push_back("grid_points must be >= 8 (got " + std::to_string(grid_points) + ")");
        if (weight_exponent < 0 || compare_weight_exponent < 0)
            out.push_back("weight exponents must be nonnegative");
        if (kind == DomainKind::BoundedDirichlet) {
            if (!(length > 0) || !std::isfinite(length)) out.push_back("domain length must be finite and positive");
            if (weight_exponent != 0.0)
                out.push_back("bounded domain requires weight exponent r = 0 (no weight), got r = " +
                              std::to_string(weight_exponent));
        } else {
            if (!(truncation_radius > 0) || !std::isfinite(truncation_radius))
                out.push_back("truncation radius must be finite and positive");
            if (!(weight_exponent > 1.0))
                out.push_back("whole-line weight 1/(1+|x|^r) requires r > d = 1, got r = " +
                              std::to_string(weight_exponent));
            if (!(weight_exponent > 1.0 + compare_weight_exponent))
                out.push_back("whole-line weights require r > d + r_bar (r = " + std::to_string(weight_exponent) +
                              ", r_bar = " + std::to_string(compare_weight_exponent) + ")");
        }
        return out;
    }

    void validate() const
    {
        auto v = violations();
        if (!v.empty()) throw InvalidArgument("invalid domain: " + detail::join_violations(v));
    }
};

/// rho(x) = 1 / (1 + |x|^r); identically one for r = 0.
inline double weight(double x, double r) noexcept
{
    if (r == 0.0) return 1.0;
    return 1.0 / (1.0 + std::pow(std::abs(x), r));
}

/// Discretization of the linear operator: eigenpairs plus the spatial grid used
/// for pointwise nonlinearities. On the whole line there are no modes and the
/// grid carries the field itself.
class EigenBasis {
public:
    EigenBasis(DomainSpec domain, std::vector<double> eigenvalues) : domain_(std::move(domain)), lambda_(std::move(eigenvalues))
    {
        const std::size_t g = domain_.grid_points;
        grid_.resize(g);
        quad_.resize(g);
        rho_.resize(g);
        if (domain_.bounded_domain()) {
            const double dx = domain_.length / static_cast<double>(g + 1);
            for (std::size_t i = 0; i < g; ++i) {
                grid_[i] = dx * static_cast<double>(i + 1);
                quad_[i] = dx; // trapezoid with vanishing boundary values
                rho_[i] = 1.0;
            }
            const std::size_t n = lambda_.size();
            table_.resize(n * g);
            const double amp = std::sqrt(2.0 / domain_.length);
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t i = 0; i < g; ++i)
                    table_[k * g + i] = amp * std::sin(static_cast<double>(k + 1) * std::numbers::pi * grid_[i] / domain_.length);
        } else {
            const double x0 = -domain_.truncation_radius;
            const double dx = 2.0 * domain_.truncation_radius / static_cast<double>(g - 1);
            for (std::size_t i = 0; i < g; ++i) {
                grid_[i] = x0 + dx * static_cast<double>(i);
                quad_[i] = (i == 0 || i + 1 == g) ? 0.5 * dx : dx;
                rho_[i] = weight(grid_[i], domain_.weight_exponent);
            }
        }
    }

    const DomainSpec& domain() const noexcept { return domain_; }
    bool spectral() const noexcept { return domain_.bounded_domain(); }

    std::size_t mode_count() const noexcept { return lambda_.size(); }
    std::span<const double> eigenvalues() const noexcept { return lambda_; }
    double eigenvalue(std::size_t k) const { return lambda_.at(k); }
    /// Principal eigenvalue of -A; zero on the whole line (continuous spectrum).
    double lambda1() const noexcept { return lambda_.empty() ? 0.0 : lambda_.front(); }

    std::size_t grid_size() const noexcept { return grid_.size(); }
    std::span<const double> grid() const noexcept { return grid_; }
    std::span<const double> quadrature_weights() const noexcept { return quad_; }
    std::span<const double> grid_weight() const noexcept { return rho_; }

    /// Length of the stored representation of a field.
    std::size_t field_size() const noexcept { return spectral() ? mode_count() : grid_size(); }

    /// Mode k (zero based) on the grid.
    std::span<const double> mode_on_grid(std::size_t k) const
    {
        return std::span<const double>(table_).subspan(k * grid_.size(), grid_.size());
    }

    /// Mode k (zero based) evaluated at an arbitrary point of (0, l).
    double eval_mode(std::size_t k, double x) const
    {
        detail::require(spectral(), "eval_mode requires a bounded domain");
        return std::sqrt(2.0 / domain_.length) * std::sin(static_cast<double>(k + 1) * std::numbers::pi * x / domain_.length);
    }

    /// sup_n ||e_n||_inf for the sine basis.
    double sup_mode_norm() const noexcept { return spectral() ? std::sqrt(2.0 / domain_.length) : 1.0; }

    std::vector<double> to_grid(std::span<const double> coeffs) const
    {
        const std::size_t g = grid_.size();
        std::vector<double> out(g, 0.0);
        for (std::size_t k = 0; k < coeffs.size(); ++k) {
            const double c = coeffs[k];
            if (c == 0.0) continue;
            const double* row = table_.data() + k * g;
            for (std::size_t i = 0; i < g; ++i) out[i] += c * row[i];
        }
        return out;
    }

    std::vector<double> to_modes(std::span<const double> values) const
    {
        const std::size_t g = grid_.size();
        std::vector<double> out(mode_count(), 0.0);
        for (std::size_t k = 0; k < out.size(); ++k) {
            const double* row = table_.data() + k * g;
            double acc = 0.0;
            for (std::size_t i = 0; i < g; ++i) acc += quad_[i] * values[i] * row[i];
            out[k] = acc;
        }
        return out;
    }

private:
    DomainSpec domain_;
    std::vector<double> lambda_;
    std::vector<double> grid_;
    std::vector<double> quad_;
    std::vector<double> rho_;
    std::vector<double> table_; // mode-major, mode_count x grid_size
};

using BasisPtr = std::shared_ptr<const EigenBasis>;

/// Builds the eigenbasis of -A. Without an explicit spectrum the bounded case
/// uses the Dirichlet Laplacian, lambda_k = (k pi / l)^2.
inline BasisPtr build_basis(const DomainSpec& domain, std::size_t modes,
                            const std::optional<std::vector<double>>& spectrum = std::nullopt)
{
    domain.validate();
    if (!domain.bounded_domain()) {
        detail::require(!spectrum || spectrum->empty(), "whole-line domain has continuous spectrum; no eigenvalues accepted");
        return std::make_shared<const EigenBasis>(domain, std::vector<double>{});
    }
    detail::require(modes >= 1, "mode count must be >= 1");
    detail::require(modes <= domain.grid_points,
                    "mode count " + std::to_string(modes) + " exceeds grid_points " + std::to_string(domain.grid_points));
    std::vector<double> lambda;
    if (spectrum) {
        lambda = *spectrum;
        detail::require(lambda.size() == modes, "spectrum length " + std::to_string(lambda.size()) +
                                                    " does not match mode count " + std::to_string(modes));
    } else {
        lambda.resize(modes);
        for (std::size_t k = 0; k < modes; ++k) {
            const double w = static_cast<double>(k + 1) * std::numbers::pi / domain.length;
            lambda[k] = w * w;
        }
    }
    for (std::size_t k = 0; k < lambda.size(); ++k) {
        detail::require(std::isfinite(lambda[k]) && lambda[k] > 0, "spectrum must be positive and finite");
        detail::require(k == 0 || lambda[k] >= lambda[k - 1], "spectrum must be non-decreasing");
    }
    return std::make_shared<const EigenBasis>(domain, std::move(lambda));
}

/// An element of B0: spectral coefficients on a bounded domain, grid values on the whole line.
class Field {
public:
    Field(BasisPtr basis, std::vector<double> values) : basis_(std::move(basis)), values_(std::move(values))
    {
        detail::require(basis_ != nullptr, "field requires a basis");
        detail::require(values_.size() == basis_->field_size(),
                        "field length " + std::to_string(values_.size()) + " does not match representation size " +
                            std::to_string(basis_->field_size()));
        for (double v : values_) detail::require(std::isfinite(v), "field entries must be finite");
    }

    static Field zero(const BasisPtr& basis) { return Field(basis, std::vector<double>(basis->field_size(), 0.0)); }

    /// The unit coefficient e_{k+1} (zero based k).
    static Field unit(const BasisPtr& basis, std::size_t k, double amplitude = 1.0)
    {
        detail::require(basis->spectral(), "unit modes exist only on bounded domains");
        std::vector<double> v(basis->field_size(), 0.0);
        v.at(k) = amplitude;
        return Field(basis, std::move(v));
    }

    /// Samples a function on the grid (projected to modes on bounded domains).
    static Field from_function(const BasisPtr& basis, const std::function<double(double)>& fn)
    {
        std::vector<double> g(basis->grid_size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = fn(basis->grid()[i]);
        if (basis->spectral()) return Field(basis, basis->to_modes(g));
        return Field(basis, std::move(g));
    }

    const EigenBasis& basis() const noexcept { return *basis_; }
    const BasisPtr& basis_ptr() const noexcept { return basis_; }
    bool spectral() const noexcept { return basis_->spectral(); }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::vector<double> grid_values() const { return spectral() ? basis_->to_grid(values_) : values_; }

    friend Field operator+(const Field& a, const Field& b) { return combine(a, b, 1.0); }
    friend Field operator-(const Field& a, const Field& b) { return combine(a, b, -1.0); }
    friend Field operator*(double s, const Field& a)
    {
        std::vector<double> v(a.values_);
        for (auto& x : v) x *= s;
        return Field(a.basis_, std::move(v));
    }
    friend bool operator==(const Field& a, const Field& b) { return a.basis_ == b.basis_ && a.values_ == b.values_; }

private:
    static Field combine(const Field& a, const Field& b, double sign)
    {
        detail::require(a.basis_ == b.basis_, "fields live on different bases");
        std::vector<double> v(a.values_);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += sign * b.values_[i];
        return Field(a.basis_, std::move(v));
    }

    BasisPtr basis_;
    std::vector<double> values_;
};

/// Number of step intervals M with M * dt = h; rejects steps that do not divide the delay.
inline std::size_t delay_intervals(double delay, double dt)
{
    detail::require(delay > 0 && std::isfinite(delay), "delay h must be positive");
    detail::require(dt > 0 && std::isfinite(dt), "time step must be positive");
    const double ratio = delay / dt;
    const double m = std::round(ratio);
    detail::require(m >= 1 && std::abs(ratio - m) <= 1e-9 * std::max(1.0, m),
                    "time step dt = " + std::to_string(dt) + " does not divide delay h = " + std::to_string(delay));
    return static_cast<std::size_t>(m);
}

/// History u_t(theta), theta in [-h, 0], on nodes theta_j = -h + j dt held in a ring.
/// node(0) is the oldest value (theta = -h), node(M) the newest (theta = 0).
class DelaySegment {
public:
    DelaySegment(std::vector<Field> nodes_oldest_first, double delay, double dt)
        : buffer_(std::move(nodes_oldest_first)), delay_(delay), dt_(dt), intervals_(delay_intervals(delay, dt))
    {
        detail::require(buffer_.size() == intervals_ + 1, "segment needs M+1 = " + std::to_string(intervals_ + 1) +
                                                              " nodes, got " + std::to_string(buffer_.size()));
        for (const auto& f : buffer_)
            detail::require(f.basis_ptr() == buffer_.front().basis_ptr(), "segment nodes live on different bases");
    }

    static DelaySegment constant(const Field& value, double delay, double dt)
    {
        const std::size_t m = delay_intervals(delay, dt);
        return DelaySegment(std::vector<Field>(m + 1, value), delay, dt);
    }

    /// Samples theta -> value(theta) on the segment nodes.
    static DelaySegment from_function(double delay, double dt, const std::function<Field(double)>& value)
    {
        const std::size_t m = delay_intervals(delay, dt);
        std::vector<Field> nodes;
        nodes.reserve(m + 1);
        for (std::size_t j = 0; j <= m; ++j) nodes.push_back(value(-delay + static_cast<double>(j) * dt));
        return DelaySegment(std::move(nodes), delay, dt);
    }

    std::size_t node_count() const noexcept { return buffer_.size(); }
    std::size_t intervals() const noexcept { return intervals_; }
    double delay() const noexcept { return delay_; }
    double dt() const noexcept { return dt_; }
    std::size_t head_index() const noexcept { return head_; }
    double theta(std::size_t j) const noexcept { return -delay_ + static_cast<double>(j) * dt_; }

    const Field& node(std::size_t j) const { return buffer_[(head_ + j) % buffer_.size()]; }
    const Field& oldest() const { return node(0); }
    const Field& newest() const { return node(intervals_); }
    const BasisPtr& basis_ptr() const { return buffer_.front().basis_ptr(); }

    /// Shifts the history by one step: the oldest node is dropped and `value` becomes theta = 0.
    void push(Field value)
    {
        detail::require(value.basis_ptr() == basis_ptr(), "pushed field lives on a different basis");
        buffer_[head_] = std::move(value);
        head_ = (head_ + 1) % buffer_.size();
    }

    /// Overwrites the theta = 0 node.
    void set_newest(Field value)
    {
        detail::require(value.basis_ptr() == basis_ptr(), "field lives on a different basis");
        buffer_[(head_ + intervals_) % buffer_.size()] = std::move(value);
    }

    /// Trapezoid rule weight of node j.
    double trapezoid_weight(std::size_t j) const noexcept
    {
        return (j == 0 || j == intervals_) ? 0.5 * dt_ : dt_;
    }

private:
    std::vector<Field> buffer_;
    double delay_;
    double dt_;
    std::size_t intervals_;
    std::size_t head_ = 0;
};

/// y(t) = (u(t), u_t) in B. Trajectories keep segment.newest() == head.
struct FullState {
    Field head;
    DelaySegment segment;

    /// State whose head is the newest history node.
    static FullState from_history(DelaySegment history)
    {
        Field head = history.newest();
        return FullState{std::move(head), std::move(history)};
    }

    /// Initial datum (phi(0), phi on [-h, 0]); the theta = 0 node is replaced by phi(0).
    static FullState from_initial(const Field& head, DelaySegment history)
    {
        history.set_newest(head);
        return FullState{head, std::move(history)};
    }

    bool consistent() const { return segment.newest() == head; }
};

inline double norm_b0_sq(const Field& field)
{
    const auto v = field.values();
    double acc = 0.0;
    if (field.spectral()) {
        for (double c : v) acc += c * c;
    } else {
        const auto q = field.basis().quadrature_weights();
        const auto rho = field.basis().grid_weight();
        for (std::size_t i = 0; i < v.size(); ++i) acc += q[i] * rho[i] * v[i] * v[i];
    }
    return acc;
}

/// ||u||_{L2_rho}: Parseval on bounded domains, weighted trapezoid on [-X, X] otherwise.
inline double norm_b0(const Field& field) { return std::sqrt(norm_b0_sq(field)); }

inline double norm_b1_sq(const DelaySegment& segment)
{
    double acc = 0.0;
    for (std::size_t j = 0; j < segment.node_count(); ++j)
        acc += segment.trapezoid_weight(j) * norm_b0_sq(segment.node(j));
    return acc;
}

/// ||u_t||_{L2(-h,0;B0)} by the trapezoid rule over the theta nodes.
inline double norm_b1(const DelaySegment& segment) { return std::sqrt(norm_b1_sq(segment)); }

inline double norm_b_sq(const Field& head, const DelaySegment& segment) { return norm_b0_sq(head) + norm_b1_sq(segment); }
inline double norm_b_sq(const FullState& state) { return norm_b_sq(state.head, state.segment); }

/// Product norm, ||y||_B^2 = ||u||_B0^2 + ||u_t||_B1^2.
inline double norm_b(const FullState& state) { return std::sqrt(norm_b_sq(state)); }

/// Difference of two states node by node (same discretization required).
inline double distance_b_sq(const FullState& a, const FullState& b)
{
    detail::require(a.segment.node_count() == b.segment.node_count(), "states have different history grids");
    double acc = norm_b0_sq(a.head - b.head);
    for (std::size_t j = 0; j < a.segment.node_count(); ++j)
        acc += a.segment.trapezoid_weight(j) * norm_b0_sq(a.segment.node(j) - b.segment.node(j));
    return acc;
}

} // namespace sfde
