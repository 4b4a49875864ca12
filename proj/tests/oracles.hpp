#pragma once

// Reference computations used by the tests. None of them call into the library's
// numerical kernels: they rebuild quantities from closed forms, image sums,
// adaptive quadrature or brute-force integration.

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

/// Free heat kernel on the line.
inline double free_kernel(double t, double d) { return std::exp(-d * d / (4.0 * t)) / std::sqrt(4.0 * std::numbers::pi * t); }

/// Dirichlet heat kernel on (0, l) by the method of images.
inline double dirichlet_kernel_images(double t, double x, double y, double l, int images = 40)
{
    double g = 0.0;
    for (int n = -images; n <= images; ++n) {
        const double s = 2.0 * l * n;
        g += free_kernel(t, x - y + s) - free_kernel(t, x + y + s);
    }
    return g;
}

/// Adaptive Simpson on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12, int depth = 40)
{
    struct Rec {
        const std::function<double(double)>& f;
        double operator()(double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) const
        {
            const double m = 0.5 * (a + b);
            const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
            const double flm = f(lm), frm = f(rm);
            const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
            return (*this)(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + (*this)(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
        }
    };
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return Rec{f}(a, b, fa, fm, fb, whole, tol, depth);
}

/// Squared Hilbert-Schmidt norm of phi -> S(T0 + theta) phi into L2(-h, 0; L2)
/// as sum_k int_{-h}^0 e^{-2 lambda_k (T0 + theta)} dtheta, each integral by quadrature.
inline double hs_mode_sum(const std::vector<double>& lambda, double t0, double h)
{
    double acc = 0.0;
    for (double lam : lambda)
        acc += integrate([&](double th) { return std::exp(-2.0 * lam * (t0 + th)); }, -h, 0.0, 1e-14);
    return acc;
}

/// Eigenvalues of the second-difference Dirichlet Laplacian on n interior points
/// of (0, l), by Sturm-sequence bisection. Converge to (k pi / l)^2 as O(dx^2).
inline std::vector<double> fd_dirichlet_eigenvalues(double l, std::size_t n, std::size_t count)
{
    const double dx = l / static_cast<double>(n + 1);
    const double diag = 2.0 / (dx * dx), off = -1.0 / (dx * dx);
    auto below = [&](double x) {
        std::size_t c = 0;
        double q = diag - x;
        if (q < 0) ++c;
        for (std::size_t i = 1; i < n; ++i) {
            if (q == 0.0) q = 1e-300;
            q = (diag - x) - off * off / q;
            if (q < 0) ++c;
        }
        return c;
    };
    std::vector<double> out;
    for (std::size_t k = 1; k <= count; ++k) {
        double lo = 0.0, hi = 4.0 / (dx * dx);
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (below(mid) >= k ? hi : lo) = mid;
        }
        out.push_back(0.5 * (lo + hi));
    }
    return out;
}

/// Variance of the Ornstein-Uhlenbeck coordinate du = -lambda u dt + sqrt(a) dB at time t from 0.
inline double ou_variance(double lambda, double a, double t) { return a * (1.0 - std::exp(-2.0 * lambda * t)) / (2.0 * lambda); }

/// Mean of u^2 at time t from u(0) = m0 (deterministic start).
inline double ou_second_moment(double lambda, double a, double t, double u0)
{
    return std::exp(-2.0 * lambda * t) * u0 * u0 + ou_variance(lambda, a, t);
}

/// Dense reference for the deterministic Galerkin delay system
///   u_k' = -lambda_k u_k + P_k[ fbar( int_{-h}^0 u(t + theta) dtheta ) ]
/// on (0, l) with the pointwise map applied on the interior grid x_i = (i+1) l / (G+1).
/// Classical RK4 with step dt_ref = h / M_ref; the delay integral uses the trapezoid
/// rule on the stored history and linear interpolation at half steps.
class DelayGalerkinReference {
public:
    DelayGalerkinReference(double l, std::size_t modes, std::size_t grid, double h, std::size_t m_ref,
                           std::function<double(double)> fbar)
        : l_(l), n_(modes), g_(grid), h_(h), m_(m_ref), dt_(h / static_cast<double>(m_ref)), fbar_(std::move(fbar))
    {
        const double w = l / static_cast<double>(grid + 1);
        sin_.resize(n_ * g_);
        for (std::size_t k = 0; k < n_; ++k)
            for (std::size_t i = 0; i < g_; ++i)
                sin_[k * g_ + i] = std::sqrt(2.0 / l) * std::sin(static_cast<double>(k + 1) * std::numbers::pi *
                                                                 static_cast<double>(i + 1) * w / l);
        weight_ = w;
        for (std::size_t k = 0; k < n_; ++k) {
            const double c = static_cast<double>(k + 1) * std::numbers::pi / l;
            lambda_.push_back(c * c);
        }
    }

    double dt() const { return dt_; }

    /// Integrates from the constant history u(theta) = u0 up to `steps` reference steps.
    std::vector<std::vector<double>> run(const std::vector<double>& u0, std::size_t steps) const
    {
        std::vector<std::vector<double>> hist(m_ + 1, u0); // hist.back() is the current time
        std::vector<std::vector<double>> out{u0};
        for (std::size_t s = 0; s < steps; ++s) {
            const auto& u = hist.back();
            // delay integrals at t, t + dt/2, t + dt
            const auto i0 = delay_integral(hist, 0.0);
            const auto ih = delay_integral(hist, 0.5);
            auto k1 = rhs(u, i0);
            auto k2 = rhs(axpy(u, 0.5 * dt_, k1), ih);
            auto k3 = rhs(axpy(u, 0.5 * dt_, k2), ih);
            auto k4p = axpy(u, dt_, k3);
            // the integral at t + dt needs u(t + dt); use the k3 predictor for the newest node
            auto hist_next = hist;
            hist_next.erase(hist_next.begin());
            hist_next.push_back(k4p);
            const auto i1 = delay_integral(hist_next, 0.0);
            auto k4 = rhs(k4p, i1);
            std::vector<double> next(n_);
            for (std::size_t k = 0; k < n_; ++k) next[k] = u[k] + dt_ / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            hist.erase(hist.begin());
            hist.push_back(next);
            out.push_back(next);
        }
        return out;
    }

private:
    static std::vector<double> axpy(const std::vector<double>& x, double a, const std::vector<double>& y)
    {
        std::vector<double> r(x);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] += a * y[i];
        return r;
    }

    // Trapezoid integral over [t - h, t] shifted by frac * dt; frac = 1/2 uses midpoint interpolation.
    std::vector<double> delay_integral(const std::vector<std::vector<double>>& hist, double frac) const
    {
        std::vector<double> acc(n_, 0.0);
        if (frac == 0.0) {
            for (std::size_t j = 0; j <= m_; ++j) {
                const double w = (j == 0 || j == m_) ? 0.5 * dt_ : dt_;
                for (std::size_t k = 0; k < n_; ++k) acc[k] += w * hist[j][k];
            }
            return acc;
        }
        // nodes shifted by dt/2: midpoints of the stored nodes, the newest one extrapolated
        for (std::size_t j = 0; j <= m_; ++j) {
            const double w = (j == 0 || j == m_) ? 0.5 * dt_ : dt_;
            for (std::size_t k = 0; k < n_; ++k) {
                const double v = j < m_ ? 0.5 * (hist[j][k] + hist[j + 1][k]) : 1.5 * hist[m_][k] - 0.5 * hist[m_ - 1][k];
                acc[k] += w * v;
            }
        }
        return acc;
    }

    std::vector<double> rhs(const std::vector<double>& u, const std::vector<double>& integral) const
    {
        std::vector<double> grid(g_, 0.0);
        for (std::size_t i = 0; i < g_; ++i) {
            double v = 0.0;
            for (std::size_t k = 0; k < n_; ++k) v += integral[k] * sin_[k * g_ + i];
            grid[i] = fbar_(v);
        }
        std::vector<double> out(n_);
        for (std::size_t k = 0; k < n_; ++k) {
            double proj = 0.0;
            for (std::size_t i = 0; i < g_; ++i) proj += weight_ * grid[i] * sin_[k * g_ + i];
            out[k] = -lambda_[k] * u[k] + proj;
        }
        return out;
    }

    double l_;
    std::size_t n_, g_;
    double h_;
    std::size_t m_;
    double dt_;
    std::function<double(double)> fbar_;
    std::vector<double> sin_;
    std::vector<double> lambda_;
    double weight_ = 0.0;
};

} // namespace oracle
