#pragma once

// Empirical invariant-measure estimation: ensemble observables, Krylov-Bogoliubov
// time averages, invariance and homogeneity tests, tightness and Feller diagnostics.
// Laws are compared only through a fixed finite observable family.

#include <sfde/delay_dynamics.hpp>
#include <sfde/errors.hpp>
#include <sfde/parallel.hpp>
#include <sfde/report.hpp>
#include <sfde/rng.hpp>
#include <sfde/spectral_domain.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sfde {

enum class ObservableKind { Mode, TanhMode, NormB0Sq, NormB1Sq };

struct Observable {
    std::string name;
    ObservableKind kind = ObservableKind::Mode;
    std::size_t mode = 0; // zero-based

    bool bounded_lipschitz() const noexcept { return kind == ObservableKind::TanhMode; }

    double operator()(const FullState& s) const
    {
        switch (kind) {
        case ObservableKind::Mode: return s.head[mode];
        case ObservableKind::TanhMode: return std::tanh(s.head[mode]);
        case ObservableKind::NormB0Sq: return norm_b0_sq(s.head);
        case ObservableKind::NormB1Sq: return norm_b1_sq(s.segment);
        }
        return 0.0;
    }
};

class ObservableFamily {
public:
    ObservableFamily() = default;
    explicit ObservableFamily(std::vector<Observable> obs) : obs_(std::move(obs)) {}

    /// u_1..u_K, tanh(u_1)..tanh(u_K), ||u||_B0^2, ||u_t||_B1^2.
    static ObservableFamily standard(std::size_t k_obs)
    {
        std::vector<Observable> v;
        for (std::size_t k = 0; k < k_obs; ++k) v.push_back({"u_" + std::to_string(k + 1), ObservableKind::Mode, k});
        for (std::size_t k = 0; k < k_obs; ++k) v.push_back({"tanh_u_" + std::to_string(k + 1), ObservableKind::TanhMode, k});
        v.push_back({"norm_B0_sq", ObservableKind::NormB0Sq, 0});
        v.push_back({"norm_B1_sq", ObservableKind::NormB1Sq, 0});
        return ObservableFamily(std::move(v));
    }

    std::size_t size() const noexcept { return obs_.size(); }
    const Observable& operator[](std::size_t i) const { return obs_[i]; }
    std::vector<std::string> names() const
    {
        std::vector<std::string> n;
        for (const auto& o : obs_) n.push_back(o.name);
        return n;
    }

    void check_against(const EigenBasis& basis) const
    {
        for (const auto& o : obs_)
            if ((o.kind == ObservableKind::Mode || o.kind == ObservableKind::TanhMode) && o.mode >= basis.mode_count())
                throw InvalidArgument("observable " + o.name + " refers to a mode beyond N = " + std::to_string(basis.mode_count()));
    }

    void evaluate(const FullState& s, std::vector<double>& out) const
    {
        out.resize(obs_.size());
        for (std::size_t i = 0; i < obs_.size(); ++i) out[i] = obs_[i](s);
    }

private:
    std::vector<Observable> obs_;
};

/// Per-observable mean and variance (Welford sums, Chan merge).
struct MeasureEstimate {
    std::vector<std::string> names;
    std::vector<bool> bounded_lipschitz;
    std::vector<double> mean;
    std::vector<double> m2;
    std::size_t count = 0;
    std::vector<double> sample_times;
    double burn_in = 0.0;

    static MeasureEstimate empty(const ObservableFamily& family, std::vector<double> times = {}, double burn_in = 0.0)
    {
        MeasureEstimate e;
        e.names = family.names();
        for (std::size_t i = 0; i < family.size(); ++i) e.bounded_lipschitz.push_back(family[i].bounded_lipschitz());
        e.mean.assign(family.size(), 0.0);
        e.m2.assign(family.size(), 0.0);
        e.sample_times = std::move(times);
        e.burn_in = burn_in;
        return e;
    }

    std::size_t size() const noexcept { return mean.size(); }

    void add(const std::vector<double>& x)
    {
        ++count;
        const double n = static_cast<double>(count);
        for (std::size_t i = 0; i < mean.size(); ++i) {
            const double d = x[i] - mean[i];
            mean[i] += d / n;
            m2[i] += d * (x[i] - mean[i]);
        }
    }

    void merge(const MeasureEstimate& o)
    {
        if (o.count == 0) return;
        detail::require(o.names == names, "merging estimates of different observable families");
        if (count == 0) {
            mean = o.mean;
            m2 = o.m2;
            count = o.count;
            return;
        }
        const double na = static_cast<double>(count), nb = static_cast<double>(o.count), n = na + nb;
        for (std::size_t i = 0; i < mean.size(); ++i) {
            const double d = o.mean[i] - mean[i];
            mean[i] += d * nb / n;
            m2[i] += o.m2[i] + d * d * na * nb / n;
        }
        count += o.count;
    }

    double variance(std::size_t i) const { return count > 1 ? std::max(0.0, m2[i] / static_cast<double>(count - 1)) : 0.0; }
    double std_error(std::size_t i) const { return count > 0 ? std::sqrt(variance(i) / static_cast<double>(count)) : 0.0; }

    std::size_t index(const std::string& name) const
    {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw InvalidArgument("unknown observable " + name);
    }

    Json to_json() const
    {
        Json obs = Json::array();
        for (std::size_t i = 0; i < size(); ++i)
            obs.push_back({{"name", names[i]}, {"mean", mean[i]}, {"variance", variance(i)}, {"std_error", std_error(i)},
                           {"bounded_lipschitz", static_cast<bool>(bounded_lipschitz[i])}});
        Json j;
        j["ensemble"] = count;
        j["burn_in"] = burn_in;
        j["sample_times"] = sample_times;
        j["observables"] = std::move(obs);
        return j;
    }
};

struct ObservableOptions {
    std::size_t threads = 1;
    std::uint64_t start_step = 0;
    std::size_t first_member = 0;
    std::vector<std::vector<double>>* samples = nullptr;  // per member, one value per observable
    std::vector<FullState>* terminal = nullptr;           // per member, state at the last sample time
};

inline double default_burn_in(const ModelSpec& model) { return 5.0 / model.basis->lambda1() + model.delay; }

/// n independent trajectories; each contributes the average of every observable over
/// the sample times (all > burn_in). A single sample time gives the law of y(t).
inline MeasureEstimate ensemble_observables(const ModelSpec& model, const FullState& initial, std::size_t n_traj,
                                            const std::vector<double>& sample_times, double burn_in,
                                            const ObservableFamily& family, const StreamFamily& streams,
                                            const ObservableOptions& opt = {})
{
    detail::require(n_traj >= 2, "ensemble needs at least two trajectories");
    detail::require(!sample_times.empty(), "no sample times");
    detail::require(std::is_sorted(sample_times.begin(), sample_times.end()), "sample times must be increasing");
    for (double t : sample_times)
        detail::require(t > burn_in, "sample time " + std::to_string(t) + " does not exceed burn-in " + std::to_string(burn_in));
    family.check_against(*model.basis);
    const Stepper stepper(model);
    std::vector<std::size_t> idx;
    for (double t : sample_times) idx.push_back(step_count(t, model.dt));
    const std::size_t steps = idx.back();

    if (opt.samples) opt.samples->assign(n_traj, {});
    std::vector<std::optional<FullState>> terminal(opt.terminal ? n_traj : 0);

    struct Acc {
        MeasureEstimate est;
        std::size_t aborted = 0;
        double first_abort = std::numeric_limits<double>::infinity();
        std::string what;
    };
    auto make = [&] { return Acc{MeasureEstimate::empty(family, sample_times, burn_in), 0, std::numeric_limits<double>::infinity(), {}}; };
    Acc total = ensemble_reduce<Acc>(
        n_traj, opt.threads, make,
        [&](std::size_t m, Acc& acc) {
            std::vector<double> avg(family.size(), 0.0), buf;
            std::size_t cursor = 0;
            try {
                const FullState last = simulate(stepper, initial, steps, streams.stream(opt.first_member + m), opt.start_step,
                                                [&](std::size_t i, const FullState& s) {
                                                    while (cursor < idx.size() && idx[cursor] == i) {
                                                        family.evaluate(s, buf);
                                                        for (std::size_t o = 0; o < buf.size(); ++o) avg[o] += buf[o];
                                                        ++cursor;
                                                    }
                                                });
                for (auto& v : avg) v /= static_cast<double>(idx.size());
                acc.est.add(avg);
                if (opt.samples) (*opt.samples)[m] = avg;
                if (opt.terminal) terminal[m] = last;
            } catch (const NumericalAbort& e) {
                ++acc.aborted;
                if (e.time() < acc.first_abort) {
                    acc.first_abort = e.time();
                    acc.what = e.what();
                }
            }
        },
        [](Acc& a, const Acc& b) {
            a.est.merge(b.est);
            a.aborted += b.aborted;
            if (b.first_abort < a.first_abort) {
                a.first_abort = b.first_abort;
                a.what = b.what;
            }
        });
    if (total.aborted > 0)
        throw NumericalAbort(std::to_string(total.aborted) + " of " + std::to_string(n_traj) + " trajectories aborted (" +
                                 total.what + ")",
                             total.first_abort);
    if (opt.terminal) {
        opt.terminal->clear();
        for (auto& s : terminal) opt.terminal->push_back(std::move(*s));
    }
    return total.est;
}

inline std::string samples_csv(const ObservableFamily& family, const std::vector<std::vector<double>>& samples)
{
    std::ostringstream os;
    os << std::setprecision(17) << "member";
    for (const auto& n : family.names()) os << ',' << n;
    os << '\n';
    for (std::size_t m = 0; m < samples.size(); ++m) {
        os << m;
        for (double v : samples[m]) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

struct KrylovBogoliubovResult {
    std::vector<double> horizons;
    std::vector<MeasureEstimate> averages; // (1/T) int_0^T phi(y(t)) dt per horizon
    std::vector<double> cauchy_gaps;       // max_phi |avg(T_{i+1}) - avg(T_i)|

    Json to_json() const
    {
        Json j;
        j["horizons"] = horizons;
        j["cauchy_gaps"] = cauchy_gaps;
        Json a = Json::array();
        for (const auto& e : averages) a.push_back(e.to_json());
        j["averages"] = std::move(a);
        return j;
    }
};

/// Time averages mu_T(phi) = (1/T) int_0^T phi(y(t)) dt (trapezoid on the step grid) per trajectory,
/// aggregated over the ensemble for every T of an increasing grid.
inline KrylovBogoliubovResult krylov_bogoliubov_average(const ModelSpec& model, const FullState& initial,
                                                        const std::vector<double>& horizons, std::size_t n_traj,
                                                        const ObservableFamily& family, const StreamFamily& streams,
                                                        std::size_t threads = 1)
{
    detail::require(!horizons.empty(), "empty horizon grid");
    detail::require(n_traj >= 2, "ensemble needs at least two trajectories");
    for (std::size_t i = 0; i < horizons.size(); ++i)
        detail::require(horizons[i] > 0 && (i == 0 || horizons[i] > horizons[i - 1]), "horizon grid must be positive and increasing");
    family.check_against(*model.basis);
    const Stepper stepper(model);
    std::vector<std::size_t> idx;
    for (double t : horizons) idx.push_back(step_count(t, model.dt));
    const std::size_t steps = idx.back();
    const double dt = model.dt;

    using Acc = std::vector<MeasureEstimate>;
    auto make = [&] {
        Acc a;
        for (double t : horizons) a.push_back(MeasureEstimate::empty(family, {t}, 0.0));
        return a;
    };
    Acc total = ensemble_reduce<Acc>(
        n_traj, threads, make,
        [&](std::size_t m, Acc& acc) {
            std::vector<double> integral(family.size(), 0.0), prev, cur;
            std::size_t cursor = 0;
            simulate(stepper, initial, steps, streams.stream(m), 0, [&](std::size_t i, const FullState& s) {
                family.evaluate(s, cur);
                if (i > 0)
                    for (std::size_t o = 0; o < cur.size(); ++o) integral[o] += 0.5 * dt * (prev[o] + cur[o]);
                prev = cur;
                while (cursor < idx.size() && idx[cursor] == i) {
                    std::vector<double> avg(integral);
                    for (auto& v : avg) v /= horizons[cursor];
                    acc[cursor].add(avg);
                    ++cursor;
                }
            });
        },
        [](Acc& a, const Acc& b) {
            for (std::size_t i = 0; i < a.size(); ++i) a[i].merge(b[i]);
        });

    KrylovBogoliubovResult res;
    res.horizons = horizons;
    res.averages = std::move(total);
    for (std::size_t i = 1; i < res.averages.size(); ++i) {
        double g = 0.0;
        for (std::size_t o = 0; o < family.size(); ++o)
            g = std::max(g, std::abs(res.averages[i].mean[o] - res.averages[i - 1].mean[o]));
        res.cauchy_gaps.push_back(g);
    }
    return res;
}

struct InvarianceReport {
    std::vector<std::string> names;
    std::vector<double> z;
    double max_abs_z = 0.0;
    std::string worst;
    double bl_max_gap = 0.0;       // bounded-Lipschitz subfamily, max |mean gap|
    double bl_gap_allowance = 0.0; // threshold x pooled SE at that observable
    bool bl_ok = true;
    double threshold = 3.0;
    bool pass = false;

    Json to_json() const
    {
        Json zs = Json::object();
        for (std::size_t i = 0; i < names.size(); ++i) zs[names[i]] = std::isfinite(z[i]) ? Json(z[i]) : Json("inf");
        Json j;
        j["z_threshold"] = threshold;
        j["max_abs_z"] = std::isfinite(max_abs_z) ? Json(max_abs_z) : Json("inf");
        j["worst_observable"] = worst;
        j["bounded_lipschitz_max_gap"] = bl_max_gap;
        j["bounded_lipschitz_ok"] = bl_ok;
        j["z"] = std::move(zs);
        j["pass"] = pass;
        return j;
    }
};

namespace detail {

inline double z_score(double ma, double sa, double mb, double sb)
{
    const double pooled = std::sqrt(sa * sa + sb * sb);
    const double gap = ma - mb;
    if (pooled > 0) return gap / pooled;
    const double scale = std::max({1.0, std::abs(ma), std::abs(mb)});
    // point masses on both sides: equal up to rounding or infinitely far apart
    return std::abs(gap) <= 1e-9 * scale ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), gap);
}

} // namespace detail

/// Compares two empirical laws observable by observable. Symmetric in its arguments.
inline InvarianceReport invariance_test(const MeasureEstimate& a, const MeasureEstimate& b, double threshold = 3.0)
{
    detail::require(a.names == b.names, "estimates use different observable families");
    detail::require(a.count >= 2 && b.count >= 2, "estimates need at least two samples each");
    InvarianceReport r;
    r.names = a.names;
    r.threshold = threshold;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double z = detail::z_score(a.mean[i], a.std_error(i), b.mean[i], b.std_error(i));
        r.z.push_back(z);
        if (r.worst.empty() || std::abs(z) > r.max_abs_z) {
            r.max_abs_z = std::abs(z);
            r.worst = a.names[i];
        }
        if (a.bounded_lipschitz[i]) {
            const double gap = std::abs(a.mean[i] - b.mean[i]);
            const double allow = threshold * std::sqrt(a.std_error(i) * a.std_error(i) + b.std_error(i) * b.std_error(i));
            if (gap > r.bl_max_gap) {
                r.bl_max_gap = gap;
                r.bl_gap_allowance = allow;
            }
            if (std::abs(z) > threshold) r.bl_ok = false;
        }
    }
    r.pass = r.max_abs_z <= threshold && r.bl_ok;
    return r;
}

struct HomogeneityReport {
    std::vector<double> offsets;
    double lag = 0.0;
    std::vector<MeasureEstimate> estimates;
    double max_abs_z = 0.0;
    std::string worst;
    bool bit_identical = false; // all terminal states equal across offsets
    double threshold = 3.0;
    bool pass = false;

    Json to_json() const
    {
        Json e = Json::array();
        for (const auto& x : estimates) e.push_back(x.to_json());
        Json j;
        j["offsets"] = offsets;
        j["lag"] = lag;
        j["z_threshold"] = threshold;
        j["max_abs_z"] = std::isfinite(max_abs_z) ? Json(max_abs_z) : Json("inf");
        j["worst_observable"] = worst;
        j["bit_identical"] = bit_identical;
        j["estimates"] = std::move(e);
        j["pass"] = pass;
        return j;
    }
};

/// Re-imposes the same initial data at every start offset s and compares the laws at
/// time s + lag pairwise. Noise for offset s is read from global step s/dt onward.
inline HomogeneityReport homogeneity_test(const ModelSpec& model, const FullState& initial, const std::vector<double>& offsets,
                                          double lag, std::size_t n_traj, const ObservableFamily& family,
                                          const StreamFamily& streams, std::size_t threads = 1, double threshold = 3.0)
{
    detail::require(offsets.size() >= 2, "need at least two offsets");
    detail::require(lag > 0, "lag must be positive");
    HomogeneityReport r;
    r.offsets = offsets;
    r.lag = lag;
    r.threshold = threshold;
    std::vector<std::vector<FullState>> terminal(offsets.size());
    for (std::size_t o = 0; o < offsets.size(); ++o) {
        detail::require(offsets[o] >= 0, "offsets must be nonnegative");
        ObservableOptions opt;
        opt.threads = threads;
        opt.start_step = step_count(offsets[o], model.dt);
        opt.terminal = &terminal[o];
        r.estimates.push_back(ensemble_observables(model, initial, n_traj, {lag}, 0.0, family, streams, opt));
    }
    r.bit_identical = true;
    for (std::size_t o = 1; o < offsets.size(); ++o)
        for (std::size_t m = 0; m < n_traj; ++m)
            if (!(terminal[o][m].head == terminal[0][m].head)) r.bit_identical = false;
    for (std::size_t a = 0; a < offsets.size(); ++a)
        for (std::size_t b = a + 1; b < offsets.size(); ++b)
            for (std::size_t i = 0; i < family.size(); ++i) {
                const auto& ea = r.estimates[a];
                const auto& eb = r.estimates[b];
                const double z = std::abs(detail::z_score(ea.mean[i], ea.std_error(i), eb.mean[i], eb.std_error(i)));
                if (r.worst.empty() || z > r.max_abs_z) {
                    r.max_abs_z = z;
                    r.worst = ea.names[i];
                }
            }
    r.pass = r.max_abs_z <= threshold;
    return r;
}

struct TightnessReport {
    std::vector<double> levels;
    std::vector<double> norm_tail;      // P(||y||_B > r)
    std::vector<double> high_mode_tail; // P(sum_{k > N/2} u_k^2 > r E||u||_B0^2)
    std::vector<double> chebyshev;      // E||y||_B^2 / r^2
    bool chebyshev_ok = true;
    double second_moment = 0.0;         // E||y||_B^2
    double high_mode_fraction = 0.0;    // E sum_{k > N/2} u_k^2 / E||u||_B0^2
    std::optional<double> tail_exponent;
    std::size_t ensemble = 0;
    bool pass = false;

    Json to_json() const
    {
        Json j;
        j["ensemble"] = ensemble;
        j["levels"] = levels;
        j["norm_tail"] = norm_tail;
        j["high_mode_tail"] = high_mode_tail;
        j["chebyshev_bound"] = chebyshev;
        j["chebyshev_ok"] = chebyshev_ok;
        j["E_norm_B_sq"] = second_moment;
        j["high_mode_fraction"] = high_mode_fraction;
        j["tail_exponent"] = tail_exponent ? Json(*tail_exponent) : Json(nullptr);
        j["pass"] = pass;
        return j;
    }
};

/// Two-part proxy for membership in the compact sets of the tightness argument:
/// a norm level and the high-mode energy. Passes iff both tails are non-increasing in r.
inline TightnessReport tightness_diagnostic(const std::vector<FullState>& states, const std::vector<double>& levels)
{
    detail::require(!states.empty(), "no states");
    detail::require(!levels.empty(), "no levels");
    for (std::size_t i = 0; i < levels.size(); ++i)
        detail::require(levels[i] > 0 && (i == 0 || levels[i] > levels[i - 1]), "levels must be positive and increasing");
    TightnessReport r;
    r.levels = levels;
    r.ensemble = states.size();
    const double n = static_cast<double>(states.size());
    const std::size_t modes = states.front().head.size();
    std::vector<double> norm(states.size()), high(states.size());
    double b0 = 0.0, hi = 0.0;
    for (std::size_t m = 0; m < states.size(); ++m) {
        norm[m] = norm_b(states[m]);
        r.second_moment += norm[m] * norm[m] / n;
        const auto v = states[m].head.values();
        double e = 0.0;
        for (std::size_t k = modes / 2; k < modes; ++k) e += v[k] * v[k];
        high[m] = e;
        hi += e / n;
        b0 += norm_b0_sq(states[m].head) / n;
    }
    r.high_mode_fraction = b0 > 0 ? hi / b0 : 0.0;
    std::vector<double> lx, ly;
    for (double lev : levels) {
        double pn = 0.0, ph = 0.0;
        for (std::size_t m = 0; m < states.size(); ++m) {
            if (norm[m] > lev) pn += 1.0 / n;
            if (high[m] > lev * b0) ph += 1.0 / n;
        }
        r.norm_tail.push_back(pn);
        r.high_mode_tail.push_back(ph);
        const double cheb = r.second_moment / (lev * lev);
        r.chebyshev.push_back(cheb);
        if (pn > cheb + 3.0 * std::sqrt(pn * (1.0 - pn) / n) + 1e-15) r.chebyshev_ok = false;
        if (pn > 0) {
            lx.push_back(std::log(lev));
            ly.push_back(std::log(pn));
        }
    }
    if (lx.size() >= 2) {
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            mx += lx[i];
            my += ly[i];
        }
        mx /= static_cast<double>(lx.size());
        my /= static_cast<double>(lx.size());
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sxx += (lx[i] - mx) * (lx[i] - mx);
            sxy += (lx[i] - mx) * (ly[i] - my);
        }
        r.tail_exponent = -sxy / sxx;
    }
    bool mono = true;
    for (std::size_t i = 1; i < levels.size(); ++i)
        if (r.norm_tail[i] > r.norm_tail[i - 1] || r.high_mode_tail[i] > r.high_mode_tail[i - 1]) mono = false;
    r.pass = mono;
    return r;
}

struct FellerReport {
    std::vector<double> scales;
    std::vector<double> initial_gap;   // E||phi - phi_1||_B^2
    std::vector<double> sup_gap;       // sup_t E||y - y_1||_B^2
    std::vector<double> ratios;        // per positive scale
    double max_ratio = 0.0;
    double median_ratio = 0.0;
    double plateau_factor = 2.0;
    bool pass = false;

    Json to_json() const
    {
        Json j;
        j["scales"] = scales;
        j["initial_gap"] = initial_gap;
        j["sup_gap"] = sup_gap;
        j["ratios"] = ratios;
        j["max_ratio"] = max_ratio;
        j["median_ratio"] = median_ratio;
        j["plateau_factor"] = plateau_factor;
        j["pass"] = pass;
        return j;
    }
};

/// phi + eps * direction applied to the head and every history node.
inline FullState perturbed(const FullState& phi, const FullState& direction, double eps)
{
    detail::require(phi.segment.node_count() == direction.segment.node_count(), "perturbation grid mismatch");
    std::vector<Field> nodes;
    for (std::size_t j = 0; j < phi.segment.node_count(); ++j) nodes.push_back(phi.segment.node(j) + eps * direction.segment.node(j));
    return FullState{phi.head + eps * direction.head, DelaySegment(std::move(nodes), phi.segment.delay(), phi.segment.dt())};
}

/// Continuous dependence on initial data under shared noise: the ratio
/// sup_{t <= T} E||y - y_1||_B^2 / E||phi - phi_1||_B^2 per perturbation scale.
/// Passes iff the largest ratio is within plateau_factor of the median.
inline FellerReport feller_perturbation_test(const ModelSpec& model, const FullState& phi, const FullState& direction,
                                             const std::vector<double>& scales, double horizon, std::size_t n_traj,
                                             const StreamFamily& streams, std::size_t threads = 1,
                                             double plateau_factor = 2.0)
{
    detail::require(!scales.empty(), "no perturbation scales");
    for (std::size_t i = 0; i < scales.size(); ++i)
        detail::require(scales[i] >= 0 && (i == 0 || scales[i] < scales[i - 1]), "scales must decrease toward 0");
    const Stepper stepper(model);
    const std::size_t steps = step_count(horizon, model.dt);
    const auto idx = record_indices(steps, 1);
    FellerReport r;
    r.scales = scales;
    r.plateau_factor = plateau_factor;
    for (double eps : scales) {
        const FullState phi1 = perturbed(phi, direction, eps);
        using Acc = std::vector<double>;
        const Acc mean = ensemble_reduce<Acc>(
            n_traj, threads, [&] { return Acc(idx.size(), 0.0); },
            [&](std::size_t m, Acc& acc) {
                const auto d = paired_distance_series(stepper, phi, phi1, steps, idx, streams.stream(m));
                for (std::size_t i = 0; i < d.size(); ++i) acc[i] += d[i];
            },
            [](Acc& a, const Acc& b) {
                for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
            });
        const double n = static_cast<double>(n_traj);
        double sup = 0.0;
        for (double v : mean) sup = std::max(sup, v / n);
        const double init = mean.front() / n;
        r.initial_gap.push_back(init);
        r.sup_gap.push_back(sup);
        if (init > 0) r.ratios.push_back(sup / init);
    }
    if (r.ratios.empty()) {
        r.pass = std::all_of(r.sup_gap.begin(), r.sup_gap.end(), [](double v) { return v == 0.0; });
        return r;
    }
    auto sorted = r.ratios;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t h = sorted.size() / 2;
    r.median_ratio = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
    r.max_ratio = sorted.back();
    r.pass = std::isfinite(r.max_ratio) && r.max_ratio <= plateau_factor * r.median_ratio;
    return r;
}

} // namespace sfde
