// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sfde/sfde.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>

#ifndef SFDE_CONFIG_DIR
#define SFDE_CONFIG_DIR "configs"
#endif

using namespace sfde;

namespace {

const double pi = std::numbers::pi;

struct Outcome {
    bool pass = false;
    std::string detail;
};

FullState constant_state(const Field& v, double h, double dt) { return FullState::from_history(DelaySegment::constant(v, h, dt)); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

ModelSpec additive_model(BasisPtr b, std::vector<double> a, double h, double dt, bool diagonal)
{
    auto n = NonlinearitySpec::integral(ScalarMap::constant(0), ScalarMap::constant(1.0));
    if (diagonal) n.coupling = NoiseCoupling::Diagonal;
    return ModelSpec{b, QWienerSpec(b, std::move(a)), n, h, dt};
}

// tanh model with L = (0.05 + 0.05) sqrt(h) = 0.1 at h = 1
ModelSpec tanh_model(BasisPtr b, double dt)
{
    return ModelSpec{b, QWienerSpec(b, {0.5}), NonlinearitySpec::integral(ScalarMap::tanh(0.05), ScalarMap::tanh(0.05, 1.0)), 1.0, dt};
}

Outcome linear_exactness()
{
    auto b = build_basis(DomainSpec::bounded(pi, 64), 16);
    const ModelSpec model{b, QWienerSpec{}, NonlinearitySpec::zero(), 0.5, 0.01};
    const Stepper stepper(model);
    const double amp = 1.3;
    double worst = 0;
    simulate(stepper, constant_state(Field::unit(b, 0, amp), 0.5, 0.01), 500, RngStream{}, 0, [&](std::size_t i, const FullState& s) {
        if (i != 10 && i != 100 && i != 500) return;
        const double exact = amp * std::exp(-0.01 * static_cast<double>(i));
        worst = std::max(worst, std::abs(norm_b0(s.head) - exact) / exact);
    });
    return {worst < 1e-12, fmt("max relative error %.3g at t in {0.1, 1, 5}", worst)};
}

Outcome ito_isometry()
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 1);
    const auto model = additive_model(b, {1.0}, 0.5, 0.1, false);
    const auto stats = run_ensemble(model, constant_state(Field::zero(b), 0.5, 0.1), 1.0, StreamFamily(101, kForwardNoiseTag), 10000,
                                    RunOptions{10, 2, 0, 1});
    const std::size_t last = stats.size() - 1;
    const double target = (1 - std::exp(-2.0)) / 2;
    const double est = stats.mean_b0_sq(last), se = stats.se_b0_sq(last);
    return {std::abs(est - target) <= 3 * se, fmt("variance %.5f vs %.5f, |z| = %.2f", est, target, std::abs(est - target) / se)};
}

Outcome picard_agreement()
{
    const double dt = 0.01, tol = 1e-10;
    auto b = build_basis(DomainSpec::bounded(pi, 32), 16);
    const auto model = tanh_model(b, dt);
    const Stepper stepper(model);
    const auto init = constant_state(Field::unit(b, 0, 1.0), 1.0, dt);
    const auto noise = NoisePath::forward(StreamFamily(103, kForwardNoiseTag).stream(0), 100, stepper.noise_dim());
    const auto res = picard_solve(model, init, noise, 1.0, tol, 0.5);
    if (!res.converged) return {false, "picard did not converge: " + res.message};
    const double d = sup_distance(res.path, stepper_path(model, init, noise, 1.0));
    const double r = res.max_ratio();
    return {d < 5 * (dt + tol) && r < 1.0,
            fmt("L = %.3f, sup distance %.3g (envelope %.3g), max ratio %.3g", model.lipschitz(), d, 5 * (dt + tol), r)};
}

Outcome smallness()
{
    const auto r = smallness_check(1.0, 1.0, 0.5, 0.1);
    const double it = std::round(r.iteration_max_lipschitz * 1e5) / 1e5;
    const double at = std::round(r.attractivity_max_lipschitz * 1e5) / 1e5;
    return {it == 0.44721 && at == 0.24447,
            fmt("iteration L < %.7f, attractivity L < %.7f", r.iteration_max_lipschitz, r.attractivity_max_lipschitz)};
}

Outcome attractivity()
{
    auto b = build_basis(DomainSpec::bounded(pi, 32), 8);
    const double h = 1.0, dt = 0.02;
    const auto lin = additive_model(b, {0.5, 0.25}, h, dt, false);
    const auto a = attractivity_experiment(lin, constant_state(Field::unit(b, 0, 1.0), h, dt), constant_state(Field::zero(b), h, dt), 5.0,
                                           16, StreamFamily(105, kForwardNoiseTag), RunOptions{5, 2, 0, 1});
    const bool lin_ok = std::abs(a.gamma_hat - 2.0) <= 1e-10;

    const auto model = tanh_model(b, dt);
    const auto t = attractivity_experiment(model, constant_state(Field::unit(b, 0, 1.0), h, dt), constant_state(Field::zero(b), h, dt), 6.0,
                                           256, StreamFamily(106, kForwardNoiseTag), RunOptions{5, 2, 0, 1});
    const bool tanh_ok = !t.exploratory && t.gamma_hat + 2 * t.gamma_se >= t.smallness.predicted_rate;
    return {lin_ok && tanh_ok, fmt("additive |gamma - 2| = %.3g; tanh gamma %.4f +- %.4f vs predicted %.4f", std::abs(a.gamma_hat - 2.0),
                                   t.gamma_hat, 2 * t.gamma_se, t.smallness.predicted_rate)};
}

Outcome invariant_measure()
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 4);
    const double h = 0.5, dt = 0.05;
    const std::vector<double> coeff{1.0, 0.5, 0.25, 0.125};
    const auto model = additive_model(b, coeff, h, dt, true);
    const auto fam = ObservableFamily::standard(4);
    const auto zero = constant_state(Field::zero(b), h, dt);
    const double burn = default_burn_in(model);
    const std::size_t n = 2000;
    const auto e1 = ensemble_observables(model, zero, n, {6.0}, burn, fam, StreamFamily(107, kForwardNoiseTag));
    const auto e2 = ensemble_observables(model, zero, n, {12.0}, burn, fam, StreamFamily(108, kForwardNoiseTag));
    double worst_z = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t i = e1.index("u_" + std::to_string(k + 1));
        const double target = coeff[k] / (2.0 * (k + 1.0) * (k + 1.0));
        const double second = e1.variance(i) * (n - 1.0) / n + e1.mean[i] * e1.mean[i];
        const double se = e1.variance(i) * std::sqrt(2.0 / (n - 1.0));
        worst_z = std::max(worst_z, std::abs(second - target) / se);
    }
    const auto inv = invariance_test(e1, e2);
    const auto transient = constant_state(Field::unit(b, 0, 3.0), h, dt);
    const auto early = ensemble_observables(model, transient, n, {0.5}, 0.0, fam, StreamFamily(109, kForwardNoiseTag));
    const auto late = ensemble_observables(model, transient, n, {12.0}, burn, fam, StreamFamily(110, kForwardNoiseTag));
    const auto neg = invariance_test(early, late);
    return {worst_z <= 3 && inv.pass && !neg.pass,
            fmt("moment max |z| %.2f; T vs 2T max |z| %.2f; short burn-in max |z| %.1f (must fail)", worst_z, inv.max_abs_z, neg.max_abs_z)};
}

Outcome moment_bound()
{
    auto b = build_basis(DomainSpec::bounded(pi, 32), 8);
    const double h = 1.0, dt = 0.02;
    const ModelSpec model{b, QWienerSpec(b, {0.5}), NonlinearitySpec::integral(ScalarMap::tanh(0.05), ScalarMap::tanh(0.05, 1.0), 2.0), h,
                          dt};
    const auto rep = moment_bound_experiment(model, constant_state(Field::unit(b, 0, 2.0), h, dt), 256, 50.0,
                                             StreamFamily(111, kForwardNoiseTag), RunOptions{10, 2, 0, 1});
    return {rep.pass && rep.tail_early_ratio <= 1.2,
            fmt("sup E|y|^2 %.4f, tail/early ratio %.4f", rep.sup_mean_b_sq, rep.tail_early_ratio)};
}

Outcome kernel_estimates()
{
    auto b = build_basis(DomainSpec::bounded(pi, 128), 64);
    const auto sb = verify_weighted_smoothing(*b, {0.05, 0.25, 0.5, 1.0, 2.0});
    auto line = build_basis(DomainSpec::whole_line(20.0, 201, 2.0), 0);
    const auto sl = verify_weighted_smoothing(*line, {0.05, 0.25, 0.5, 1.0, 2.0});
    auto b16 = build_basis(DomainSpec::bounded(pi, 64), 16);
    const double hs = hilbert_schmidt_norm_delay_op(*b16, 1.0, 0.5);
    const auto law = verify_semigroup_law(b16, 50, 1e-12);
    const bool ok = sb.pass && sl.pass && std::abs(hs - 0.11853) <= 1e-4 && law.pass;
    return {ok, fmt("smoothing ratio %.4f (bounded) %.4f (line); HS %.7f; semigroup law %.2g", sb.worst_ratio, sl.worst_ratio, hs,
                    law.worst_ratio)};
}

Outcome homogeneity()
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 4);
    const double h = 0.5, dt = 0.05;
    const auto start = constant_state(Field::unit(b, 0, 1.0), h, dt);
    const auto r = homogeneity_test(additive_model(b, {1.0}, h, dt, false), start, {0.0, 1.0, 2.0}, 1.0, 1000,
                                    ObservableFamily::standard(2), StreamFamily(113, kForwardNoiseTag));
    const ModelSpec quiet{b, QWienerSpec{}, NonlinearitySpec::integral(ScalarMap::tanh(0.5), ScalarMap::constant(0)), h, dt};
    const auto q = homogeneity_test(quiet, start, {0.0, 1.0, 2.0}, 1.0, 4, ObservableFamily::standard(2), StreamFamily(1, 1));
    return {r.pass && q.bit_identical, fmt("max |z| %.2f; zero-noise bit-identical %.0f", r.max_abs_z, q.bit_identical ? 1.0 : 0.0)};
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome determinism()
{
    // library level
    auto b = build_basis(DomainSpec::bounded(pi, 32), 8);
    const auto model = tanh_model(b, 0.02);
    const auto init = constant_state(Field::unit(b, 0, 1.0), 1.0, 0.02);
    const StreamFamily fam(115, kForwardNoiseTag);
    const auto s1 = run_ensemble(model, init, 2.0, fam, 37, RunOptions{5, 4, 0, 1}).to_csv();
    const auto s4 = run_ensemble(model, init, 2.0, fam, 37, RunOptions{5, 4, 0, 4}).to_csv();
    bool ok = s1 == s4;

    // artifact level
    const auto work = std::filesystem::temp_directory_path() / "sfde_acceptance_determinism";
    std::filesystem::remove_all(work);
    const std::vector<std::pair<std::string, std::string>> runs{
        {"simulate", "simulate_tanh.json"}, {"stationary", "stationary.json"}, {"attractivity", "attractivity.json"},
        {"invariant", "invariant_ou.json"}, {"homogeneity", "homogeneity.json"}, {"picard", "picard.json"}};
    std::size_t compared = 0;
    for (const auto& [kind, file] : runs) {
        const auto c = parse_config(std::filesystem::path(SFDE_CONFIG_DIR) / file, kind);
        const auto d1 = work / (kind + "_1"), d3 = work / (kind + "_3");
        const int e1 = run_and_write(c, d1, 1), e3 = run_and_write(c, d3, 3);
        for (const char* f : {"series.csv", "report.json"}) {
            const auto a = slurp(d1 / f), z = slurp(d3 / f);
            if (a.empty() || a != z) ok = false;
            ++compared;
        }
        if (e1 != e3) ok = false;
    }
    return {ok, fmt("library CSV identical for 1 vs 4 threads; %.0f artifacts byte-identical for 1 vs 3 threads", ok ? compared : 0.0)};
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"linear flow exactness", linear_exactness},
        {"stochastic convolution variance", ito_isometry},
        {"picard matches stepper", picard_agreement},
        {"smallness thresholds", smallness},
        {"exponential attractivity", attractivity},
        {"invariant measure consistency", invariant_measure},
        {"moment boundedness", moment_bound},
        {"kernel estimates", kernel_estimates},
        {"time homogeneity", homogeneity},
        {"determinism across threads", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2zu %-32s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs, o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
