#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

#include <sfde/delay_dynamics.hpp>

#include <cmath>
#include <numbers>

using namespace sfde;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const double pi = std::numbers::pi;

ModelSpec deterministic(BasisPtr b, NonlinearitySpec n, double h, double dt)
{
    return ModelSpec{b, QWienerSpec{}, std::move(n), h, dt};
}

FullState constant_state(const Field& v, double h, double dt) { return FullState::from_history(DelaySegment::constant(v, h, dt)); }

} // namespace

TEST_CASE("eval_f examples", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 64), 8);
    const auto seg = DelaySegment::constant(Field::unit(b, 0, 0.7), 1.0, 0.05);
    CHECK(eval_f(NonlinearitySpec::zero(), seg) == Field::zero(b));

    const Field id = eval_f(NonlinearitySpec::integral(ScalarMap::linear(1.0), ScalarMap::constant(0)), seg);
    CHECK_THAT(id[0], WithinAbs(0.7, 1e-12));
    for (std::size_t k = 1; k < 8; ++k) CHECK_THAT(id[k], WithinAbs(0.0, 1e-12));

    // 2 tanh(v) against a direct grid evaluation and projection
    const auto seg2 = DelaySegment::constant(Field::unit(b, 0, 0.5), 1.0, 0.05);
    const Field th = eval_f(NonlinearitySpec::integral(ScalarMap::tanh(2.0), ScalarMap::constant(0)), seg2);
    const double dx = pi / 65.0;
    for (std::size_t k = 0; k < 8; ++k) {
        double c = 0;
        for (int i = 1; i <= 64; ++i) {
            const double x = i * dx;
            const double e1 = std::sqrt(2 / pi) * std::sin(x);
            c += dx * 2.0 * std::tanh(0.5 * e1) * std::sqrt(2 / pi) * std::sin((k + 1) * x);
        }
        CHECK_THAT(th[k], WithinAbs(c, 1e-12));
    }
}

TEST_CASE("eval_sigma examples", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 32), 6);
    const auto seg = DelaySegment::constant(Field::unit(b, 0, 30.0), 0.5, 0.05);
    CHECK(eval_sigma(NonlinearitySpec::zero(), seg) == Field::zero(b));
    for (double v : eval_sigma_grid(NonlinearitySpec::integral(ScalarMap::constant(0), ScalarMap::constant(1.0)), seg))
        CHECK(v == 1.0);
    const auto clipped = NonlinearitySpec::integral(ScalarMap::constant(0), ScalarMap::linear(100.0), 2.0);
    bool hit = false;
    for (double v : eval_sigma_grid(clipped, seg)) {
        CHECK(std::abs(v) <= 2.0);
        hit = hit || v == 2.0;
    }
    CHECK(hit);
}

TEST_CASE("lipschitz probe", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 32), 6);
    const auto pairs = random_segment_pairs(b, 1.0, 0.1, 17);
    const auto zero = lipschitz_probe(NonlinearitySpec::zero(), pairs, 20);
    CHECK(zero.estimate == 0.0);
    CHECK(zero.pass);

    const auto id = lipschitz_probe(NonlinearitySpec::integral(ScalarMap::linear(1.0), ScalarMap::constant(0)), pairs, 40);
    CHECK(id.pass);
    CHECK(id.estimate <= 1.0 + 1e-9);

    const double h = 0.5;
    const auto pairs_h = random_segment_pairs(b, h, 0.05, 3);
    const auto th = lipschitz_probe(NonlinearitySpec::integral(ScalarMap::tanh(3.0), ScalarMap::tanh(0.5)), pairs_h, 40);
    CHECK(th.pass);
    CHECK_THAT(th.declared, WithinAbs(3.5 * std::sqrt(h), 1e-14));
    CHECK(th.estimate_f <= 3.0 * std::sqrt(h) * (1 + 1e-9));

    // a custom map that understates its constant is caught
    auto bad = NonlinearitySpec::custom([](const DelaySegment& s) { return 5.0 * s.newest(); }, nullptr, 0.1);
    CHECK_FALSE(lipschitz_probe(bad, pairs, 10).pass);
}

TEST_CASE("linear flow is exact", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 64), 16);
    std::vector<double> c(16);
    for (std::size_t k = 0; k < 16; ++k) c[k] = 1.0 / (1.0 + k) * (k % 2 ? -1 : 1);
    const Field u0(b, c);
    const auto model = deterministic(b, NonlinearitySpec::zero(), 0.5, 0.01);
    const Stepper stepper(model);
    double worst = 0;
    simulate(stepper, constant_state(u0, 0.5, 0.01), 500, RngStream{}, 0, [&](std::size_t i, const FullState& s) {
        if (i != 10 && i != 100 && i != 500) return;
        const double t = 0.01 * static_cast<double>(i);
        for (std::size_t k = 0; k < 16; ++k) worst = std::max(worst, std::abs(s.head[k] - c[k] * std::exp(-b->eigenvalue(k) * t)));
    });
    CHECK(worst < 1e-12);

    const auto stats = run_trajectory(model, constant_state(Field::unit(b, 0), 0.5, 0.01), 2.0, RngStream{});
    for (std::size_t i = 0; i < stats.size(); ++i)
        CHECK_THAT(std::sqrt(stats.mean_b0_sq(i)), WithinAbs(std::exp(-stats.times()[i]), 1e-13));
}

TEST_CASE("zero horizon records only the initial state", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 4);
    const auto stats = run_trajectory(deterministic(b, NonlinearitySpec::zero(), 0.5, 0.1), constant_state(Field::unit(b, 0), 0.5, 0.1),
                                      0.0, RngStream{});
    CHECK(stats.size() == 1);
    CHECK(stats.mean_b0_sq(0) == 1.0);
    CHECK_THROWS_AS(step_count(1.05, 0.1), InvalidArgument);
}

TEST_CASE("ornstein-uhlenbeck variance", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 1);
    const ModelSpec model{b, QWienerSpec(b, {1.0}), NonlinearitySpec::integral(ScalarMap::constant(0), ScalarMap::constant(1.0)), 0.5,
                          0.1};
    const auto stats = run_ensemble(model, constant_state(Field::zero(b), 0.5, 0.1), 1.0, StreamFamily(42, kForwardNoiseTag), 10000,
                                    RunOptions{10, 2, 0, 1});
    const std::size_t last = stats.size() - 1;
    const double target = oracle::ou_variance(1.0, 1.0, 1.0);
    CHECK_THAT(target, WithinAbs(0.43233, 1e-5));
    CHECK(std::abs(stats.mean_b0_sq(last) - target) < 3.0 * stats.se_b0_sq(last));
}

TEST_CASE("point delay matches the method of steps", "[dynamics]")
{
    // single mode, u' = -u + c u(t - h), constant history u0
    const double c = 0.1, h = 0.5, u0 = 1.0;
    auto phi1 = [&](double s) { return u0 * std::exp(-s) + c * u0 * (1 - std::exp(-s)); }; // exact on [0, h]
    auto exact = [&](double t) {
        if (t <= h) return phi1(t);
        const double tail = oracle::integrate([&](double s) { return std::exp(-(t - s)) * c * phi1(s - h); }, h, t, 1e-13);
        return std::exp(-(t - h)) * phi1(h) + tail;
    };
    auto b = build_basis(DomainSpec::bounded(pi, 16), 1);
    auto error = [&](double dt) {
        const auto model = deterministic(b, NonlinearitySpec::point_delay(ScalarMap::linear(c)), h, dt);
        const Stepper stepper(model);
        const std::size_t steps = step_count(1.0, dt);
        double worst = 0;
        simulate(stepper, constant_state(Field::unit(b, 0, u0), h, dt), steps, RngStream{}, 0, [&](std::size_t i, const FullState& s) {
            worst = std::max(worst, std::abs(s.head[0] - exact(dt * static_cast<double>(i))));
        });
        return worst;
    };
    const double e1 = error(0.01), e2 = error(0.005);
    CHECK(e1 < 1e-3);
    CHECK(e1 / e2 > 1.6);
    CHECK(e1 / e2 < 2.4);
}

TEST_CASE("integral delay converges to a dense reference", "[dynamics]")
{
    const double l = pi, h = 0.5, T = 1.0;
    const std::size_t modes = 4, grid = 32;
    const oracle::DelayGalerkinReference ref(l, modes, grid, h, 500, [](double v) { return 0.8 * std::tanh(v) + 0.2; });
    const std::vector<double> u0{1.0, -0.5, 0.25, 0.1};
    const auto dense = ref.run(u0, static_cast<std::size_t>(std::round(T / ref.dt())));
    auto b = build_basis(DomainSpec::bounded(l, grid), modes);
    auto error = [&](double dt) {
        const auto model = deterministic(b, NonlinearitySpec::integral(ScalarMap::tanh(0.8, 0.2), ScalarMap::constant(0)), h, dt);
        const Stepper stepper(model);
        const auto fin = simulate(stepper, constant_state(Field(b, u0), h, dt), step_count(T, dt), RngStream{}, 0,
                                  [](std::size_t, const FullState&) {});
        double e = 0;
        for (std::size_t k = 0; k < modes; ++k) e = std::max(e, std::abs(fin.head[k] - dense.back()[k]));
        return e;
    };
    const double e1 = error(0.02), e2 = error(0.01);
    CHECK(e1 < 5e-3);
    CHECK(e1 / e2 > 1.6);
    CHECK(e1 / e2 < 2.5);
}

TEST_CASE("additive noise cancels in differences", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 32), 6);
    const double h = 0.5, dt = 0.01;
    const auto nl = NonlinearitySpec::integral(ScalarMap::linear(0.3), ScalarMap::constant(0.7));
    const ModelSpec noisy{b, QWienerSpec::geometric(b, 6, 0.5), nl, h, dt};
    auto quiet = noisy;
    quiet.noise = QWienerSpec(b, {});
    const Field a = Field::unit(b, 0, 1.0) + Field::unit(b, 2, -0.4);
    const Field c = Field::unit(b, 1, 0.3);
    const auto idx = record_indices(200, 1);
    const Stepper s_noisy(noisy);
    RngStream rng(8, 8);
    std::vector<Field> d_noisy;
    FullState y1 = constant_state(a, h, dt), y2 = constant_state(c, h, dt);
    std::vector<double> xi;
    FullState z = constant_state(a - c, h, dt);
    const Stepper s_quiet(quiet);
    double worst = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        s_noisy.draw(rng, i, xi);
        s_noisy.advance(y1, xi, 0);
        s_noisy.advance(y2, xi, 0);
        s_quiet.advance(z, {}, 0);
        const Field d = y1.head - y2.head;
        for (std::size_t k = 0; k < 6; ++k) worst = std::max(worst, std::abs(d[k] - z.head[k]));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("mean-square continuity at the start", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 4);
    const double h = 0.16, dt = 0.01;
    const ModelSpec model{b, QWienerSpec(b, {1.0, 0.5}),
                          NonlinearitySpec::integral(ScalarMap::tanh(0.5), ScalarMap::tanh(0.5, 1.0)), h, dt};
    const Stepper stepper(model);
    const auto init = FullState::from_history(DelaySegment::from_function(h, dt, [&](double th) { return Field::unit(b, 0, 1 + th); }));
    std::vector<double> means;
    for (std::size_t steps : {16u, 8u, 4u, 2u, 1u}) {
        double acc = 0;
        const int n = 400;
        for (int m = 0; m < n; ++m) {
            const auto fin = simulate(stepper, init, steps, StreamFamily(5, kForwardNoiseTag).stream(m), 0,
                                      [](std::size_t, const FullState&) {});
            for (std::size_t j = 0; j < fin.segment.node_count(); ++j)
                acc += fin.segment.trapezoid_weight(j) * norm_b0_sq(fin.segment.node(j) - init.segment.node(j));
        }
        means.push_back(acc / n);
    }
    for (std::size_t i = 1; i < means.size(); ++i) CHECK(means[i] < means[i - 1]);
    CHECK(means.back() < 0.1 * means.front());
}

TEST_CASE("continuous dependence on initial data", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 4);
    const double h = 0.2, dt = 0.02;
    const ModelSpec model{b, QWienerSpec(b, {1.0, 0.5}),
                          NonlinearitySpec::integral(ScalarMap::tanh(0.8), ScalarMap::tanh(0.3, 0.5)), h, dt};
    const Stepper stepper(model);
    const Field base = Field::unit(b, 0, 1.0);
    const auto idx = record_indices(100, 5);
    std::vector<double> ratios;
    for (int j = 0; j < 5; ++j) {
        const double eps = std::pow(0.5, j);
        const Field pert = Field::unit(b, 1, eps);
        const auto y1 = constant_state(base, h, dt), y2 = constant_state(base + pert, h, dt);
        const double d0 = distance_b_sq(y1, y2);
        double sup = 0;
        std::vector<double> mean(idx.size(), 0);
        for (int m = 0; m < 50; ++m) {
            const auto d = paired_distance_series(stepper, y1, y2, 100, idx, StreamFamily(6, kForwardNoiseTag).stream(m));
            for (std::size_t i = 0; i < d.size(); ++i) mean[i] += d[i] / 50;
        }
        for (double v : mean) sup = std::max(sup, v);
        ratios.push_back(sup / d0);
    }
    for (double r : ratios) {
        CHECK(std::isfinite(r));
        CHECK(r < 5.0);
    }
    CHECK(*std::max_element(ratios.begin(), ratios.end()) / *std::min_element(ratios.begin(), ratios.end()) < 2.0);
}

TEST_CASE("moment bound experiment", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 4);
    const double h = 0.5, dt = 0.05;
    const auto init = constant_state(Field::unit(b, 0, 0.5), h, dt);
    const auto quiet = moment_bound_experiment(deterministic(b, NonlinearitySpec::zero(), h, dt), init, 4, 5.0,
                                               StreamFamily(1, kForwardNoiseTag));
    CHECK(quiet.pass);
    CHECK_THAT(quiet.sup_mean_b_sq, WithinAbs(quiet.initial_mean_b_sq, 1e-15));

    const ModelSpec bounded{b, QWienerSpec(b, {0.5, 0.25}),
                            NonlinearitySpec::integral(ScalarMap::tanh(0.2), ScalarMap::tanh(0.2, 1.0), 2.0), h, dt};
    const auto rep = moment_bound_experiment(bounded, init, 64, 20.0, StreamFamily(2, kForwardNoiseTag));
    CHECK(std::isfinite(rep.sup_mean_b_sq));
    CHECK(rep.pass);

    const ModelSpec unbounded{b, QWienerSpec(b, {0.5}), NonlinearitySpec::integral(ScalarMap::linear(0.2), ScalarMap::linear(1.0)), h,
                              dt};
    CHECK_THROWS_WITH(moment_bound_experiment(unbounded, init, 4, 1.0, StreamFamily(1, 1)),
                      Catch::Matchers::ContainsSubstring("f is not bounded") && Catch::Matchers::ContainsSubstring("clip"));
}

TEST_CASE("blow-up aborts with the failing time", "[dynamics]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 2);
    const auto model = deterministic(b, NonlinearitySpec::point_delay(ScalarMap::linear(1e300)), 0.1, 0.05);
    const Stepper stepper(model);
    FullState s = constant_state(Field::unit(b, 0, 1e10), 0.1, 0.05);
    try {
        simulate(stepper, s, 10, RngStream{}, 0, [](std::size_t, const FullState&) {});
        FAIL("expected an abort");
    } catch (const NumericalAbort& e) {
        CHECK(std::isfinite(e.time()));
        CHECK(e.time() > 0);
    }
}

TEST_CASE("model validation", "[dynamics][validation]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 16), 2);
    ModelSpec m = deterministic(b, NonlinearitySpec::zero(), 1.0, 0.3);
    CHECK_THROWS_WITH(Stepper(m), Catch::Matchers::ContainsSubstring("does not divide"));
    auto line = build_basis(DomainSpec::whole_line(5, 32, 2), 0);
    CHECK_FALSE(deterministic(line, NonlinearitySpec::zero(), 1.0, 0.1).violations().empty());
}
