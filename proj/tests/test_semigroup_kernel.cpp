#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

#include <sfde/semigroup_kernel.hpp>

#include <cmath>
#include <numbers>

using namespace sfde;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const double pi = std::numbers::pi;
}

TEST_CASE("modal decay and identity at zero", "[semigroup]")
{
    auto b = build_basis(DomainSpec::bounded(pi), 8);
    const Field e1 = Field::unit(b, 0);
    CHECK_THAT(apply_semigroup(*b, e1, 1.0)[0], WithinAbs(std::exp(-1.0), 1e-15));
    std::vector<double> c{0.3, -1.0, 2.0, 0, 0, 0.1, 0, 5};
    const Field u(b, c);
    CHECK(apply_semigroup(*b, u, 0.0) == u);
    CHECK_THROWS_AS(apply_semigroup(*b, u, -0.1), InvalidArgument);
}

TEST_CASE("whole-line convolution spreads a gaussian", "[semigroup]")
{
    auto b = build_basis(DomainSpec::whole_line(15.0, 601, 2.0), 0);
    auto density = [](double var) {
        return [var](double x) { return std::exp(-x * x / (2 * var)) / std::sqrt(2 * pi * var); };
    };
    const Field u = Field::from_function(b, density(1.0));
    const Field v = apply_semigroup(*b, u, 0.5);
    const Field expect = Field::from_function(b, density(2.0));
    double worst = 0;
    for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(v[i] - expect[i]));
    CHECK(worst < 1e-8);
}

TEST_CASE("green's function values", "[semigroup]")
{
    auto line = build_basis(DomainSpec::whole_line(10.0, 64, 2.0), 0);
    CHECK_THAT(greens_function(*line, 1.0, 0.3, 0.3), WithinAbs(0.28209479, 1e-8));
    CHECK_THAT(greens_function(*line, 1.0, -1.0, 1.0), WithinAbs(0.28209479 * std::exp(-1.0), 1e-8));
    CHECK_THROWS_AS(greens_function(*line, 0.0, 0, 0), InvalidArgument);

    auto b = build_basis(DomainSpec::bounded(pi, 64), 16);
    const double g = greens_function(*b, 2.0, pi / 2, pi / 2);
    CHECK_THAT(g, WithinAbs(oracle::dirichlet_kernel_images(2.0, pi / 2, pi / 2, pi), 1e-12));
    CHECK_THAT(g, WithinAbs(0.086157, 1e-6));
    for (double x : {0.2, 1.1, 2.9})
        for (double y : {0.5, 1.7})
            CHECK_THAT(greens_function(*b, 0.7, x, y), WithinAbs(greens_function(*b, 0.7, y, x), 1e-14));
}

TEST_CASE("bounded kernel agrees with the image sum once resolved", "[semigroup]")
{
    auto b = build_basis(DomainSpec::bounded(2.0, 256), 64);
    for (double t : {0.05, 0.3, 1.0})
        for (double x : {0.1, 0.77, 1.5})
            for (double y : {0.4, 1.0, 1.93})
                CHECK_THAT(greens_function(*b, t, x, y), WithinAbs(oracle::dirichlet_kernel_images(t, x, y, 2.0), 1e-10));
}

TEST_CASE("gaussian kernel bounds", "[semigroup]")
{
    auto line = build_basis(DomainSpec::whole_line(8.0, 128, 2.0), 0);
    const auto rl = verify_kernel_bound(*line, 2.0);
    CHECK(rl.pass);
    CHECK_THAT(rl.worst_ratio, WithinAbs(1.0, 1e-12));

    auto b = build_basis(DomainSpec::bounded(pi, 128), 64);
    const auto rb = verify_kernel_bound(*b, 1.0);
    CHECK(rb.pass);
    CHECK(rb.details["nonnegative"].get<bool>());
    const double c1 = rb.constant("C1_fitted");
    const double ref = 1.0 / std::sqrt(4 * pi);
    CHECK(c1 <= 2 * ref);
    CHECK(c1 >= 0.5 * ref);

    // an envelope that is too tight must fail
    const auto tight = verify_kernel_bound(*line, 2.0, 12, 24, KernelEnvelope{0.2, 0.25});
    CHECK_FALSE(tight.pass);
}

TEST_CASE("weighted smoothing", "[semigroup]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 128), 64);
    const auto rb = verify_weighted_smoothing(*b, {0.05, 0.5, 1.0, 2.0});
    CHECK(rb.pass);
    CHECK(rb.worst_ratio <= 1.0 + 1e-8);

    auto line = build_basis(DomainSpec::whole_line(20.0, 201, 2.0), 0);
    const auto rl = verify_weighted_smoothing(*line, {0.1, 1.0, 2.0});
    CHECK(rl.pass);
    CHECK(std::isfinite(rl.worst_ratio));
    // independent quadrature of the smoothed weight at t = 1
    for (double x : {0.0, 3.0, 7.5}) {
        const double ref = oracle::integrate([&](double y) { return oracle::free_kernel(1.0, x - y) / (1 + y * y); }, -20, 20, 1e-12);
        CHECK_THAT(smoothed_weight(*line, 1.0, x), WithinAbs(ref, 1e-7));
    }
    // small times: ratio tends to one
    for (double x : {-4.0, 0.5, 6.0}) CHECK_THAT(smoothed_weight(*line, 1e-6, x) / weight(x, 2.0), WithinAbs(1.0, 1e-4));
}

TEST_CASE("hilbert-schmidt norm of the delay operator", "[semigroup]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 64), 16);
    std::vector<double> lam(b->eigenvalues().begin(), b->eigenvalues().end());
    const double hs = hilbert_schmidt_norm_delay_op(*b, 1.0, 0.5);
    CHECK_THAT(hs, WithinAbs(oracle::hs_mode_sum(lam, 1.0, 0.5), 1e-10));
    CHECK_THAT(hs, WithinAbs(0.11853, 1e-4));

    auto one = build_basis(DomainSpec::bounded(pi, 16), 1);
    CHECK_THAT(hilbert_schmidt_norm_delay_op(*one, 3.0, 1.0), WithinAbs((std::exp(-4.0) - std::exp(-6.0)) / 2, 1e-10));

    CHECK_THROWS_AS(hilbert_schmidt_norm_delay_op(*b, 0.9, 0.5), InvalidArgument);
    // monotone: decreasing in T0, increasing in h, vanishing as h -> 0
    CHECK(hilbert_schmidt_norm_delay_op(*b, 2.0, 0.5) < hs);
    CHECK(hilbert_schmidt_norm_delay_op(*b, 1.0, 0.4) < hs);
    CHECK(hilbert_schmidt_norm_delay_op(*b, 1.0, 1e-4) < 1e-3);

    auto line = build_basis(DomainSpec::whole_line(10.0, 81, 2.0, 0.5), 0);
    const double w = hilbert_schmidt_norm_delay_op(*line, 1.0, 0.5, 16);
    CHECK(std::isfinite(w));
    CHECK(w > 0);
}

TEST_CASE("exponential decay and semigroup law", "[semigroup]")
{
    auto b = build_basis(DomainSpec::bounded(pi, 64), 16);
    CHECK(verify_exponential_decay(b, 100).pass);
    const Field e2 = Field::unit(b, 1);
    CHECK_THAT(norm_b0(apply_semigroup(*b, e2, 1.0)), WithinAbs(std::exp(-4.0), 1e-15));

    const auto law = verify_semigroup_law(b, 20, 1e-12);
    CHECK(law.pass);
    auto line = build_basis(DomainSpec::whole_line(12.0, 241, 2.0), 0);
    CHECK(verify_semigroup_law(line, 3, 1e-4).pass);

    const auto fit = fit_semigroup_bound(line, 1.0, 3);
    CHECK(fit.pass);
    CHECK(fit.worst_ratio < 10.0);
}
