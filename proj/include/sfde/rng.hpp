#pragma once

// Counter-based random streams (Philox4x32-10). A variate is a pure function of
// (seed, stream id, counter), so ensemble members draw the same numbers no
// matter which thread runs them or in what order.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace sfde {

class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key) noexcept
    {
        ctr = round(ctr, key);
        for (int r = 1; r < 10; ++r) {
            key[0] += 0x9E3779B9u;
            key[1] += 0xBB67AE85u;
            ctr = round(ctr, key);
        }
        return ctr;
    }

private:
    static Counter round(const Counter& c, const Key& k) noexcept
    {
        const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
        const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
        return {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
                static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    }
};

/// One independent stream. `normal_at(i)` is random access; `next_*` walk the counter.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0) noexcept
        : seed_(seed), stream_(stream_id), counter_(counter)
    {
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }
    void set_counter(std::uint64_t c) noexcept { counter_ = c; }

    /// Four raw words for block b.
    Philox4x32::Counter raw_block(std::uint64_t b) const noexcept
    {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                                      static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
        const Philox4x32::Key key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
        return Philox4x32::block(ctr, key);
    }

    /// Uniform in [0, 1) with 53 random bits; index i uses half of block i/2.
    double uniform_at(std::uint64_t i) const noexcept
    {
        const auto w = raw_block(i / 2);
        const std::size_t o = (i % 2) * 2;
        return to_unit(w[o], w[o + 1]);
    }

    /// Standard normal variate number i (Box-Muller on one block per pair).
    double normal_at(std::uint64_t i) const noexcept
    {
        const auto w = raw_block(i / 2);
        const double u1 = 1.0 - to_unit(w[0], w[1]); // (0, 1]
        const double u2 = to_unit(w[2], w[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        return (i % 2 == 0) ? radius * std::cos(angle) : radius * std::sin(angle);
    }

    double next_normal() noexcept { return normal_at(counter_++); }
    double next_uniform() noexcept { return uniform_at(counter_++); }

private:
    static double to_unit(std::uint32_t a, std::uint32_t b) noexcept
    {
        const std::uint64_t bits = (std::uint64_t{a >> 5} << 26) | std::uint64_t{b >> 6};
        return static_cast<double>(bits) * 0x1.0p-53;
    }

    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t counter_ = 0;
};

/// A family of streams sharing a seed, indexed by member. Families with different
/// tags never share a stream id.
class StreamFamily {
public:
    StreamFamily() = default;
    StreamFamily(std::uint64_t seed, std::uint32_t tag) noexcept : seed_(seed), tag_(tag) {}

    RngStream stream(std::uint64_t member) const noexcept
    {
        return RngStream(seed_, (std::uint64_t{tag_} << 40) ^ member);
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint32_t tag() const noexcept { return tag_; }

private:
    std::uint64_t seed_ = 0;
    std::uint32_t tag_ = 0;
};

// Reserved family tags.
inline constexpr std::uint32_t kForwardNoiseTag = 1;
inline constexpr std::uint32_t kBackwardNoiseTag = 2;
inline constexpr std::uint32_t kAuxiliaryTag = 3;

struct TwoSidedFamilies {
    StreamFamily forward;  // W(t), t >= 0
    StreamFamily backward; // V(-t), t < 0
};

/// Independent stream families for the forward and reversed-time halves of a
/// two-sided Q-Wiener path.
inline TwoSidedFamilies extend_two_sided(std::uint64_t seed) noexcept
{
    return {StreamFamily(seed, kForwardNoiseTag), StreamFamily(seed, kBackwardNoiseTag)};
}

} // namespace sfde
