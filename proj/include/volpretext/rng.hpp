#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace vpx {

// Counter-based deterministic generator with PCG64 semantics
// (setseq_xsl_rr_128_64: 128-bit LCG state, stream-selectable increment,
// XSL-RR output). Identical (seed, stream) yields the identical scalar
// sequence on every platform; distinct streams are independent sequences.
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        inc_ = (static_cast<u128>(stream) << 1u) | 1u;
        state_ = 0u;
        step();
        state_ += static_cast<u128>(seed);
        step();
    }

    std::uint64_t next_u64() {
        const u128 old = state_;
        step();
        const std::uint64_t xored =
            static_cast<std::uint64_t>(old >> 64) ^ static_cast<std::uint64_t>(old);
        const unsigned rot = static_cast<unsigned>(old >> 122);
        return (xored >> rot) | (xored << ((64u - rot) & 63u));
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    float next_float() {
        return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
    }

    // Uniform in [0, bound) via Lemire's multiply-shift rejection.
    std::uint64_t bounded(std::uint64_t bound) {
        if (bound <= 1) return 0;
        while (true) {
            const std::uint64_t x = next_u64();
            const u128 m = static_cast<u128>(x) * static_cast<u128>(bound);
            const std::uint64_t lo = static_cast<std::uint64_t>(m);
            if (lo >= bound || lo >= (-bound) % bound) {
                return static_cast<std::uint64_t>(m >> 64);
            }
        }
    }

    // Standard normal via Box-Muller; the paired draw is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Fisher-Yates.
    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = bounded(i);
            std::swap(first[i - 1], first[j]);
        }
    }

  private:
    using u128 = unsigned __int128;
    static constexpr u128 mult() {
        return (static_cast<u128>(0x2360ed051fc65da4ull) << 64) | 0x4385df649fccf645ull;
    }
    void step() { state_ = state_ * mult() + inc_; }

    u128 state_ = 0;
    u128 inc_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Fixed stream ids so each consumer of randomness owns an independent
// sequence; adding a consumer never perturbs the draws of another.
namespace stream {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kDropout = 2;
constexpr std::uint64_t kNoise = 3;
constexpr std::uint64_t kShuffle = 4;
constexpr std::uint64_t kRotationLabel = 5;
constexpr std::uint64_t kCrop = 6;
constexpr std::uint64_t kFolds = 7;
constexpr std::uint64_t kHeadOrder = 8;
constexpr std::uint64_t kSvm = 9;
constexpr std::uint64_t kCohort = 10;
constexpr std::uint64_t kTreeBase = 1000;
} // namespace stream

// SplitMix64 chain, used to derive per-scan seeds from a cohort seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace vpx
