#pragma once

// Counter-based random numbers. Every stream is addressed by
// (seed, replica, stream id) and advanced by a 64-bit block counter, so a
// replica's draws never depend on how many other replicas ran before it.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace qdiff {

/// Philox4x32 with 10 rounds.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// SplitMix64 finalizer, used to derive child seeds from labels.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t label) noexcept {
    return mix64(seed ^ mix64(label + 0x632BE59BD9B4E019ull));
}

enum class StreamId : std::uint32_t { noise = 0, policy = 1, start_state = 2, misc = 3 };

/// Sequential view over one counter-based stream.
class CounterRng {
public:
    CounterRng() : CounterRng(0, 0, StreamId::noise) {}

    CounterRng(std::uint64_t seed, std::uint32_t replica, StreamId stream = StreamId::noise)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          replica_(replica),
          stream_(static_cast<std::uint32_t>(stream)) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept {
        if (word_ >= 4) refill();
        const std::uint64_t a = block_[word_] >> 5;
        const std::uint64_t b = block_[word_ + 1] >> 6;
        word_ += 2;
        return static_cast<double>((a << 26) | b) * 0x1.0p-53;
    }

    /// Uniform on (0, 1].
    double uniform_open_low() noexcept { return 1.0 - uniform(); }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform_open_low()));
        const double theta = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform index in [0, n).
    std::size_t index(std::size_t n) noexcept {
        auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

    std::uint64_t blocks_consumed() const noexcept { return counter_; }

private:
    void refill() noexcept {
        block_ = Philox4x32::generate(
            {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32), replica_,
             stream_},
            key_);
        ++counter_;
        word_ = 0;
    }

    Philox4x32::Key key_;
    std::uint32_t replica_;
    std::uint32_t stream_;
    std::uint64_t counter_ = 0;
    Philox4x32::Counter block_{};
    int word_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace qdiff
