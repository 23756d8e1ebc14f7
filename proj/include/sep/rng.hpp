#pragma once

#include "sep/normal.hpp"

#include <array>
#include <cstdint>

namespace sep {

/// Philox4x32-10 (Salmon et al., SC'11). Pure function of (key, counter), so
/// any draw of any stream can be produced without touching shared state.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter apply(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            ctr = single_round(ctr, key);
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static Counter single_round(const Counter& c, const Key& k) noexcept {
        const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
        const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// One independent stream per (seed, stream_id). Draw i of a stream is fixed
/// regardless of which thread asks for it or what other streams did.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t position = 0) noexcept
        : seed_(seed), stream_id_(stream_id), position_(position) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream_id() const noexcept { return stream_id_; }
    /// Number of draws consumed so far.
    [[nodiscard]] std::uint64_t position() const noexcept { return position_; }

    /// 53-bit uniform in the open interval (0, 1).
    double uniform() noexcept { return uniform_at(position_++); }

    /// Standard normal by inverse-CDF transform of one uniform.
    double normal() noexcept { return normal::quantile(uniform()); }

    [[nodiscard]] double uniform_at(std::uint64_t index) const noexcept {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index),
                                      static_cast<std::uint32_t>(index >> 32),
                                      static_cast<std::uint32_t>(stream_id_),
                                      static_cast<std::uint32_t>(stream_id_ >> 32)};
        const Philox4x32::Key key{static_cast<std::uint32_t>(seed_),
                                  static_cast<std::uint32_t>(seed_ >> 32)};
        const auto out = Philox4x32::apply(ctr, key);
        const std::uint64_t bits =
            ((std::uint64_t{out[0]} << 32) | out[1]) >> 11;  // 53 bits
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t position_ = 0;
};

}  // namespace sep
