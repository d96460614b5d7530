#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "stacklqg/matrix.hpp"

namespace stacklqg {

// Philox4x32-10 counter-based generator. Draws are a pure function of
// (key, counter), which gives scheduler-independent reproducibility: every
// (master seed, path, node, channel) tuple addresses its own block of
// normals, no matter which thread asks for it or in which order.

namespace philox {

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline void round_once(Counter& x, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * x[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * x[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    x = {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
}

inline Counter block(Counter x, Key k) {
    for (int r = 0; r < 10; ++r) {
        round_once(x, k);
        k[0] += kWeyl0;
        k[1] += kWeyl1;
    }
    return x;
}

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace philox

/// Noise channels used by the simulator; part of the seeding contract.
enum class NoiseChannel : std::uint32_t {
    InitialState = 0,
    ProcessW = 1,
    ObsV1 = 2,
    ObsV2 = 3,
    Scratch = 4,
};

/// Stream of standard normals for one Monte Carlo path.
class PathNoise {
  public:
    PathNoise(std::uint64_t master_seed, std::uint64_t path_index) {
        const std::uint64_t mixed =
            philox::splitmix64(master_seed ^ philox::splitmix64(path_index + 0x51ED270B9ull));
        key_ = {static_cast<std::uint32_t>(mixed), static_cast<std::uint32_t>(mixed >> 32)};
        path_lo_ = static_cast<std::uint32_t>(path_index);
    }

    /// q i.i.d. N(0,1) draws addressed by (node, channel).
    Vector normals(std::uint32_t node, NoiseChannel channel, int q) const {
        Vector out(q);
        int produced = 0;
        std::uint32_t block_index = 0;
        while (produced < q) {
            auto b = philox::block(
                {block_index, node, static_cast<std::uint32_t>(channel), path_lo_}, key_);
            const double u1 = to_unit(b[0], b[1]);
            const double u2 = to_unit(b[2], b[3]);
            const double r = std::sqrt(-2.0 * std::log(u1));
            out[produced++] = r * std::cos(2.0 * M_PI * u2);
            if (produced < q) out[produced++] = r * std::sin(2.0 * M_PI * u2);
            ++block_index;
        }
        return out;
    }

  private:
    static double to_unit(std::uint32_t hi, std::uint32_t lo) {
        const std::uint64_t x = (static_cast<std::uint64_t>(hi) << 32) | lo;
        // 53-bit mantissa, offset keeps the value strictly inside (0, 1).
        return static_cast<double>(x >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }

    philox::Key key_{};
    std::uint32_t path_lo_ = 0;
};

}  // namespace stacklqg
