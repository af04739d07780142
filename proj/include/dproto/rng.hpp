#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dproto {

// Deterministic RNG used everywhere randomness is needed. mt19937_64 gives a
// standard-specified bit stream; the double/normal transforms below are fixed
// here so outputs are reproducible independent of the C++ runtime's
// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1), 53-bit mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds. Modulo bias is irrelevant at the range sizes used here.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // Standard normal via Box-Muller, second value cached.
    double normal();

private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

// Derives an independent stream seed from a root seed, a stream tag, and an
// index. All randomness in the project flows from one root seed through this.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index = 0);

}  // namespace dproto
