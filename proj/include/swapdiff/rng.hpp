#pragma once

#include <cstdint>

namespace swapdiff {

// Counter-based deterministic generator. Each draw hashes (seed, counter)
// with the splitmix64 finalizer, so the stream is a pure function of the
// seed: no hidden state beyond the counter, identical results on every
// platform for the integer core. Normal deviates come from an inverse-CDF
// rational approximation, one uniform per sample.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), counter_(0) {}

    uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();

    // Uniform in (0, 1), never exactly 0 or 1.
    double uniform_open();

    // Standard normal.
    double normal();

    // Integer in [lo, hi).
    int64_t uniform_int(int64_t lo, int64_t hi);

    // Independent substream; deterministic function of (seed, stream).
    // Used to give each sample / pair / worker its own generator.
    Rng fork(uint64_t stream) const;

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t counter_;
};

}  // namespace swapdiff
