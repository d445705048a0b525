#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace spamae {

// xoshiro256++ with splitmix64 seeding. Hand-rolled so that streams are
// reproducible across platforms and the full state serializes into
// checkpoints (resume must replay the exact trajectory).
class Rng {
public:
    Rng() : Rng(0x9e3779b97f4a7c15ull) {}
    explicit Rng(uint64_t seed);

    // Derive an independent child stream, e.g. per sample id or per epoch.
    // derive(seed, a, b) is a pure function of its arguments.
    static Rng derive(uint64_t seed, uint64_t stream_a, uint64_t stream_b = 0);

    uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Unbiased integer in [0, n), n >= 1 (rejection sampling).
    uint64_t uniform_below(uint64_t n);
    // Inclusive range.
    int64_t uniform_int(int64_t lo, int64_t hi);

    // Standard normal (Box-Muller, cached spare).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = static_cast<size_t>(uniform_below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Full state for checkpointing: 4 state words + Box-Muller spare.
    std::array<uint64_t, 6> serialize_state() const;
    void restore_state(const std::array<uint64_t, 6>& st);

private:
    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_   = 0.0;
};

uint64_t splitmix64(uint64_t& x);

}  // namespace spamae
