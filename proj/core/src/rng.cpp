#include "spamae/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace spamae {

uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

Rng::Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
    // xoshiro requires a nonzero state; splitmix64 output of any seed is
    // nonzero in at least one word with overwhelming probability, but guard anyway.
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
}

Rng Rng::derive(uint64_t seed, uint64_t stream_a, uint64_t stream_b) {
    uint64_t x = seed;
    uint64_t m = splitmix64(x);
    x ^= stream_a * 0x9e3779b97f4a7c15ull;
    m ^= splitmix64(x);
    x ^= stream_b * 0xbf58476d1ce4e5b9ull;
    m ^= splitmix64(x);
    return Rng(m);
}

static inline uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t      = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

uint64_t Rng::uniform_below(uint64_t n) {
    if (n == 0) return 0;
    const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
        uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(uniform_below(static_cast<uint64_t>(hi - lo + 1)));
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] avoids log(0).
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r  = std::sqrt(-2.0 * std::log(u1));
    const double a  = 2.0 * 3.14159265358979323846 * u2;
    spare_          = r * std::sin(a);
    has_spare_      = true;
    return r * std::cos(a);
}

std::array<uint64_t, 6> Rng::serialize_state() const {
    std::array<uint64_t, 6> st{};
    for (int i = 0; i < 4; ++i) st[static_cast<size_t>(i)] = s_[i];
    st[4] = has_spare_ ? 1u : 0u;
    st[5] = std::bit_cast<uint64_t>(spare_);
    return st;
}

void Rng::restore_state(const std::array<uint64_t, 6>& st) {
    for (int i = 0; i < 4; ++i) s_[i] = st[static_cast<size_t>(i)];
    has_spare_ = st[4] != 0;
    spare_     = std::bit_cast<double>(st[5]);
}

}  // namespace spamae
