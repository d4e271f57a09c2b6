#pragma once

// Counter-based splittable RNG. Every stream is a pure function of the
// (seed, stream...) key, so generation order and thread layout never change
// what a given stream produces. No std:: distributions anywhere: their
// output is implementation-defined and would break byte-reproducibility.

#include <cmath>
#include <cstdint>
#include <vector>

namespace lglab {

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(mix_in(0x8c274691e6a9d9c5ull, seed)) {}

    // Derives an independent stream; children with different keys never collide.
    Rng fork(uint64_t key) const { return Rng(FromState{}, mix_in(state_, key)); }
    Rng fork(uint64_t a, uint64_t b) const { return fork(a).fork(b); }

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0,1) with 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        // 64 fresh bits modulo a small span; bias is < 2^-50 for our spans.
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    bool bernoulli(double p) { return next_unit() < p; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    struct FromState {};
    Rng(FromState, uint64_t raw) : state_(raw) {}

    static uint64_t mix_in(uint64_t state, uint64_t key) {
        uint64_t s = state ^ (key + 0x9e3779b97f4a7c15ull + (state << 6) + (state >> 2));
        splitmix64(s);
        return s;
    }

    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace lglab
