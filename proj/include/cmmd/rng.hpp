#pragma once

#include <cstdint>
#include <random>

namespace cmmd {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. Streams are derived by hashing so that independent
// consumers (init, shuffle, per-epoch noise) never share state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)), base_(seed) {}

    Rng derive(std::uint64_t stream) const {
        return Rng(splitmix64(base_ ^ splitmix64(stream)));
    }
    static Rng derived(std::uint64_t seed, std::uint64_t stream) {
        return Rng(seed).derive(stream);
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
    std::uint64_t integer(std::uint64_t n) { // in [0, n)
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_);
    }

private:
    std::mt19937_64 gen_;
    std::uint64_t base_ = 0;

    friend class RngFactory;
};

// Stateless handle for deriving per-purpose streams from one run seed.
class RngFactory {
public:
    explicit RngFactory(std::uint64_t seed) : seed_(seed) {}
    Rng stream(std::uint64_t id) const { return Rng(splitmix64(seed_ ^ splitmix64(id))); }
    Rng stream(std::uint64_t id, std::uint64_t sub) const {
        return Rng(splitmix64(splitmix64(seed_ ^ splitmix64(id)) ^ splitmix64(sub)));
    }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

} // namespace cmmd
