#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "atme/common.hpp"
#include "atme/tensor.hpp"

namespace atme {

// splitmix64; used to derive independent stream seeds from a master seed.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index = 0) {
    return mix_seed(mix_seed(master ^ mix_seed(stream)) + index);
}

// FNV-1a, so streams can be named instead of numbered.
inline uint64_t hash_name(std::string_view name) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t master, std::string_view stream, uint64_t index = 0) {
    return derive_seed(master, hash_name(stream), index);
}

// Seeded RNG with hand-rolled uniform/normal transforms so draws depend only
// on the mt19937_64 stream, not on libstdc++ distribution internals. State
// serializes to a string for checkpointing.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        check(n > 0, "uniform_int: n must be positive");
        // Rejection sampling to avoid modulo bias.
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return static_cast<int64_t>(v % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller without the usual cached second value, so the draw sequence
    // is a pure function of the engine stream.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void fill_normal(Tensor<T>& t, double mean, double stddev) {
        for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(normal(mean, stddev));
    }

    template <typename T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
    }

    template <typename IndexT>
    void shuffle(std::vector<IndexT>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        check(!is.fail(), "Rng::deserialize: malformed state string");
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace atme
