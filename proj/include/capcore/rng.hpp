#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace capcore {

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; all value transforms (uniform doubles,
// bounded ints, normals) are implemented here rather than with
// std::*_distribution so that draw sequences do not depend on the standard
// library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t uniform_int(uint64_t n);

    // Standard normal via Box-Muller. Each call consumes exactly two engine
    // draws; no spare is cached, so the state is fully captured by the engine.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Engine state as text, for checkpointing.
    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 engine_;
};

} // namespace capcore
