/*
 * Seeded random stream shared by weight init, dropout, particle sampling and
 * the update-sample draw. One stream per tracker state keeps runs reproducible.
 */
#pragma once

#include <cstdint>
#include <random>

namespace sdt {

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform() { return uni_(gen_); }               // [0,1)
    double normal() { return norm_(gen_); }               // N(0,1)
    double normal(double mean, double std) { return mean + std * norm_(gen_); }
    uint64_t next_u64() { return gen_(); }

    // Derived stream for an independent sub-task (per-frame noise, etc.).
    Rng fork() { return Rng(gen_()); }

private:
    std::mt19937_64 gen_;
    std::uniform_real_distribution<double> uni_{0.0, 1.0};
    std::normal_distribution<double> norm_{0.0, 1.0};
};

}  // namespace sdt
