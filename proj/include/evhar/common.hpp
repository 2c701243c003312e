#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace evhar {

// Error taxonomy. ConfigError maps to CLI exit code 2 (usage/config),
// everything else to exit code 1 (runtime failure).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Deterministic RNG. mt19937_64 is bit-exact across platforms; the
// distribution mappings below are explicit so draws never depend on the
// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), Lemire reduction
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

// splitmix64-style mixing for deriving independent substream seeds
uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0);

// Worker cap: EVHAR_THREADS env var, else the OpenMP default. Re-read on
// every call so tests can change it between runs.
int worker_threads();

// Pins BLAS to one thread (parallelism is structured above it) — idempotent.
void init_backend();

const char* version();

}  // namespace evhar
