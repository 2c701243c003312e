#include "evhar/common.hpp"

#include <cblas.h>
#include <omp.h>

#include <cstdlib>
#include <mutex>

#ifndef EVHAR_VERSION
#define EVHAR_VERSION "0.1.0"
#endif

namespace evhar {

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    uint64_t x = a * 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL + c * 0x94d049bb133111ebULL + 0x2545f4914f6cdd1dULL;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

int worker_threads() {
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("EVHAR_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1 && cap < n) n = cap;
    }
    return n;
}

void init_backend() {
    static std::once_flag once;
    std::call_once(once, [] {
        // The AVX2 kernels outrun the AVX-512 ones on downclocked cores;
        // must be set before the library initializes, and never overrides
        // a user-provided choice.
        setenv("OPENBLAS_CORETYPE", "Haswell", 0);
        openblas_set_num_threads(1);
    });
}

const char* version() { return EVHAR_VERSION; }

}  // namespace evhar
