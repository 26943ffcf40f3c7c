#pragma once

#include <cstddef>
#include <omp.h>

namespace ultr {

// Work-sharing helper for the embarrassingly parallel kernels (session
// simulation, imputation, per-query metrics, theorem instances). Each index
// must write only to its own output slot and draw randomness from its own
// derived stream, so results are identical for any thread count.
//
// threads == 1 is the serial reference path (a plain loop, no OpenMP);
// threads == 0 uses the OpenMP default; otherwise the requested count.
template <class F>
void parallel_for(std::size_t n, int threads, F&& fn) {
    if (threads == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (threads <= 0) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            fn(static_cast<std::size_t>(i));
    } else {
#pragma omp parallel for schedule(static) num_threads(threads)
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            fn(static_cast<std::size_t>(i));
    }
}

inline int hardware_threads() { return omp_get_max_threads(); }

}  // namespace ultr
