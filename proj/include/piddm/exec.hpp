#pragma once

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

// Execution backend for the data-parallel kernels. Every batch loop in the
// library runs through par_for / the chunked reducers below, in one of two
// modes:
//
//   serial — plain loop, reference implementation
//   openmp — OpenMP worksharing over the same chunk decomposition
//
// Reductions accumulate into a fixed number of chunk buffers that depends
// only on the problem size, and the buffers are combined in chunk order.
// That makes results bit-identical between the two modes and across thread
// counts, which the tests rely on.

namespace piddm::exec {

enum class Mode { serial, openmp };

Mode mode() noexcept;
void set_mode(Mode m) noexcept;

// Number of reduction chunks for n items. Fixed by n alone.
inline std::size_t chunk_count(std::size_t n) noexcept {
    constexpr std::size_t max_chunks = 16;
    return n < max_chunks ? n : max_chunks;
}

template <class F>
void par_for(std::size_t n, F&& body) {
    if (mode() == Mode::openmp) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            body(static_cast<std::size_t>(i));
        return;
#endif
    }
    for (std::size_t i = 0; i < n; ++i) body(i);
}

// Deterministic sum of term(i) for i in [0, n).
template <class F>
double sum_reduce(std::size_t n, F&& term) {
    if (n == 0) return 0.0;
    const std::size_t nc = chunk_count(n);
    std::vector<double> partial(nc, 0.0);
    par_for(nc, [&](std::size_t c) {
        const std::size_t lo = c * n / nc, hi = (c + 1) * n / nc;
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += term(i);
        partial[c] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

// Deterministic vector accumulation: out[j] += sum_i contribution(i)[j].
// body(i, buf) must add item i's contribution into buf (length dim).
template <class F>
void accumulate(std::size_t n, std::size_t dim, double* out, F&& body) {
    if (n == 0) return;
    const std::size_t nc = chunk_count(n);
    std::vector<double> buffers(nc * dim, 0.0);
    par_for(nc, [&](std::size_t c) {
        const std::size_t lo = c * n / nc, hi = (c + 1) * n / nc;
        double* buf = buffers.data() + c * dim;
        for (std::size_t i = lo; i < hi; ++i) body(i, buf);
    });
    for (std::size_t c = 0; c < nc; ++c) {
        const double* buf = buffers.data() + c * dim;
        for (std::size_t j = 0; j < dim; ++j) out[j] += buf[j];
    }
}

}  // namespace piddm::exec
