#include "hnci/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>

namespace hnci::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double nrm2sq(const double* a, std::size_t n) { return dot(a, a, n); }

double sum(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void sub_inplace(double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) a[i] -= b[i];
}

void add_scalar(double* a, double c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) a[i] += c;
}

void soft_threshold(const double* x, double thr, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        const double m = std::fabs(v) - thr;
        out[i] = m > 0.0 ? (v > 0.0 ? m : -m) : 0.0;
    }
}

void pairwise_differences(const double* beta, std::size_t d, double* out) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i + 1 < d; ++i) {
        const double bi = beta[i];
        for (std::size_t j = i + 1; j < d; ++j) out[idx++] = bi - beta[j];
    }
}

void pairwise_adjoint(const double* v, std::size_t d, double* out) {
    for (std::size_t i = 0; i < d; ++i) out[i] = 0.0;
    std::size_t idx = 0;
    for (std::size_t i = 0; i + 1 < d; ++i) {
        const std::size_t len = d - 1 - i;
        double blk = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
            blk += v[idx + j];
            out[i + 1 + j] -= v[idx + j];
        }
        out[i] += blk;
        idx += len;
    }
}

} // namespace scalar

#if defined(HNCI_HAVE_AVX2_BACKEND)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double nrm2sq(const double* a, std::size_t n);
double sum(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void sub_inplace(double* a, const double* b, std::size_t n);
void add_scalar(double* a, double c, std::size_t n);
void soft_threshold(const double* x, double thr, double* out, std::size_t n);
void pairwise_differences(const double* beta, std::size_t d, double* out);
void pairwise_adjoint(const double* v, std::size_t d, double* out);
bool supported();
} // namespace avx2
#endif

namespace {

Backend detect_backend() {
    if (const char* env = std::getenv("HNCI_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
#if defined(HNCI_HAVE_AVX2_BACKEND)
        if (std::strcmp(env, "avx2") == 0 && avx2::supported()) return Backend::avx2;
#endif
    }
#if defined(HNCI_HAVE_AVX2_BACKEND)
    if (avx2::supported()) return Backend::avx2;
#endif
    return Backend::scalar;
}

std::atomic<int> g_backend{-1}; // -1 = undecided

Backend backend() {
    int b = g_backend.load(std::memory_order_relaxed);
    if (b < 0) {
        b = static_cast<int>(detect_backend());
        g_backend.store(b, std::memory_order_relaxed);
    }
    return static_cast<Backend>(b);
}

} // namespace

Backend active_backend() { return backend(); }

void force_backend(Backend b) {
#if !defined(HNCI_HAVE_AVX2_BACKEND)
    b = Backend::scalar;
#else
    if (b == Backend::avx2 && !avx2::supported()) b = Backend::scalar;
#endif
    g_backend.store(static_cast<int>(b), std::memory_order_relaxed);
}

void reset_backend() { g_backend.store(-1, std::memory_order_relaxed); }

#if defined(HNCI_HAVE_AVX2_BACKEND)
#define HNCI_DISPATCH(fn, ...) \
    return backend() == Backend::avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__)
#else
#define HNCI_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

double dot(const double* a, const double* b, std::size_t n) { HNCI_DISPATCH(dot, a, b, n); }
double nrm2sq(const double* a, std::size_t n) { HNCI_DISPATCH(nrm2sq, a, n); }
double sum(const double* a, std::size_t n) { HNCI_DISPATCH(sum, a, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    HNCI_DISPATCH(axpy, alpha, x, y, n);
}
void sub_inplace(double* a, const double* b, std::size_t n) { HNCI_DISPATCH(sub_inplace, a, b, n); }
void add_scalar(double* a, double c, std::size_t n) { HNCI_DISPATCH(add_scalar, a, c, n); }
void soft_threshold(const double* x, double thr, double* out, std::size_t n) {
    HNCI_DISPATCH(soft_threshold, x, thr, out, n);
}
void pairwise_differences(const double* beta, std::size_t d, double* out) {
    HNCI_DISPATCH(pairwise_differences, beta, d, out);
}
void pairwise_adjoint(const double* v, std::size_t d, double* out) {
    HNCI_DISPATCH(pairwise_adjoint, v, d, out);
}

#undef HNCI_DISPATCH

// Segment reductions are thin loops over the vector primitives; one shared
// definition keeps the group offsets logic in a single place.
void segment_means(const double* x, const std::size_t* offsets, std::size_t d, double* means) {
    for (std::size_t l = 0; l < d; ++l) {
        const std::size_t b = offsets[l], e = offsets[l + 1];
        means[l] = e > b ? sum(x + b, e - b) / static_cast<double>(e - b) : 0.0;
    }
}

void subtract_segment_means(double* x, const std::size_t* offsets, std::size_t d,
                            const double* means) {
    for (std::size_t l = 0; l < d; ++l)
        add_scalar(x + offsets[l], -means[l], offsets[l + 1] - offsets[l]);
}

} // namespace hnci::kernels
