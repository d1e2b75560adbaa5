// AVX2/FMA backend. This translation unit is the only one compiled with
// -mavx2 -mfma; callers reach it through the dispatch table in kernels.cpp,
// which checks CPUID first.

#include <cmath>
#include <cstddef>
#include <immintrin.h>

namespace hnci::kernels::avx2 {

bool supported() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

} // namespace

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double nrm2sq(const double* a, std::size_t n) { return dot(a, a, n); }

double sum(const double* a, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i];
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void sub_inplace(double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(a + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) a[i] -= b[i];
}

void add_scalar(double* a, double c, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(a + i, _mm256_add_pd(_mm256_loadu_pd(a + i), vc));
    for (; i < n; ++i) a[i] += c;
}

void soft_threshold(const double* x, double thr, double* out, std::size_t n) {
    const __m256d vthr = _mm256_set1_pd(thr);
    const __m256d sign_mask = _mm256_set1_pd(-0.0);
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        const __m256d sign = _mm256_and_pd(v, sign_mask);
        const __m256d mag = _mm256_max_pd(_mm256_sub_pd(_mm256_andnot_pd(sign_mask, v), vthr), zero);
        _mm256_storeu_pd(out + i, _mm256_or_pd(mag, sign));
    }
    for (; i < n; ++i) {
        const double v = x[i];
        const double m = std::fabs(v) - thr;
        out[i] = m > 0.0 ? (v > 0.0 ? m : -m) : 0.0;
    }
}

void pairwise_differences(const double* beta, std::size_t d, double* out) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i + 1 < d; ++i) {
        const __m256d vbi = _mm256_set1_pd(beta[i]);
        const double bi = beta[i];
        std::size_t j = i + 1;
        for (; j + 4 <= d; j += 4)
            _mm256_storeu_pd(out + idx + (j - i - 1),
                             _mm256_sub_pd(vbi, _mm256_loadu_pd(beta + j)));
        for (; j < d; ++j) out[idx + (j - i - 1)] = bi - beta[j];
        idx += d - 1 - i;
    }
}

void pairwise_adjoint(const double* v, std::size_t d, double* out) {
    for (std::size_t i = 0; i < d; ++i) out[i] = 0.0;
    std::size_t idx = 0;
    for (std::size_t i = 0; i + 1 < d; ++i) {
        const std::size_t len = d - 1 - i;
        const double* blk = v + idx;
        double* tail = out + i + 1;
        __m256d acc = _mm256_setzero_pd();
        std::size_t j = 0;
        for (; j + 4 <= len; j += 4) {
            const __m256d vb = _mm256_loadu_pd(blk + j);
            acc = _mm256_add_pd(acc, vb);
            _mm256_storeu_pd(tail + j, _mm256_sub_pd(_mm256_loadu_pd(tail + j), vb));
        }
        double s = hsum(acc);
        for (; j < len; ++j) {
            s += blk[j];
            tail[j] -= blk[j];
        }
        out[i] += s;
        idx += len;
    }
}

} // namespace hnci::kernels::avx2
