// SPDX-License-Identifier: Apache-2.0
//
// AVX2/FMA variants. Elementwise ops are lane-exact against the reference;
// sum/dot/matmul use 4-wide accumulators and FMA, so they reassociate.
// This TU is compiled with -mavx2 -mfma and only dispatched to after a
// runtime cpuid check.

#include "xlmeta/kernels.hpp"

#if defined(XLMETA_HAVE_AVX2_TU)

#include <immintrin.h>

namespace xlmeta::kernels {

namespace {

void add_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void div_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] / b[i];
}

void scale_v(const double* a, double c, double* out, std::size_t n) {
    const __m256d cv = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), cv));
    }
    for (; i < n; ++i) out[i] = a[i] * c;
}

double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double sum_v(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double total = hsum(acc);
    for (; i < n; ++i) total += a[i];
    return total;
}

double dot_v(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    double total = hsum(acc);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

void matmul_v(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) out[i] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const __m256d av = _mm256_set1_pd(a[i * k + p]);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d c = _mm256_loadu_pd(crow + j);
                c = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), c);
                _mm256_storeu_pd(crow + j, c);
            }
            const double aip = a[i * k + p];
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

}  // namespace

namespace detail {

const KernelTable& avx2_table() {
    static const KernelTable table{add_v, sub_v, mul_v, div_v, scale_v, sum_v, dot_v, matmul_v};
    return table;
}

}  // namespace detail

}  // namespace xlmeta::kernels

#endif  // XLMETA_HAVE_AVX2_TU
