// SPDX-License-Identifier: Apache-2.0
//
// NEON variants (aarch64, 2-wide f64 lanes). Same equivalence contract as
// the AVX2 TU: elementwise lane-exact, reductions reassociated.

#include "xlmeta/kernels.hpp"

#if defined(XLMETA_HAVE_NEON_TU)

#include <arm_neon.h>

namespace xlmeta::kernels {

namespace {

void add_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void div_v(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vdivq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}

void scale_v(const double* a, double c, double* out, std::size_t n) {
    const float64x2_t cv = vdupq_n_f64(c);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), cv));
    for (; i < n; ++i) out[i] = a[i] * c;
}

double sum_v(const double* a, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
    double total = vaddvq_f64(acc);
    for (; i < n; ++i) total += a[i];
    return total;
}

double dot_v(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    double total = vaddvq_f64(acc);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

void matmul_v(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) out[i] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float64x2_t av = vdupq_n_f64(a[i * k + p]);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 2 <= n; j += 2) {
                float64x2_t c = vld1q_f64(crow + j);
                c = vfmaq_f64(c, av, vld1q_f64(brow + j));
                vst1q_f64(crow + j, c);
            }
            const double aip = a[i * k + p];
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

}  // namespace

namespace detail {

const KernelTable& neon_table() {
    static const KernelTable table{add_v, sub_v, mul_v, div_v, scale_v, sum_v, dot_v, matmul_v};
    return table;
}

}  // namespace detail

}  // namespace xlmeta::kernels

#endif  // XLMETA_HAVE_NEON_TU
