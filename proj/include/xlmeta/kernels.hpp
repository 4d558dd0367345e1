// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

namespace xlmeta::kernels {

// The arithmetic inner loops below exist in a scalar reference version and,
// where the host supports it, a SIMD variant (AVX2 on x86-64, NEON on
// aarch64). The active variant is picked once at startup; set_backend()
// forces a specific one (tests compare variants against the reference).
enum class Backend { scalar, avx2, neon };

const char* backend_name(Backend b);
bool backend_supported(Backend b);
Backend active_backend();
void set_backend(Backend b);  // throws std::runtime_error if unsupported here

// Elementwise variants agree bit-for-bit with the reference; reductions and
// matmul reassociate the accumulation and agree to roundoff.
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void div(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double c, double* out, std::size_t n);
double sum(const double* a, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);

// Row-major C[m x n] = A[m x k] * B[k x n]; C must not alias A or B.
void matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
            std::size_t n);

// Scalar-only helpers (libm element loops, no SIMD variant).
void tanh_inplace(double* a, std::size_t n);
void exp_inplace(double* a, std::size_t n);
void log_inplace(double* a, std::size_t n);

// One numerically stable softmax over a contiguous row.
void softmax_row(const double* logits, double* out, std::size_t n);

namespace detail {

struct KernelTable {
    void (*add)(const double*, const double*, double*, std::size_t);
    void (*sub)(const double*, const double*, double*, std::size_t);
    void (*mul)(const double*, const double*, double*, std::size_t);
    void (*div)(const double*, const double*, double*, std::size_t);
    void (*scale)(const double*, double, double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    double (*dot)(const double*, const double*, std::size_t);
    void (*matmul)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
};

const KernelTable& scalar_table();
#if defined(XLMETA_HAVE_AVX2_TU)
const KernelTable& avx2_table();
#endif
#if defined(XLMETA_HAVE_NEON_TU)
const KernelTable& neon_table();
#endif

}  // namespace detail

}  // namespace xlmeta::kernels
