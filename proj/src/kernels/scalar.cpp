// SPDX-License-Identifier: Apache-2.0
//
// Reference kernels. Every SIMD variant is equivalence-tested against these.

#include <cmath>
#include <cstddef>

#include "xlmeta/kernels.hpp"

namespace xlmeta::kernels {

namespace {

void add_s(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_s(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_s(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void div_s(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

void scale_s(const double* a, double c, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * c;
}

double sum_s(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double dot_s(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void matmul_s(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) out[i] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            double* crow = out + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

}  // namespace

namespace detail {

const KernelTable& scalar_table() {
    static const KernelTable table{add_s, sub_s, mul_s, div_s, scale_s, sum_s, dot_s, matmul_s};
    return table;
}

}  // namespace detail

void tanh_inplace(double* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) a[i] = std::tanh(a[i]);
}

void exp_inplace(double* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) a[i] = std::exp(a[i]);
}

void log_inplace(double* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) a[i] = std::log(a[i]);
}

void softmax_row(const double* logits, double* out, std::size_t n) {
    double mx = logits[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(logits[i] - mx);
        total += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= total;
}

}  // namespace xlmeta::kernels
