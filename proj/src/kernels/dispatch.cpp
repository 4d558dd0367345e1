// SPDX-License-Identifier: Apache-2.0

#include <stdexcept>
#include <string>

#include "xlmeta/kernels.hpp"

namespace xlmeta::kernels {

namespace {

using detail::KernelTable;

Backend detect_best() {
#if defined(XLMETA_HAVE_AVX2_TU)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::avx2;
#endif
#if defined(XLMETA_HAVE_NEON_TU)
    return Backend::neon;  // NEON is baseline on aarch64
#endif
    return Backend::scalar;
}

const KernelTable* table_for(Backend b) {
    switch (b) {
        case Backend::scalar:
            return &detail::scalar_table();
        case Backend::avx2:
#if defined(XLMETA_HAVE_AVX2_TU)
            return &detail::avx2_table();
#else
            return nullptr;
#endif
        case Backend::neon:
#if defined(XLMETA_HAVE_NEON_TU)
            return &detail::neon_table();
#else
            return nullptr;
#endif
    }
    return nullptr;
}

struct Active {
    Backend backend;
    const KernelTable* table;
};

Active& active() {
    static Active a = [] {
        Backend b = detect_best();
        return Active{b, table_for(b)};
    }();
    return a;
}

}  // namespace

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
        case Backend::neon: return "neon";
    }
    return "?";
}

bool backend_supported(Backend b) {
    if (b == Backend::scalar) return true;
#if defined(XLMETA_HAVE_AVX2_TU)
    if (b == Backend::avx2) return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#endif
#if defined(XLMETA_HAVE_NEON_TU)
    if (b == Backend::neon) return true;
#endif
    return false;
}

Backend active_backend() { return active().backend; }

void set_backend(Backend b) {
    if (!backend_supported(b)) {
        throw std::runtime_error(std::string("kernels: backend '") + backend_name(b) +
                                 "' is not available on this host");
    }
    active() = Active{b, table_for(b)};
}

void add(const double* a, const double* b, double* out, std::size_t n) {
    active().table->add(a, b, out, n);
}
void sub(const double* a, const double* b, double* out, std::size_t n) {
    active().table->sub(a, b, out, n);
}
void mul(const double* a, const double* b, double* out, std::size_t n) {
    active().table->mul(a, b, out, n);
}
void div(const double* a, const double* b, double* out, std::size_t n) {
    active().table->div(a, b, out, n);
}
void scale(const double* a, double c, double* out, std::size_t n) {
    active().table->scale(a, c, out, n);
}
double sum(const double* a, std::size_t n) { return active().table->sum(a, n); }
double dot(const double* a, const double* b, std::size_t n) { return active().table->dot(a, b, n); }
void matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
            std::size_t n) {
    active().table->matmul(a, b, out, m, k, n);
}

}  // namespace xlmeta::kernels
