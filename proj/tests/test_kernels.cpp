// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "xlmeta/kernels.hpp"
#include "xlmeta/rng.hpp"

using namespace xlmeta;
namespace k = xlmeta::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -3.0, double hi = 3.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform_real(lo, hi);
    return v;
}

std::vector<k::Backend> simd_backends() {
    std::vector<k::Backend> out;
    for (k::Backend b : {k::Backend::avx2, k::Backend::neon}) {
        if (k::backend_supported(b)) out.push_back(b);
    }
    return out;
}

struct BackendGuard {
    k::Backend saved = k::active_backend();
    ~BackendGuard() { k::set_backend(saved); }
};

}  // namespace

TEST_SUITE_BEGIN("kernels");

TEST_CASE("scalar backend is always supported") {
    CHECK(k::backend_supported(k::Backend::scalar));
    CHECK(k::backend_supported(k::active_backend()));
    CHECK(std::strcmp(k::backend_name(k::Backend::scalar), "scalar") == 0);
    CHECK(std::strcmp(k::backend_name(k::Backend::avx2), "avx2") == 0);
    CHECK(std::strcmp(k::backend_name(k::Backend::neon), "neon") == 0);
}

TEST_CASE("setting an unsupported backend throws") {
    // At most one of the SIMD backends can exist on any given host.
    const bool neon_there = k::backend_supported(k::Backend::neon);
    const bool avx2_there = k::backend_supported(k::Backend::avx2);
    CHECK(!(neon_there && avx2_there));
    if (!neon_there) CHECK_THROWS_AS(k::set_backend(k::Backend::neon), std::runtime_error);
    if (!avx2_there) CHECK_THROWS_AS(k::set_backend(k::Backend::avx2), std::runtime_error);
}

TEST_CASE("elementwise kernels match the scalar reference bit for bit") {
    Rng rng(derive_seed(11, "kernels-elementwise"));
    BackendGuard guard;
    for (k::Backend backend : simd_backends()) {
        // Sizes straddle the vector width so remainder lanes get exercised.
        for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 64u, 100u}) {
            const auto a = random_vec(rng, n);
            auto b = random_vec(rng, n);
            for (auto& x : b) {
                if (std::fabs(x) < 0.25) x += 1.0;  // keep div well away from zero
            }
            const double c = rng.uniform_real(-2.0, 2.0);

            std::vector<double> ref_add(n), ref_sub(n), ref_mul(n), ref_div(n), ref_scale(n);
            k::set_backend(k::Backend::scalar);
            k::add(a.data(), b.data(), ref_add.data(), n);
            k::sub(a.data(), b.data(), ref_sub.data(), n);
            k::mul(a.data(), b.data(), ref_mul.data(), n);
            k::div(a.data(), b.data(), ref_div.data(), n);
            k::scale(a.data(), c, ref_scale.data(), n);

            std::vector<double> got(n);
            k::set_backend(backend);
            k::add(a.data(), b.data(), got.data(), n);
            CHECK(std::memcmp(got.data(), ref_add.data(), n * sizeof(double)) == 0);
            k::sub(a.data(), b.data(), got.data(), n);
            CHECK(std::memcmp(got.data(), ref_sub.data(), n * sizeof(double)) == 0);
            k::mul(a.data(), b.data(), got.data(), n);
            CHECK(std::memcmp(got.data(), ref_mul.data(), n * sizeof(double)) == 0);
            k::div(a.data(), b.data(), got.data(), n);
            CHECK(std::memcmp(got.data(), ref_div.data(), n * sizeof(double)) == 0);
            k::scale(a.data(), c, got.data(), n);
            CHECK(std::memcmp(got.data(), ref_scale.data(), n * sizeof(double)) == 0);
        }
    }
}

TEST_CASE("reductions match the scalar reference to roundoff") {
    Rng rng(derive_seed(11, "kernels-reductions"));
    BackendGuard guard;
    for (k::Backend backend : simd_backends()) {
        for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 17u, 64u, 257u, 1000u}) {
            const auto a = random_vec(rng, n);
            const auto b = random_vec(rng, n);
            k::set_backend(k::Backend::scalar);
            const double ref_sum = k::sum(a.data(), n);
            const double ref_dot = k::dot(a.data(), b.data(), n);
            k::set_backend(backend);
            const double got_sum = k::sum(a.data(), n);
            const double got_dot = k::dot(a.data(), b.data(), n);
            const double tol = 1e-12 * (1.0 + static_cast<double>(n));
            CHECK(std::fabs(got_sum - ref_sum) <= tol);
            CHECK(std::fabs(got_dot - ref_dot) <= tol);
        }
    }
}

TEST_CASE("matmul matches the scalar reference to roundoff") {
    Rng rng(derive_seed(11, "kernels-matmul"));
    BackendGuard guard;
    struct Dims {
        std::size_t m, kk, n;
    };
    for (k::Backend backend : simd_backends()) {
        for (Dims d : {Dims{1, 1, 1}, Dims{2, 3, 4}, Dims{3, 5, 7}, Dims{8, 8, 8},
                       Dims{5, 17, 9}, Dims{16, 16, 16}, Dims{1, 64, 1}}) {
            const auto a = random_vec(rng, d.m * d.kk);
            const auto b = random_vec(rng, d.kk * d.n);
            std::vector<double> ref(d.m * d.n), got(d.m * d.n);
            k::set_backend(k::Backend::scalar);
            k::matmul(a.data(), b.data(), ref.data(), d.m, d.kk, d.n);
            k::set_backend(backend);
            k::matmul(a.data(), b.data(), got.data(), d.m, d.kk, d.n);
            for (std::size_t i = 0; i < ref.size(); ++i) {
                CHECK(std::fabs(got[i] - ref[i]) <=
                      1e-12 * (1.0 + static_cast<double>(d.kk)) * (1.0 + std::fabs(ref[i])));
            }
        }
    }
}

TEST_CASE("matmul reference computes the textbook product") {
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    const double a[] = {1, 2, 3, 4};
    const double b[] = {5, 6, 7, 8};
    double out[4];
    BackendGuard guard;
    k::set_backend(k::Backend::scalar);
    k::matmul(a, b, out, 2, 2, 2);
    CHECK(out[0] == doctest::Approx(19));
    CHECK(out[1] == doctest::Approx(22));
    CHECK(out[2] == doctest::Approx(43));
    CHECK(out[3] == doctest::Approx(50));
}

TEST_CASE("softmax_row is numerically stable and normalized") {
    const double logits[] = {1000.0, 1001.0, 1002.0};
    double out[3];
    k::softmax_row(logits, out, 3);
    double total = 0.0;
    for (double x : out) {
        CHECK(std::isfinite(x));
        total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out[2] > out[1]);
    CHECK(out[1] > out[0]);

    const double pair[] = {0.0, 0.0};
    double p2[2];
    k::softmax_row(pair, p2, 2);
    CHECK(p2[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p2[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("libm loops apply the expected functions") {
    double v[] = {0.0, 0.5, -1.25};
    double t[3], e[3];
    std::memcpy(t, v, sizeof(v));
    std::memcpy(e, v, sizeof(v));
    k::tanh_inplace(t, 3);
    k::exp_inplace(e, 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(t[i] == doctest::Approx(std::tanh(v[i])).epsilon(1e-15));
        CHECK(e[i] == doctest::Approx(std::exp(v[i])).epsilon(1e-15));
    }
    double l[] = {1.0, 2.0, 10.0};
    k::log_inplace(l, 3);
    CHECK(l[0] == doctest::Approx(0.0));
    CHECK(l[1] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(l[2] == doctest::Approx(std::log(10.0)).epsilon(1e-15));
}

TEST_SUITE_END();
