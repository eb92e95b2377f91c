#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sqa/kernels.hpp"
#include "sqa/rng.hpp"

using namespace sqa;

namespace {

// Lengths straddling the 8- and 4-lane widths plus remainders.
const std::vector<std::size_t> kLens = {0, 1, 3, 4, 7, 8, 9, 15, 16, 17, 31, 64, 100, 257};

std::vector<float> rand_vec(Rng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.uniform(-2.0, 2.0));
    return v;
}

struct IsaGuard {
    kern::Isa saved = kern::active_isa();
    ~IsaGuard() { kern::force_isa(saved); }
};

bool simd_available() { return kern::detect_best_isa() != kern::Isa::scalar; }

}  // namespace

TEST_CASE("force_isa rejects unsupported lanes") {
    IsaGuard guard;
    kern::force_isa(kern::Isa::scalar);
    CHECK(kern::active_isa() == kern::Isa::scalar);
#if !defined(__aarch64__)
    CHECK_THROWS(kern::force_isa(kern::Isa::neon));
#endif
}

TEST_CASE("elementwise kernels agree bit-for-bit across lanes") {
    if (!simd_available()) return;
    IsaGuard guard;
    Rng rng(41);
    for (std::size_t n : kLens) {
        auto a = rand_vec(rng, n), b = rand_vec(rng, n);
        std::vector<float> scalar_out(n), simd_out(n);

        auto both = [&](auto&& call) {
            kern::force_isa(kern::Isa::scalar);
            call(scalar_out);
            kern::force_isa(kern::detect_best_isa());
            call(simd_out);
            for (std::size_t i = 0; i < n; ++i) CHECK(scalar_out[i] == simd_out[i]);
        };
        both([&](std::vector<float>& out) { kern::add(a.data(), b.data(), out.data(), n); });
        both([&](std::vector<float>& out) { kern::sub(a.data(), b.data(), out.data(), n); });
        both([&](std::vector<float>& out) { kern::mul(a.data(), b.data(), out.data(), n); });
        both([&](std::vector<float>& out) { kern::scale(1.7f, a.data(), out.data(), n); });
        both([&](std::vector<float>& out) { kern::relu(a.data(), out.data(), n); });
    }
}

TEST_CASE("reduction kernels agree across lanes within accumulation tolerance") {
    if (!simd_available()) return;
    IsaGuard guard;
    Rng rng(42);
    for (std::size_t n : kLens) {
        auto a = rand_vec(rng, n), b = rand_vec(rng, n);

        // double-precision reference bounds the truth
        double dref = 0.0, sref = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dref += double(a[i]) * double(b[i]);
            sref += double(a[i]);
        }

        kern::force_isa(kern::Isa::scalar);
        const float dot_s = kern::dot(a.data(), b.data(), n);
        const float sum_s = kern::sum(a.data(), n);
        kern::force_isa(kern::detect_best_isa());
        const float dot_v = kern::dot(a.data(), b.data(), n);
        const float sum_v = kern::sum(a.data(), n);

        const double tol = 1e-5 * (1.0 + double(n));
        CHECK(std::abs(double(dot_s) - double(dot_v)) < tol);
        CHECK(std::abs(double(sum_s) - double(sum_v)) < tol);
        CHECK(std::abs(double(dot_v) - dref) < tol);
        CHECK(std::abs(double(sum_v) - sref) < tol);
    }
}

TEST_CASE("axpy and relu_backward accumulate identically across lanes") {
    if (!simd_available()) return;
    IsaGuard guard;
    Rng rng(43);
    for (std::size_t n : kLens) {
        auto x = rand_vec(rng, n), y0 = rand_vec(rng, n), g = rand_vec(rng, n);

        std::vector<float> ys = y0, yv = y0;
        kern::force_isa(kern::Isa::scalar);
        kern::axpy(0.9f, x.data(), ys.data(), n);
        kern::force_isa(kern::detect_best_isa());
        kern::axpy(0.9f, x.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(ys[i] - yv[i]) <= 1e-6f * (1.0f + std::abs(ys[i])));

        std::vector<float> gs(n, 0.5f), gv(n, 0.5f);
        kern::force_isa(kern::Isa::scalar);
        kern::relu_backward(x.data(), g.data(), gs.data(), n);
        kern::force_isa(kern::detect_best_isa());
        kern::relu_backward(x.data(), g.data(), gv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(gs[i] == gv[i]);
    }
}

TEST_CASE("double-precision kernels match plain loops") {
    Rng rng(44);
    const std::size_t n = 53;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = rng.uniform(-1, 1);
        b[i] = rng.uniform(-1, 1);
    }
    double ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) ref += a[i] * b[i];
    CHECK(kern::dot(a.data(), b.data(), n) == doctest::Approx(ref).epsilon(1e-12));
}
