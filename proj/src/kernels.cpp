#include "sqa/kernels.hpp"

#include <atomic>

#include "kernels_detail.hpp"
#include "sqa/error.hpp"

namespace sqa::kern {

namespace {

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if defined(SQA_KERN_HAVE_AVX2)
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
        case Isa::neon:
#if defined(SQA_KERN_HAVE_NEON)
            return true;
#else
            return false;
#endif
    }
    return false;
}

std::atomic<Isa> g_active{[] {
    Isa best = Isa::scalar;
    if (isa_supported(Isa::avx2)) best = Isa::avx2;
    if (isa_supported(Isa::neon)) best = Isa::neon;
    return best;
}()};

}  // namespace

Isa detect_best_isa() {
    if (isa_supported(Isa::neon)) return Isa::neon;
    if (isa_supported(Isa::avx2)) return Isa::avx2;
    return Isa::scalar;
}

Isa active_isa() { return g_active.load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
    if (!isa_supported(isa))
        throw ConfigError("kernel ISA '" + isa_name(isa) + "' is not supported on this CPU");
    g_active.store(isa, std::memory_order_relaxed);
}

std::string isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "?";
}

// Dispatch wrappers. The switch costs a predictable branch per call, which is
// noise next to the loop bodies these guard.

#if defined(SQA_KERN_HAVE_AVX2)
#define SQA_DISPATCH(fn, ...)                              \
    switch (g_active.load(std::memory_order_relaxed)) {    \
        case Isa::avx2: return detail::fn##_avx2(__VA_ARGS__); \
        default: return detail::fn##_scalar(__VA_ARGS__);  \
    }
#elif defined(SQA_KERN_HAVE_NEON)
#define SQA_DISPATCH(fn, ...)                              \
    switch (g_active.load(std::memory_order_relaxed)) {    \
        case Isa::neon: return detail::fn##_neon(__VA_ARGS__); \
        default: return detail::fn##_scalar(__VA_ARGS__);  \
    }
#else
#define SQA_DISPATCH(fn, ...) return detail::fn##_scalar(__VA_ARGS__);
#endif

float dot(const float* a, const float* b, std::size_t n) { SQA_DISPATCH(dot, a, b, n) }
void axpy(float alpha, const float* x, float* y, std::size_t n) { SQA_DISPATCH(axpy, alpha, x, y, n) }
float sum(const float* x, std::size_t n) { SQA_DISPATCH(sum, x, n) }
void relu_backward(const float* x, const float* gy, float* gx, std::size_t n) {
    SQA_DISPATCH(relu_backward, x, gy, gx, n)
}

#if defined(SQA_KERN_HAVE_AVX2)
#define SQA_DISPATCH_K(fn, ...)                            \
    switch (g_active.load(std::memory_order_relaxed)) {    \
        case Isa::avx2: return detail::fn##_avx2(__VA_ARGS__); \
        default: return detail::fn##_scalar_k(__VA_ARGS__); \
    }
#elif defined(SQA_KERN_HAVE_NEON)
#define SQA_DISPATCH_K(fn, ...)                            \
    switch (g_active.load(std::memory_order_relaxed)) {    \
        case Isa::neon: return detail::fn##_neon(__VA_ARGS__); \
        default: return detail::fn##_scalar_k(__VA_ARGS__); \
    }
#else
#define SQA_DISPATCH_K(fn, ...) return detail::fn##_scalar_k(__VA_ARGS__);
#endif

void add(const float* a, const float* b, float* out, std::size_t n) { SQA_DISPATCH_K(add, a, b, out, n) }
void sub(const float* a, const float* b, float* out, std::size_t n) { SQA_DISPATCH_K(sub, a, b, out, n) }
void mul(const float* a, const float* b, float* out, std::size_t n) { SQA_DISPATCH_K(mul, a, b, out, n) }
void scale(float alpha, const float* x, float* out, std::size_t n) { SQA_DISPATCH_K(scale, alpha, x, out, n) }

void relu(const float* x, float* out, std::size_t n) { SQA_DISPATCH(relu, x, out, n) }

// float64: scalar reference only.
double dot(const double* a, const double* b, std::size_t n) { return detail::dot_scalar(a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { detail::axpy_scalar(alpha, x, y, n); }
void add(const double* a, const double* b, double* out, std::size_t n) { detail::add_scalar_k(a, b, out, n); }
void sub(const double* a, const double* b, double* out, std::size_t n) { detail::sub_scalar_k(a, b, out, n); }
void mul(const double* a, const double* b, double* out, std::size_t n) { detail::mul_scalar_k(a, b, out, n); }
void scale(double alpha, const double* x, double* out, std::size_t n) { detail::scale_scalar_k(alpha, x, out, n); }
double sum(const double* x, std::size_t n) { return detail::sum_scalar(x, n); }
void relu(const double* x, double* out, std::size_t n) { detail::relu_scalar(x, out, n); }
void relu_backward(const double* x, const double* gy, double* gx, std::size_t n) {
    detail::relu_backward_scalar(x, gy, gx, n);
}

}  // namespace sqa::kern
