#pragma once

#include <cstddef>

// Internal kernel variants. The scalar templates are the reference semantics;
// SIMD variants must agree with them within accumulation-order rounding and
// are equivalence-tested against them.

namespace sqa::kern::detail {

template <typename T>
inline T dot_scalar(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
inline void axpy_scalar(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
inline void add_scalar_k(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
inline void sub_scalar_k(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
inline void mul_scalar_k(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
inline void scale_scalar_k(T alpha, const T* x, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
inline T sum_scalar(const T* x, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
inline void relu_scalar(const T* x, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
inline void relu_backward_scalar(const T* x, const T* gy, T* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (x[i] > T(0)) gx[i] += gy[i];
}

#if defined(__x86_64__) || defined(_M_X64)
#define SQA_KERN_HAVE_AVX2 1
float dot_avx2(const float* a, const float* b, std::size_t n);
void axpy_avx2(float alpha, const float* x, float* y, std::size_t n);
void add_avx2(const float* a, const float* b, float* out, std::size_t n);
void sub_avx2(const float* a, const float* b, float* out, std::size_t n);
void mul_avx2(const float* a, const float* b, float* out, std::size_t n);
void scale_avx2(float alpha, const float* x, float* out, std::size_t n);
float sum_avx2(const float* x, std::size_t n);
void relu_avx2(const float* x, float* out, std::size_t n);
void relu_backward_avx2(const float* x, const float* gy, float* gx, std::size_t n);
#endif

#if defined(__aarch64__)
#define SQA_KERN_HAVE_NEON 1
float dot_neon(const float* a, const float* b, std::size_t n);
void axpy_neon(float alpha, const float* x, float* y, std::size_t n);
void add_neon(const float* a, const float* b, float* out, std::size_t n);
void sub_neon(const float* a, const float* b, float* out, std::size_t n);
void mul_neon(const float* a, const float* b, float* out, std::size_t n);
void scale_neon(float alpha, const float* x, float* out, std::size_t n);
float sum_neon(const float* x, std::size_t n);
void relu_neon(const float* x, float* out, std::size_t n);
void relu_backward_neon(const float* x, const float* gy, float* gx, std::size_t n);
#endif

}  // namespace sqa::kern::detail
