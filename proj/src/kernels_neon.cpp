// NEON float32 kernels for aarch64, where Advanced SIMD is baseline.

#include "kernels_detail.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

namespace sqa::kern::detail {

float dot_neon(const float* a, const float* b, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
    float out = vaddvq_f32(acc);
    for (; i < n; ++i) out += a[i] * b[i];
    return out;
}

void axpy_neon(float alpha, const float* x, float* y, std::size_t n) {
    const float32x4_t va = vdupq_n_f32(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float32x4_t vy = vld1q_f32(y + i);
        vy = vfmaq_f32(vy, va, vld1q_f32(x + i));
        vst1q_f32(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_neon(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(out + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_neon(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(out + i, vsubq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_neon(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_neon(float alpha, const float* x, float* out, std::size_t n) {
    const float32x4_t va = vdupq_n_f32(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(out + i, vmulq_f32(va, vld1q_f32(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}

float sum_neon(const float* x, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(x + i));
    float out = vaddvq_f32(acc);
    for (; i < n; ++i) out += x[i];
    return out;
}

void relu_neon(const float* x, float* out, std::size_t n) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(out + i, vmaxq_f32(vld1q_f32(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward_neon(const float* x, const float* gy, float* gx, std::size_t n) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        uint32x4_t mask = vcgtq_f32(vld1q_f32(x + i), zero);
        float32x4_t g = vreinterpretq_f32_u32(
            vandq_u32(vreinterpretq_u32_f32(vld1q_f32(gy + i)), mask));
        vst1q_f32(gx + i, vaddq_f32(vld1q_f32(gx + i), g));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0f) gx[i] += gy[i];
}

}  // namespace sqa::kern::detail

#endif  // aarch64
