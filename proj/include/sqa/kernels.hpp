#pragma once

#include <cstddef>
#include <string>

namespace sqa::kern {

// Instruction-set lane for the float32 inner loops. The best supported lane
// is detected once at startup; force_isa() overrides it (tests use this to
// compare paths). Double-precision variants always run the scalar reference —
// they back the gradient-checking path where throughput is irrelevant.
enum class Isa {
    scalar = 0,
    avx2 = 1,
    neon = 2,
};

Isa detect_best_isa();
Isa active_isa();
void force_isa(Isa isa);  // throws ConfigError if unsupported on this CPU
std::string isa_name(Isa isa);

// ---- float32 primitives (dispatched) ----
float dot(const float* a, const float* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);  // y += alpha*x
void add(const float* a, const float* b, float* out, std::size_t n);
void sub(const float* a, const float* b, float* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void scale(float alpha, const float* x, float* out, std::size_t n);
float sum(const float* x, std::size_t n);
void relu(const float* x, float* out, std::size_t n);
void relu_backward(const float* x, const float* gy, float* gx, std::size_t n);

// ---- float64 reference variants (always scalar) ----
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(double alpha, const double* x, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_backward(const double* x, const double* gy, double* gx, std::size_t n);

}  // namespace sqa::kern
