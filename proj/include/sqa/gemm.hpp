#pragma once

#include <cstdint>

namespace sqa {

// Row-major matrix products over contiguous buffers, built on the dispatched
// kernel primitives. When accumulate is false the destination is overwritten.
//
//   gemm_nn:  C[M,N] (+)= A[M,K] * B[K,N]
//   gemm_nt:  C[M,N] (+)= A[M,K] * B[N,K]^T
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
             float* c, bool accumulate);
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
             float* c, bool accumulate);
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
             double* c, bool accumulate);

}  // namespace sqa
