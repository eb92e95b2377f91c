#include "sqa/gemm.hpp"

#include <algorithm>
#include <cstring>

#include "sqa/kernels.hpp"
#include "sqa/parallel.hpp"

namespace sqa {

namespace {

// Work below this many multiply-accumulates is not worth handing to the pool.
constexpr std::int64_t kParallelMacThreshold = 1 << 20;

template <typename T>
void gemm_nn_impl(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
                  bool accumulate) {
    // B is k*n and C is m*n. When B dwarfs C, sweep the C block repeatedly
    // and stream each B row exactly once; otherwise keep one C row hot.
    const bool c_resident = k > 4 * m;
    auto rows = [&](std::int64_t i0, std::int64_t i1) {
        if (!accumulate)
            std::fill(c + i0 * n, c + i1 * n, T(0));
        if (c_resident) {
            for (std::int64_t p = 0; p < k; ++p) {
                const T* brow = b + p * n;
                for (std::int64_t i = i0; i < i1; ++i) {
                    const T av = a[i * k + p];
                    if (av != T(0)) kern::axpy(av, brow, c + i * n, std::size_t(n));
                }
            }
        } else {
            for (std::int64_t i = i0; i < i1; ++i) {
                const T* arow = a + i * k;
                T* crow = c + i * n;
                for (std::int64_t p = 0; p < k; ++p) {
                    const T av = arow[p];
                    if (av != T(0)) kern::axpy(av, b + p * n, crow, std::size_t(n));
                }
            }
        }
    };
    if (m * n * k >= kParallelMacThreshold)
        parallel_rows(m, rows);
    else
        rows(0, m);
}

template <typename T>
void gemm_nt_impl(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
                  bool accumulate) {
    // A is m*k and B is n*k. When B dwarfs A, stream B rows once against the
    // resident A block; otherwise keep one A row hot across all of B.
    const bool a_resident = n > 4 * m;
    if (a_resident) {
        auto cols = [&](std::int64_t j0, std::int64_t j1) {
            for (std::int64_t j = j0; j < j1; ++j) {
                const T* brow = b + j * k;
                for (std::int64_t i = 0; i < m; ++i) {
                    const T d = kern::dot(a + i * k, brow, std::size_t(k));
                    c[i * n + j] = accumulate ? c[i * n + j] + d : d;
                }
            }
        };
        if (m * n * k >= kParallelMacThreshold)
            parallel_rows(n, cols);
        else
            cols(0, n);
        return;
    }
    auto rows = [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            const T* arow = a + i * k;
            T* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) {
                const T d = kern::dot(arow, b + j * k, std::size_t(k));
                crow[j] = accumulate ? crow[j] + d : d;
            }
        }
    };
    if (m * n * k >= kParallelMacThreshold)
        parallel_rows(m, rows);
    else
        rows(0, m);
}

}  // namespace

void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
             float* c, bool accumulate) {
    gemm_nn_impl(m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
             float* c, bool accumulate) {
    gemm_nt_impl(m, n, k, a, b, c, accumulate);
}
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
             double* c, bool accumulate) {
    gemm_nn_impl(m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
             double* c, bool accumulate) {
    gemm_nt_impl(m, n, k, a, b, c, accumulate);
}

}  // namespace sqa
