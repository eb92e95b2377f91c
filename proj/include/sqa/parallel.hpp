#pragma once

#include <cstdint>
#include <functional>

namespace sqa {

// Deterministic data-parallel row splitting. Each row's arithmetic runs on
// exactly one worker in unchanged order, so results are bit-identical for any
// worker count. Worker count is fixed per process.
int compute_threads();
void set_compute_threads(int n);

// Invokes fn(begin, end) over a static partition of [0, rows).
void parallel_rows(std::int64_t rows, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace sqa
