#include "sqa/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace sqa {

namespace {

std::atomic<int> g_threads{0};  // 0: decide from hardware on first use

// Persistent workers fed one (begin, end) slice each; the caller runs the
// first slice itself and waits for the rest.
class WorkerPool {
public:
    explicit WorkerPool(int workers) {
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this] { worker_loop(); });
    }
    ~WorkerPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(const std::vector<std::pair<std::int64_t, std::int64_t>>& slices,
             const std::function<void(std::int64_t, std::int64_t)>& fn) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            fn_ = &fn;
            slices_ = &slices;
            next_ = 1;  // slice 0 belongs to the caller
            pending_ = int(slices.size()) - 1;
        }
        cv_.notify_all();
        fn(slices[0].first, slices[0].second);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        fn_ = nullptr;
        slices_ = nullptr;
        lk.unlock();
    }

private:
    void worker_loop() {
        for (;;) {
            std::function<void(std::int64_t, std::int64_t)> const* fn = nullptr;
            std::pair<std::int64_t, std::int64_t> slice{0, 0};
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] {
                    return stop_ || (slices_ && next_ < int(slices_->size()));
                });
                if (stop_) return;
                slice = (*slices_)[std::size_t(next_++)];
                fn = fn_;
            }
            (*fn)(slice.first, slice.second);
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(std::int64_t, std::int64_t)>* fn_ = nullptr;
    const std::vector<std::pair<std::int64_t, std::int64_t>>* slices_ = nullptr;
    int next_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

WorkerPool& pool(int workers) {
    static WorkerPool p(workers);
    return p;
}

// Serializes pool use. Contending callers (e.g. evaluation shards that each
// reach a parallel GEMM) run their slices inline instead; the row partition
// never changes per-row arithmetic, so results are identical either way.
std::mutex g_pool_mutex;

}  // namespace

int compute_threads() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = int(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
        if (n > 8) n = 8;
        g_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_compute_threads(int n) { g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

void parallel_rows(std::int64_t rows,
                   const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const int nt = compute_threads();
    if (nt <= 1 || rows < 2) {
        fn(0, rows);
        return;
    }
    if (!g_pool_mutex.try_lock()) {
        fn(0, rows);
        return;
    }
    const auto parts = std::int64_t(std::min<std::int64_t>(nt, rows));
    std::vector<std::pair<std::int64_t, std::int64_t>> slices;
    const std::int64_t chunk = (rows + parts - 1) / parts;
    for (std::int64_t b = 0; b < rows; b += chunk)
        slices.emplace_back(b, std::min(rows, b + chunk));
    pool(nt - 1).run(slices, fn);
    g_pool_mutex.unlock();
}

}  // namespace sqa
