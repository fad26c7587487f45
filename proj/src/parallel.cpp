// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace gsnerf {
namespace {

int g_num_threads = []() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}();

// Lazy persistent pool. Workers pull chunk indices from a shared counter;
// chunk boundaries are fixed up front so scheduling order never affects
// results.
class Pool {
public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(int workers, int total_chunks,
           const std::function<void(int)>& chunk_fn) {
    std::unique_lock<std::mutex> lk(mutex_);
    ensure_workers(workers - 1);
    chunk_fn_ = &chunk_fn;
    next_chunk_.store(0);
    total_chunks_ = total_chunks;
    pending_ = total_chunks;
    ++generation_;
    cv_work_.notify_all();
    // The calling thread participates too.
    lk.unlock();
    work_loop();
    lk.lock();
    cv_done_.wait(lk, [&] { return pending_ == 0; });
    chunk_fn_ = nullptr;
  }

private:
  void ensure_workers(int n) {
    while (static_cast<int>(threads_.size()) < n) {
      threads_.emplace_back([this] { worker_main(); });
    }
  }

  void worker_main() {
    uint64_t seen_gen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mutex_);
        cv_work_.wait(lk, [&] { return stop_ || generation_ != seen_gen; });
        if (stop_) return;
        seen_gen = generation_;
      }
      work_loop();
    }
  }

  void work_loop() {
    for (;;) {
      const int c = next_chunk_.fetch_add(1);
      if (c >= total_chunks_) return;
      (*chunk_fn_)(c);
      std::unique_lock<std::mutex> lk(mutex_);
      if (--pending_ == 0) cv_done_.notify_all();
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(mutex_);
      stop_ = true;
      cv_work_.notify_all();
    }
    for (auto& t : threads_) t.join();
  }

  std::mutex mutex_;
  std::condition_variable cv_work_;
  std::condition_variable cv_done_;
  std::vector<std::thread> threads_;
  const std::function<void(int)>* chunk_fn_ = nullptr;
  std::atomic<int> next_chunk_{0};
  int total_chunks_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace

void set_num_threads(int n) { g_num_threads = std::max(1, n); }

int num_threads() { return g_num_threads; }

void parallel_chunks(int64_t n, int chunks,
                     const std::function<void(int64_t, int64_t, int)>& fn) {
  if (n <= 0) return;
  chunks = static_cast<int>(std::min<int64_t>(chunks, n));
  if (chunks <= 1 || g_num_threads <= 1) {
    const int64_t step = (n + chunks - 1) / chunks;
    for (int c = 0; c < chunks; ++c) {
      const int64_t b = c * step;
      const int64_t e = std::min<int64_t>(n, b + step);
      if (b < e) fn(b, e, c);
    }
    return;
  }
  const int64_t step = (n + chunks - 1) / chunks;
  auto chunk_fn = [&](int c) {
    const int64_t b = c * step;
    const int64_t e = std::min<int64_t>(n, b + step);
    if (b < e) fn(b, e, c);
  };
  Pool::instance().run(g_num_threads, chunks, chunk_fn);
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t, int)>& fn) {
  parallel_chunks(n, g_num_threads, fn);
}

}  // namespace gsnerf
